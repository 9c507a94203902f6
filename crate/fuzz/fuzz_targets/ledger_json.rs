#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ledger) = limper_cli::input::parse_ledger(text) {
        let again = limper_cli::input::parse_ledger(&ledger.to_json()).expect("a parsed ledger re-parses");
        assert_eq!(again, ledger);
    }
});
