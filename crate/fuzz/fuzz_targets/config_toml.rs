#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = limper_cli::input::parse_config(text) {
        // validation may reject the values, but must not panic
        let _ = config.construction();
    }
});
