#![no_main]

use libfuzzer_sys::fuzz_target;
use limper::periodic::band_spectrum;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(sampler) = limper_cli::input::parse_sampler(text) else { return };
    assert!(sampler.values().iter().all(|v| v.is_finite()));
    // short periods are cheap enough to solve on every input
    if sampler.period() <= 16 && sampler.sup_norm() < 1e6 {
        if let Ok(s) = band_spectrum(&sampler, 1e-9) {
            assert!(s.band_count() >= 1 && s.band_count() <= sampler.period());
        }
    }
});
