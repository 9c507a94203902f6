//! Replays the fuzz seed corpora through the parsers with the invariants the
//! fuzz targets assert.

use std::path::PathBuf;

use limper_cli::input::{parse_config, parse_ledger, parse_sampler};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn sampler_seeds() {
    let mut parsed = 0;
    for (path, text) in seeds("sampler_json") {
        if let Ok(f) = parse_sampler(&text) {
            assert!(f.values().iter().all(|v| v.is_finite()), "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 4);
}

#[test]
fn config_seeds() {
    for (path, text) in seeds("config_toml") {
        if let Ok(config) = parse_config(&text) {
            let _ = config.construction();
        } else {
            assert!(path.ends_with("partial.toml"), "{}", path.display());
        }
    }
}

#[test]
fn ledger_seeds_round_trip() {
    for (path, text) in seeds("ledger_json") {
        let ledger = parse_ledger(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_ledger(&ledger.to_json()).unwrap(), ledger);
    }
}
