#![no_main]

use joule_fem_cli::config::{parse_config, KEYS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    match parse_config(text) {
        Ok(cfg) => {
            let found = KEYS.iter().filter(|k| cfg.get(k).is_some()).count();
            assert_eq!(found, cfg.len());
        }
        Err(e) => assert!(e.line >= 1 && e.line <= text.lines().count()),
    }
});
