#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::experiment::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = parse_config(text) {
        assert!(cfg.validate().is_ok());
        let _ = cfg.n_steps();
    }
});
