#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::experiment::{emit_config, parse_config};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = parse_config(text) else {
        return;
    };
    let emitted = emit_config(&cfg).expect("accepted config must serialize");
    let again = parse_config(&emitted).expect("emitted config must parse");
    assert_eq!(again, cfg);
});
