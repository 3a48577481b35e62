#![no_main]

use libfuzzer_sys::fuzz_target;
use roughflow::flow::{decode_dump, encode_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(dump) = decode_dump(data) {
        assert_eq!(dump.rows.len(), dump.n_rows() * dump.width());
        let bytes = encode_dump(&dump);
        let again = decode_dump(&bytes).expect("re-encoded dump must decode");
        assert_eq!(again.d, dump.d);
        assert_eq!(again.rows.len(), dump.rows.len());
    }
});
