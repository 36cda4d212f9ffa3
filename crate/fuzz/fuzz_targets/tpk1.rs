#![no_main]

use libfuzzer_sys::fuzz_target;
use tempseg::tensor::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = decode_checkpoint(data) {
        let again = encode_checkpoint(&entries).unwrap();
        assert_eq!(decode_checkpoint(&again).unwrap().len(), entries.len());
    }
});
