#![no_main]

use libfuzzer_sys::fuzz_target;
use tempseg::infer::{encode_predictions, parse_predictions};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(preds) = parse_predictions(text) {
            // Float text may not round-trip to the bit, the structure must.
            let again = parse_predictions(&encode_predictions(&preds).unwrap()).unwrap();
            assert_eq!(again.len(), preds.len());
            for (a, b) in again.iter().zip(&preds) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.segments.len(), b.segments.len());
            }
        }
    }
});
