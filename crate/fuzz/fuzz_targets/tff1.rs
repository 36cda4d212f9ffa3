#![no_main]

use libfuzzer_sys::fuzz_target;
use tempseg::featio::FeatureSequence;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = FeatureSequence::decode(data, "fuzz") {
        // Whatever decodes must encode back to the same bytes.
        assert_eq!(seq.encode().unwrap(), data);
    }
});
