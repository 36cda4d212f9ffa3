#![no_main]

use libfuzzer_sys::fuzz_target;
use tempseg::featio::parse_annotations;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(anns) = parse_annotations(text) {
            for a in &anns {
                a.segments.validate(a.duration).unwrap();
            }
        }
    }
});
