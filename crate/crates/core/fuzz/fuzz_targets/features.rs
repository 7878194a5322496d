#![no_main]
use ansemb::corpus::{parse_features, write_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(store) = parse_features(data, "fuzz") {
        let text = write_features(&store);
        let again = parse_features(text.as_bytes(), "fuzz").expect("written features must parse");
        assert_eq!(store, again);
    }
});
