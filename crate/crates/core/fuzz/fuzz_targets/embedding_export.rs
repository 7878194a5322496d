#![no_main]
use ansemb::evaluator::{format_embedding_export, parse_embedding_export};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(index) = parse_embedding_export(data, "fuzz") {
        let text = format_embedding_export(&index);
        let again = parse_embedding_export(text.as_bytes(), "fuzz").expect("written export must parse");
        assert_eq!(index.answers(), again.answers());
    }
});
