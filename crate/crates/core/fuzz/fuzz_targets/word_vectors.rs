#![no_main]
use ansemb::corpus::{parse_word_embeddings, write_word_embeddings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_word_embeddings(data, "fuzz") {
        let text = write_word_embeddings(&table);
        let again = parse_word_embeddings(text.as_bytes(), "fuzz").expect("written table must parse");
        assert_eq!(table, again);
    }
});
