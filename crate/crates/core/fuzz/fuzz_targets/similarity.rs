#![no_main]
use ansemb::corpus::parse_similarity_table;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_similarity_table(data, "fuzz");
});
