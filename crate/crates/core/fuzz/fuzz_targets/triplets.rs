#![no_main]
use ansemb::corpus::parse_triplets;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(triplets) = parse_triplets(data, "fuzz") {
        for t in &triplets {
            t.validate().expect("parsed triplets are valid");
        }
    }
});
