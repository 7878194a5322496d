#![no_main]
use ansemb::numerics::container::Container;
use ansemb::trainer::load_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = Container::parse(text) {
        let again = Container::parse(&c.to_text()).expect("printed container must parse");
        assert_eq!(c.to_text(), again.to_text());
    }
    let _ = load_checkpoint(text);
});
