#![no_main]
use ansemb::trainer::parse_train_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = parse_train_config(text) {
        let again = parse_train_config(&config.to_text()).expect("printed config must parse");
        assert_eq!(config.to_text(), again.to_text());
    }
});
