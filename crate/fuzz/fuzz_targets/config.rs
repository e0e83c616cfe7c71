#![no_main]

use ddnet::harness::TrainConfig;
use ddnet::model::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(c) = TrainConfig::from_toml(text) {
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).expect("round trip"), c);
    }
    if let Ok(m) = ModelConfig::from_toml(text) {
        assert_eq!(ModelConfig::from_toml(&m.to_toml()).expect("round trip"), m);
    }
});
