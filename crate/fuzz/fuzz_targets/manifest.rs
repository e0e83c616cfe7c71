#![no_main]

use std::path::Component;

use ddnet::data::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(m) = Manifest::parse(text, "root") {
        // Accepted entries never escape the root.
        for e in &m.entries {
            for p in [&e.image, &e.mask] {
                assert!(p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)));
            }
        }
        let again = Manifest::parse(&m.to_text(), "root").expect("serialized manifest parses");
        assert_eq!(again.entries, m.entries);
    }
});
