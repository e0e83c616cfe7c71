#![no_main]

use ddnet::harness::EpochLog;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|line: &str| {
    if let Ok(entry) = EpochLog::parse(line) {
        let back = EpochLog::parse(&entry.to_string()).expect("printed line parses");
        assert_eq!(back.epoch, entry.epoch);
        assert_eq!(back.report.is_some(), entry.report.is_some());
    }
});
