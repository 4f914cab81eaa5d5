#![no_main]

use libfuzzer_sys::fuzz_target;
use swingup::eval::RobustnessReport;

// The table reader must reject malformed input without panicking; an
// accepted report round-trips through its own CSV encoding.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = RobustnessReport::from_csv_str(text) {
        let again =
            RobustnessReport::from_csv_str(&report.to_csv()).expect("round trip");
        assert_eq!(again, report);
    }
});
