#![no_main]

use libfuzzer_sys::fuzz_target;
use swingup::config::parse_config;

// Config parsing (TOML body plus dotted-path overrides) must never panic.
// A NUL byte splits the input into file text and one override argument.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    match text.split_once('\0') {
        Some((body, along)) => {
            let _ = parse_config(body, &[along.to_string()]);
        }
        None => {
            let _ = parse_config(text, &[]);
        }
    }
});
