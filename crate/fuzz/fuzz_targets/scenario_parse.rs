#![no_main]

use libfuzzer_sys::fuzz_target;

// The scenario parser is the only surface that consumes untrusted input:
// it must reject garbage with an error, never a panic.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = lcp_sim::parse_scenario(text);
    }
});
