#![no_main]

use libfuzzer_sys::fuzz_target;

// Anything that parses must also simulate without panicking. Budgets are
// clamped so pathological-but-valid inputs stay cheap.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(mut scenario) = lcp_sim::parse_scenario(text) else {
        return;
    };
    if scenario.graph.node_count() > 12 {
        return;
    }
    scenario.max_ticks = scenario.max_ticks.min(12);
    scenario.probe_ticks = scenario.probe_ticks.min(12);
    scenario.submits.truncate(64);
    let _ = lcp_sim::run(&scenario);
});
