//! Fixtures shared by the benchmarks.

use hawkesnet::{
    build_design, preset, simulate, DesignCache, DesignConfig, EventData, ModelSpec, Preset,
};

pub const SUPPORT: f64 = 0.01;

pub fn model(setting: Preset, horizon: f64) -> ModelSpec {
    preset(&setting, 21, horizon, 1).expect("preset builds")
}

pub fn events(setting: Preset, horizon: f64) -> EventData {
    simulate(&model(setting, horizon), 1).expect("simulation runs")
}

pub fn cubic(m0: usize, m1: usize) -> DesignConfig {
    DesignConfig::new(4, m0, m1, SUPPORT)
}

pub fn design(events: &EventData, m0: usize, m1: usize) -> DesignCache {
    build_design(events, &cubic(m0, m1)).expect("design builds")
}
