#![allow(dead_code)]

use sliceoff_core::model::{EconomicParams, RadioParams, SliceCatalog, SliceDecision};
use sliceoff_core::scenario::{Range, RegionSpec, Scenario};
use sliceoff_core::traffic::TrafficSeries;

pub fn radio() -> RadioParams {
    RadioParams::from_db(100.0, -110.0, -60.0, 2.0).unwrap()
}

pub fn econ(long_slots: usize, short_slots: usize) -> EconomicParams {
    EconomicParams::new(1.0, 1.0, long_slots, short_slots).unwrap()
}

pub fn standard_catalogs() -> Vec<SliceCatalog> {
    vec![
        SliceCatalog::linear("R1", 20, 3.0, 16, 2.0, 2e9).unwrap(),
        SliceCatalog::linear("R2", 25, 2.0, 12, 4.0, 2e9).unwrap(),
        SliceCatalog::linear("R3", 30, 1.0, 8, 6.0, 2e9).unwrap(),
    ]
}

pub fn standard_scenario(long_slots: usize, short_slots: usize) -> Scenario {
    let ranges = [((100.0, 300.0), (400.0, 600.0)), ((300.0, 500.0), (100.0, 200.0)), ((500.0, 700.0), (50.0, 100.0))];
    Scenario {
        regions: standard_catalogs()
            .into_iter()
            .zip(ranges)
            .map(|(catalog, (d, e))| RegionSpec {
                catalog,
                data_kb: Range::new(d.0, d.1),
                density_cycles_per_bit: Range::new(e.0, e.1),
            })
            .collect(),
        radio: radio(),
        econ: econ(long_slots, short_slots),
        distance_m: Range::new(1.0, 2000.0),
        priorities: vec![1, 2, 3],
        n_max: 10,
        slot_duration_s: 600.0,
    }
}

/// One region with every task attribute pinned: 200 KB, 500 cycles/bit,
/// 1000 m, priority 2.
pub fn pinned_scenario(long_slots: usize, short_slots: usize) -> Scenario {
    Scenario {
        regions: vec![RegionSpec {
            catalog: SliceCatalog::linear("R1", 20, 3.0, 16, 2.0, 2e9).unwrap(),
            data_kb: Range::new(200.0, 200.0),
            density_cycles_per_bit: Range::new(500.0, 500.0),
        }],
        radio: radio(),
        econ: econ(long_slots, short_slots),
        distance_m: Range::new(1000.0, 1000.0),
        priorities: vec![2],
        n_max: 10,
        slot_duration_s: 600.0,
    }
}

pub fn constant_traffic(scenario: &Scenario, count: u32) -> TrafficSeries {
    let len = scenario.econ.long_slots * scenario.econ.short_slots_per_long;
    TrafficSeries::new(scenario.region_ids(), vec![vec![count; len]; scenario.regions.len()], 600.0).unwrap()
}

pub fn decisions(scenario: &Scenario, bw_index: usize, vm_index: usize) -> Vec<SliceDecision> {
    scenario
        .regions
        .iter()
        .map(|r| SliceDecision::from_indices(&r.catalog, bw_index, vm_index).unwrap())
        .collect()
}
