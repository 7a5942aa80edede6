//! Static description of a multi-edge deployment: regions with their slice
//! catalogs and task-attribute ranges, radio and economic parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EconomicParams, Priority, RadioParams, SliceCatalog, TaskSpec};
use crate::slicer::TaskStats;

pub const BITS_PER_KB: f64 = 8000.0;

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::config(format!("{what}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub catalog: SliceCatalog,
    pub data_kb: Range,
    pub density_cycles_per_bit: Range,
}

impl RegionSpec {
    pub fn id(&self) -> &str {
        &self.catalog.region_id
    }

    /// Task statistics used before any task has been observed: midpoints of
    /// the attribute ranges.
    pub fn cold_start_stats(&self, distance: &Range) -> TaskStats {
        TaskStats {
            mean_data_bits: self.data_kb.midpoint() * BITS_PER_KB,
            mean_density: self.density_cycles_per_bit.midpoint(),
            mean_distance_m: distance.midpoint(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub regions: Vec<RegionSpec>,
    pub radio: RadioParams,
    pub econ: EconomicParams,
    pub distance_m: Range,
    pub priorities: Vec<u8>,
    /// Upper bound on active users per region and short slot; sets the
    /// padded width of the environment state.
    pub n_max: usize,
    pub slot_duration_s: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::config("scenario has no regions"));
        }
        for r in &self.regions {
            r.catalog.validate()?;
            r.data_kb.validate("data_kb")?;
            r.density_cycles_per_bit.validate("density")?;
            if r.data_kb.lo <= 0.0 || r.density_cycles_per_bit.lo < 0.0 {
                return Err(Error::config(format!("region {}: task ranges must be positive", r.id())));
            }
        }
        let mut ids: Vec<_> = self.regions.iter().map(RegionSpec::id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.regions.len() {
            return Err(Error::config("duplicate region ids"));
        }
        self.radio.validate()?;
        self.econ.validate()?;
        self.distance_m.validate("distance_m")?;
        if self.distance_m.lo < 1.0 {
            return Err(Error::config("distances must be >= 1 m"));
        }
        if self.priorities.is_empty() {
            return Err(Error::config("at least one priority level is required"));
        }
        for &p in &self.priorities {
            Priority::new(p)?;
        }
        if self.n_max == 0 {
            return Err(Error::config("n_max must be >= 1"));
        }
        if !(self.slot_duration_s > 0.0) {
            return Err(Error::config("slot duration must be > 0"));
        }
        Ok(())
    }

    pub fn catalogs(&self) -> Vec<SliceCatalog> {
        self.regions.iter().map(|r| r.catalog.clone()).collect()
    }

    pub fn region_ids(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.id().to_string()).collect()
    }

    pub fn cold_start_stats(&self) -> Vec<TaskStats> {
        self.regions.iter().map(|r| r.cold_start_stats(&self.distance_m)).collect()
    }

    /// Draws one task of region `region` from the configured ranges.
    pub fn sample_task(&self, region: usize, rng: &mut impl Rng) -> TaskSpec {
        let spec = &self.regions[region];
        let data_bits = spec.data_kb.sample(rng) * BITS_PER_KB;
        let density = spec.density_cycles_per_bit.sample(rng);
        let level = self.priorities[rng.random_range(0..self.priorities.len())];
        let distance_m = self.distance_m.sample(rng);
        TaskSpec {
            data_bits,
            density_cycles_per_bit: density,
            priority: Priority::new(level).expect("validated scenario"),
            distance_m,
        }
    }

    pub fn with_max_delay(&self, max_delay_s: f64) -> Self {
        let mut s = self.clone();
        s.econ.max_delay_s = max_delay_s;
        s
    }

    pub fn max_bandwidth_hz(&self) -> f64 {
        self.regions
            .iter()
            .map(|r| r.catalog.max_bandwidth_hz())
            .fold(0.0, f64::max)
    }

    pub fn max_vms(&self) -> u32 {
        self.regions.iter().map(|r| r.catalog.max_vms()).max().unwrap_or(1)
    }
}
