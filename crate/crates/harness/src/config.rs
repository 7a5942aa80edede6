//! TOML experiment configuration. The default file lives at
//! `configs/default.toml` and carries every scenario constant.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sliceoff_core::model::{EconomicParams, RadioParams, SliceCatalog};
use sliceoff_core::scenario::{Range, RegionSpec, Scenario};
use sliceoff_core::slicer::Aggregation;
use sliceoff_core::traffic::{rescale_counts, synthesize, synthesize_step, SyntheticTraffic, TrafficSeries};
use sliceoff_learn::agent::{AgentConfig, AgentKind};
use sliceoff_learn::predictor::{NaiveKind, PredictorConfig};

use crate::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub upload_power_mw: f64,
    pub noise_power_dbm: f64,
    pub gain_ref_db: f64,
    pub path_loss_exp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub id: String,
    pub bandwidth_tiers_mhz: Vec<f64>,
    pub bandwidth_costs: Vec<f64>,
    pub vm_tiers: Vec<u32>,
    pub vm_costs: Vec<f64>,
    pub vm_freq_hz: f64,
    pub data_kb: Range,
    pub density_cycles_per_bit: Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Users per region and short slot the agent is built for.
    pub n_max: usize,
    pub slot_duration_s: f64,
    pub long_slots: usize,
    pub short_slots_per_long: usize,
    pub max_delay_s: f64,
    pub reward_per_task: f64,
    pub priorities: Vec<u8>,
    pub distance_m: Range,
    pub radio: RadioConfig,
    pub regions: Vec<RegionConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficSource {
    Synthetic,
    Step,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub source: TrafficSource,
    #[serde(default)]
    pub path: Option<PathBuf>,
    pub seed: u64,
    pub history_days: usize,
    pub base: f64,
    pub amplitude: f64,
    pub noise_sd: f64,
    pub step_low: f64,
    pub step_high: f64,
    pub min_users: u32,
    pub max_users: u32,
    pub slots_per_day: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlicingConfig {
    pub omega: Vec<f64>,
    pub aggregation: Aggregation,
    pub moving_average_window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSection {
    /// Training episodes per agent.
    pub episodes: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub params: AgentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned forecast, dynamic slicing, dual-distillation agent.
    #[serde(rename = "sliceoff")]
    SliceOff,
    /// One slice decision from the historical mean, kept all day.
    StaticOff,
    /// Dynamic slicing with a twin-critic agent trained without a peer.
    Td3NoDistill,
    /// Dynamic slicing with a single-critic agent.
    Ddpg,
    /// Dynamic slicing from a last-value forecast.
    NaiveLastValue,
    /// Dynamic slicing from a moving-average forecast.
    NaiveMovingAverage,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::SliceOff,
        Method::StaticOff,
        Method::Td3NoDistill,
        Method::Ddpg,
        Method::NaiveLastValue,
        Method::NaiveMovingAverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SliceOff => "sliceoff",
            Method::StaticOff => "static_off",
            Method::Td3NoDistill => "td3_no_distill",
            Method::Ddpg => "ddpg",
            Method::NaiveLastValue => "naive_last_value",
            Method::NaiveMovingAverage => "naive_moving_average",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }

    pub fn agent_kind(self) -> AgentKind {
        match self {
            Method::Td3NoDistill => AgentKind::Td3NoDistill,
            Method::Ddpg => AgentKind::DdpgSingleCritic,
            _ => AgentKind::DualDistill,
        }
    }

    pub fn uses_predictor(self) -> bool {
        matches!(self, Method::SliceOff | Method::Td3NoDistill | Method::Ddpg)
    }

    /// Naive forecast kind for the naive-predictor variants.
    pub fn naive_kind(self, window: usize) -> Option<NaiveKind> {
        match self {
            Method::NaiveLastValue => Some(NaiveKind::LastValue),
            Method::NaiveMovingAverage => Some(NaiveKind::MovingAverage { window }),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn agent_kind_name(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::DualDistill => "dual_distill",
        AgentKind::Td3NoDistill => "td3_no_distill",
        AgentKind::DdpgSingleCritic => "ddpg",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Counts are multiplied by this factor and clipped to
    /// `round(n_max × factor)`, which also becomes the environment's user
    /// capacity. The agent handles the extra users in groups of `n_max`.
    pub traffic_multiplier: f64,
    #[serde(default)]
    pub predictor_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub agent_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TrafficMultiplier,
    MaxDelay,
    /// Sets the same delay ratio in every region.
    Omega,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TrafficMultiplier => "traffic_multiplier",
            SweepAxis::MaxDelay => "max_delay",
            SweepAxis::Omega => "omega",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [SweepAxis::TrafficMultiplier, SweepAxis::MaxDelay, SweepAxis::Omega]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub traffic: TrafficConfig,
    pub slicing: SlicingConfig,
    pub predictor: PredictorConfig,
    pub agent: AgentSection,
    pub experiment: RunSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    /// The bundled default configuration.
    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled default config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let t = &self.traffic;
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if s.long_slots == 0 || s.short_slots_per_long == 0 {
            return Err(Error::Config("long_slots and short_slots_per_long must be >= 1".into()));
        }
        if s.long_slots * s.short_slots_per_long != t.slots_per_day {
            return Err(Error::Config(format!(
                "one day has {} slots but long_slots × short_slots_per_long = {}",
                t.slots_per_day,
                s.long_slots * s.short_slots_per_long
            )));
        }
        if self.slicing.omega.len() != s.regions.len() {
            return Err(Error::Config("omega needs one entry per region".into()));
        }
        if self.slicing.omega.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::Config("omega values must lie in (0, 1)".into()));
        }
        if self.slicing.moving_average_window == 0 {
            return Err(Error::Config("moving_average_window must be >= 1".into()));
        }
        if self.predictor.horizon_slots != s.short_slots_per_long {
            return Err(Error::Config("predictor horizon must equal short_slots_per_long".into()));
        }
        if self.predictor.slots_per_day != t.slots_per_day {
            return Err(Error::Config("predictor and traffic disagree on slots_per_day".into()));
        }
        if t.history_days == 0 {
            return Err(Error::Config("history_days must be >= 1".into()));
        }
        if t.min_users > t.max_users || t.max_users as usize > s.n_max {
            return Err(Error::Config("user range must satisfy min_users <= max_users <= n_max".into()));
        }
        if t.source == TrafficSource::Csv && t.path.is_none() {
            return Err(Error::Config("csv traffic needs a path".into()));
        }
        if !(self.experiment.traffic_multiplier > 0.0) {
            return Err(Error::Config("traffic_multiplier must be > 0".into()));
        }
        if self.sweep.methods.is_empty() {
            return Err(Error::Config("sweep needs at least one method".into()));
        }
        self.predictor.validate()?;
        self.agent.params.validate()?;
        self.scenario()?.validate()?;
        Ok(())
    }

    /// Users per region and slot the environment admits at the configured
    /// traffic multiplier.
    pub fn env_n_max(&self) -> usize {
        ((self.scenario.n_max as f64 * self.experiment.traffic_multiplier).round() as usize).max(1)
    }

    /// Scenario at the configured multiplier.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.scenario;
        let regions = s
            .regions
            .iter()
            .map(|r| {
                let catalog = SliceCatalog::new(
                    r.id.clone(),
                    r.bandwidth_tiers_mhz.iter().map(|m| m * 1e6).collect(),
                    r.bandwidth_costs.clone(),
                    r.vm_tiers.clone(),
                    r.vm_costs.clone(),
                    r.vm_freq_hz,
                )?;
                Ok(RegionSpec {
                    catalog,
                    data_kb: r.data_kb,
                    density_cycles_per_bit: r.density_cycles_per_bit,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let radio = RadioParams::from_db(
            s.radio.upload_power_mw,
            s.radio.noise_power_dbm,
            s.radio.gain_ref_db,
            s.radio.path_loss_exp,
        )?;
        let econ = EconomicParams::new(s.reward_per_task, s.max_delay_s, s.long_slots, s.short_slots_per_long)?;
        Ok(Scenario {
            regions,
            radio,
            econ,
            distance_m: s.distance_m,
            priorities: s.priorities.clone(),
            n_max: self.env_n_max(),
            slot_duration_s: s.slot_duration_s,
        })
    }

    pub fn region_ids(&self) -> Vec<String> {
        self.scenario.regions.iter().map(|r| r.id.clone()).collect()
    }

    /// History days followed by the evaluation day, before any multiplier.
    pub fn traffic_series(&self) -> Result<TrafficSeries> {
        let t = &self.traffic;
        let days = t.history_days + 1;
        let ids = self.region_ids();
        let series = match t.source {
            TrafficSource::Synthetic => {
                let raw = synthesize(&SyntheticTraffic {
                    seed: t.seed,
                    regions: ids,
                    days,
                    base: t.base,
                    amplitude: t.amplitude,
                    noise_sd: t.noise_sd,
                    slots_per_day: t.slots_per_day,
                })?;
                rescale_counts(&raw, t.min_users, t.max_users)?
            }
            TrafficSource::Step => {
                let raw = synthesize_step(
                    t.seed,
                    &ids,
                    days,
                    t.step_low,
                    t.step_high,
                    t.noise_sd,
                    t.slots_per_day,
                )?;
                raw.scaled(1.0, t.max_users)
            }
            TrafficSource::Csv => {
                let path = t.path.as_ref().expect("validated");
                let s = TrafficSeries::read_csv(path, self.scenario.slot_duration_s)?;
                if s.region_ids() != ids.as_slice() {
                    return Err(Error::Config(format!(
                        "traffic file regions {:?} differ from scenario regions {ids:?}",
                        s.region_ids()
                    )));
                }
                s
            }
        };
        let needed = days * t.slots_per_day;
        if series.len() < needed {
            return Err(Error::Config(format!(
                "traffic has {} slots, {days} days need {needed}",
                series.len()
            )));
        }
        Ok(series.window(0..needed)?)
    }

    /// First slot of the evaluation day.
    pub fn eval_start(&self) -> usize {
        self.traffic.history_days * self.traffic.slots_per_day
    }

    /// Copy with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Self {
        let mut c = self.clone();
        match axis {
            SweepAxis::TrafficMultiplier => c.experiment.traffic_multiplier = value,
            SweepAxis::MaxDelay => c.scenario.max_delay_s = value,
            SweepAxis::Omega => c.slicing.omega.iter_mut().for_each(|w| *w = value),
        }
        c
    }

    /// Run directory of one `(method, seed)` cell.
    pub fn run_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.experiment.output_dir.join(format!("{}_seed{seed}", method.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default_config();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn default_scenario_matches_the_catalog_file() {
        let s = ExperimentConfig::default_config().scenario().unwrap();
        assert_eq!(s.region_ids(), ["R1", "R2", "R3"]);
        assert_eq!(s.regions[0].catalog.bandwidth_tiers_hz.len(), 20);
        assert_eq!(s.regions[2].catalog.vm_tiers.len(), 8);
        assert_eq!(s.econ.long_slots * s.econ.short_slots_per_long, 144);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::default_config();
        cfg.experiment.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default_config();
        cfg.slicing.omega.pop();
        assert!(cfg.validate().is_err());
        let text = DEFAULT_CONFIG.replace("n_max = 10", "n_max = 10\nbogus = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn multiplier_scales_capacity() {
        let cfg = ExperimentConfig::default_config().with_axis(SweepAxis::TrafficMultiplier, 2.0);
        assert_eq!(cfg.env_n_max(), 20);
        assert_eq!(cfg.scenario().unwrap().n_max, 20);
    }

    #[test]
    fn method_names_parse_back() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("nope").is_err());
    }
}
