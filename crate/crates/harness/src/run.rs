//! One evaluation day: slice at every long-slot boundary, offload every
//! short slot, account revenue and renting cost.

use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sliceoff_core::env::{ActionVector, FeatureScale, OffloadEnv, RegionSnapshot};
use sliceoff_core::model::decision_cost;
use sliceoff_core::scenario::Scenario;
use sliceoff_core::slicer::{adjust_slices, provision, Aggregation, Forecaster, ProvisionContext, TaskStats};
use sliceoff_learn::agent::{Agent, AgentKind};
use sliceoff_learn::predictor::{NaiveForecaster, TrafficPredictor};

use crate::config::{agent_kind_name, ExperimentConfig, Method};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::{Error, Result};

/// Trained pieces a run draws on.
#[derive(Debug, Clone, Default)]
pub struct Components {
    pub predictor: Option<TrafficPredictor>,
    pub agents: Vec<Agent>,
}

impl Components {
    pub fn agent(&self, kind: AgentKind) -> Result<&Agent> {
        self.agents
            .iter()
            .find(|a| a.kind == kind)
            .ok_or_else(|| Error::MissingComponent(format!("no {} agent", agent_kind_name(kind))))
    }

    pub fn predictor(&self) -> Result<&TrafficPredictor> {
        self.predictor
            .as_ref()
            .ok_or_else(|| Error::MissingComponent("no traffic predictor".into()))
    }

    /// Replaces any agent of the same kind.
    pub fn insert_agent(&mut self, agent: Agent) {
        self.agents.retain(|a| a.kind != agent.kind);
        self.agents.push(agent);
    }

    /// Checks that everything `methods` need is present.
    pub fn check(&self, methods: &[Method]) -> Result<()> {
        for &m in methods {
            self.agent(m.agent_kind())?;
            if m.uses_predictor() {
                self.predictor()?;
            }
        }
        Ok(())
    }

    /// Loads the components `methods` need from checkpoint files: the
    /// configured paths when set, else the default names in the output
    /// directory.
    pub fn load(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Self> {
        let mut out = Self::default();
        if methods.iter().any(|m| m.uses_predictor()) {
            let path = cfg
                .experiment
                .predictor_checkpoint
                .clone()
                .unwrap_or_else(|| predictor_path(&cfg.experiment.output_dir));
            out.predictor = Some(
                TrafficPredictor::load(&path)
                    .map_err(|e| Error::MissingComponent(format!("predictor {}: {e}", path.display())))?,
            );
        }
        let mut kinds: Vec<AgentKind> = Vec::new();
        for m in methods {
            if !kinds.contains(&m.agent_kind()) {
                kinds.push(m.agent_kind());
            }
        }
        for kind in kinds {
            let path = match &cfg.experiment.agent_checkpoint {
                Some(p) if kind == cfg.experiment.method.agent_kind() => p.clone(),
                _ => agent_path(&cfg.experiment.output_dir, kind),
            };
            let agent = Agent::load(&path, cfg.agent.seed)
                .map_err(|e| Error::MissingComponent(format!("agent {}: {e}", path.display())))?;
            if agent.kind != kind {
                return Err(Error::MissingComponent(format!(
                    "{} holds a {} agent, expected {}",
                    path.display(),
                    agent_kind_name(agent.kind),
                    agent_kind_name(kind)
                )));
            }
            out.agents.push(agent);
        }
        Ok(out)
    }
}

pub fn predictor_path(dir: &Path) -> PathBuf {
    dir.join("predictor.json")
}

pub fn agent_path(dir: &Path, kind: AgentKind) -> PathBuf {
    dir.join(format!("agent_{}.json", agent_kind_name(kind)))
}

/// Running means of observed task attributes, falling back to the cold-start
/// statistics until the first task arrives.
#[derive(Debug, Clone)]
struct StatsTracker {
    cold: Vec<TaskStats>,
    sums: Vec<[f64; 3]>,
    counts: Vec<usize>,
}

impl StatsTracker {
    fn new(cold: Vec<TaskStats>) -> Self {
        let n = cold.len();
        Self {
            cold,
            sums: vec![[0.0; 3]; n],
            counts: vec![0; n],
        }
    }

    fn observe(&mut self, snap: &RegionSnapshot) {
        for t in &snap.tasks {
            let s = &mut self.sums[snap.region];
            s[0] += t.data_bits;
            s[1] += t.density_cycles_per_bit;
            s[2] += t.distance_m;
            self.counts[snap.region] += 1;
        }
    }

    fn current(&self) -> Vec<TaskStats> {
        (0..self.cold.len())
            .map(|r| match self.counts[r] {
                0 => self.cold[r],
                n => {
                    let s = self.sums[r];
                    TaskStats {
                        mean_data_bits: s[0] / n as f64,
                        mean_density: s[1] / n as f64,
                        mean_distance_m: s[2] / n as f64,
                    }
                }
            })
            .collect()
    }
}

/// Deterministic policy over an environment whose user capacity may exceed
/// the agent's: active users are served in consecutive groups of the
/// agent's width and the per-group actions are concatenated.
pub struct GroupedPolicy {
    agent: Agent,
    width: usize,
    scale: FeatureScale,
}

impl GroupedPolicy {
    pub fn new(agent: Agent, scenario: &Scenario) -> Result<Self> {
        let width = agent.action_dim() / 2;
        if agent.state_dim() != 3 + 3 * width {
            return Err(Error::Config("agent dimensions do not fit the offloading state".into()));
        }
        let mut scale = FeatureScale::for_scenario(scenario);
        scale.users = width as f64;
        Ok(Self { agent, width, scale })
    }

    pub fn act(&mut self, snap: &RegionSnapshot) -> Vec<f64> {
        let n_env = snap.n_max();
        let w = self.width;
        let groups = snap.user_count.div_ceil(w).max(1);
        let mut bandwidth = vec![0.0; n_env];
        let mut selectors = vec![0.0; n_env];
        for g in 0..groups {
            let lo = g * w;
            let hi = (lo + w).min(snap.user_count);
            let pad = |v: &[f64]| {
                let mut out = vec![0.0; w];
                let src = &v[lo.min(v.len())..hi.min(v.len())];
                out[..src.len()].copy_from_slice(src);
                out
            };
            let sub = RegionSnapshot {
                user_count: hi.saturating_sub(lo),
                uplink_demand: pad(&snap.uplink_demand),
                compute_demand: pad(&snap.compute_demand),
                priorities: pad(&snap.priorities),
                tasks: snap.tasks[lo.min(snap.tasks.len())..hi.min(snap.tasks.len())].to_vec(),
                ..snap.clone()
            };
            let a = self.agent.select_action(&sub.features(&self.scale), false);
            for j in 0..sub.user_count {
                bandwidth[lo + j] = a[j];
                selectors[lo + j] = a[w + j];
            }
        }
        bandwidth.extend(selectors);
        bandwidth
    }
}

/// Runs `cfg.experiment.method` over the evaluation day with `seed`.
pub fn run_experiment(cfg: &ExperimentConfig, components: &Components, seed: u64) -> Result<MetricsLog> {
    cfg.validate()?;
    let method = cfg.experiment.method;
    components.check(&[method])?;
    let scenario = cfg.scenario()?;
    let full = cfg
        .traffic_series()?
        .scaled(cfg.experiment.traffic_multiplier, scenario.n_max as u32);
    let s0 = cfg.eval_start();
    let spd = cfg.traffic.slots_per_day;
    let t = scenario.econ.short_slots_per_long;
    let catalogs = scenario.catalogs();
    let ctx = ProvisionContext {
        catalogs: &catalogs,
        econ: &scenario.econ,
        radio: &scenario.radio,
        omegas: &cfg.slicing.omega,
    };
    let forecaster: Option<Box<dyn Forecaster>> = match method {
        Method::StaticOff => None,
        m if m.uses_predictor() => Some(Box::new(components.predictor()?.clone())),
        m => Some(Box::new(NaiveForecaster {
            kind: m.naive_kind(cfg.slicing.moving_average_window).expect("naive method"),
            horizon: t,
        })),
    };
    let mut policy = GroupedPolicy::new(components.agent(method.agent_kind())?.clone(), &scenario)?;
    let mut slice_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_51ce);
    let mut tracker = StatsTracker::new(scenario.cold_start_stats());
    let mut slices = Vec::new();

    let first = match &forecaster {
        None => {
            let history = full.window(0..s0)?;
            let users: Vec<f64> = history.mean_counts().iter().map(|&m| Aggregation::Mean.apply(&[m])).collect();
            provision(&ctx, &users, &tracker.current(), 0, &mut slice_rng)?
        }
        Some(f) => adjust_slices(
            f.as_ref(),
            &full,
            s0,
            &tracker.current(),
            &ctx,
            cfg.slicing.aggregation,
            0,
            &mut slice_rng,
        )?,
    };
    slices.extend(first.diagnostics);
    let mut env = OffloadEnv::new(scenario.clone(), full.window(s0..s0 + spd)?, first.decisions)?;
    env.enable_trace();
    env.set_day(cfg.traffic.history_days);
    let mut snap = env.reset(seed)?;

    let ids = scenario.region_ids();
    let mut rows: Vec<MetricsRow> = Vec::new();
    let window = scenario.econ.max_delay_s;
    loop {
        if env.at_long_slot_boundary() {
            let h = env.long_slot();
            if h > 0 {
                if let Some(f) = &forecaster {
                    let adj = adjust_slices(
                        f.as_ref(),
                        &full,
                        s0 + h * t,
                        &tracker.current(),
                        &ctx,
                        cfg.slicing.aggregation,
                        h,
                        &mut slice_rng,
                    )?;
                    slices.extend(adj.diagnostics);
                    env.apply_slice_change(adj.decisions)?;
                    snap = env.observe().expect("episode in progress").clone();
                }
            }
            for (r, d) in env.current_decisions().iter().enumerate() {
                let mut row = MetricsRow::new(h, ids[r].clone());
                row.bandwidth_tier = d.bandwidth_index()? + 1;
                row.vm_tier = d.vm_index()? + 1;
                row.cost = decision_cost(d, &catalogs[r])?;
                rows.push(row);
            }
        }
        tracker.observe(&snap);
        let action = ActionVector::from_flat(&policy.act(&snap))?;
        let out = env.step(&action)?;
        let info = &out.info;
        let row = rows
            .iter_mut()
            .rev()
            .find(|row| row.long_slot == info.long_slot && row.region == ids[info.region])
            .expect("row opened at the boundary");
        row.rented_bandwidth_s += info.rented_bandwidth_hz * window;
        row.rented_vm_s += f64::from(info.rented_vm_count) * window;
        row.tasks += info.tasks.len();
        row.violations += info.violations;
        // per VM: completion of its last task, measured from the slot start
        let mut busy = vec![0.0f64; info.rented_vm_count as usize];
        for task in &info.tasks {
            row.revenue += task.revenue;
            if task.total_s.is_finite() {
                row.completed += 1;
                row.upload_s_sum += task.upload_s;
                row.queue_s_sum += task.queue_s;
                row.exec_s_sum += task.exec_s;
                row.used_bandwidth_s += task.bandwidth_hz * task.upload_s.min(window);
                busy[task.vm] = busy[task.vm].max(task.queue_s + task.exec_s);
            }
        }
        row.used_vm_s += busy.iter().map(|b| b.min(window)).sum::<f64>();
        match out.next {
            Some(next) => snap = next,
            None => break,
        }
    }
    info!("{method} seed {seed}: {} metric rows", rows.len());
    Ok(MetricsLog {
        method,
        seed,
        rows,
        trace: env.trace().to_vec(),
        slices,
    })
}

/// Writes a run's metric rows, task trace and slicing diagnostics into
/// `dir`.
pub fn write_run(dir: &Path, log: &MetricsLog) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    log.write_csv(dir.join("metrics.csv"))?;
    sliceoff_core::env::write_trace_csv(dir.join("trace.csv"), &log.trace)?;
    sliceoff_core::slicer::write_diagnostics_csv(dir.join("slices.csv"), &log.slices)?;
    Ok(())
}
