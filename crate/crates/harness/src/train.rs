//! Training of the forecaster and the offloading agents on the history days.

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sliceoff_core::env::OffloadEnv;
use sliceoff_core::model::SliceDecision;
use sliceoff_core::scenario::Scenario;
use sliceoff_core::slicer::{adjust_slices, OracleForecaster, ProvisionContext};
use sliceoff_core::traffic::TrafficSeries;
use sliceoff_learn::agent::{train_pair, train_single, Agent, AgentKind, EpisodeStats, TaskEnv};
use sliceoff_learn::offload::OffloadTask;
use sliceoff_learn::predictor::{train_predictor, TrainedPredictor};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::Result;

/// Trains the forecaster on the history days.
pub fn train_forecaster(cfg: &ExperimentConfig) -> Result<TrainedPredictor> {
    let series = cfg.traffic_series()?;
    let history = series.window(0..cfg.eval_start())?;
    Ok(train_predictor(&history, &cfg.predictor)?)
}

/// Slice decisions per long slot of `day`, provisioned from the true counts
/// with cold-start task statistics.
pub fn oracle_schedule(
    cfg: &ExperimentConfig,
    scenario: &Scenario,
    series: &TrafficSeries,
    day: usize,
) -> Result<Vec<Vec<SliceDecision>>> {
    let catalogs = scenario.catalogs();
    let ctx = ProvisionContext {
        catalogs: &catalogs,
        econ: &scenario.econ,
        radio: &scenario.radio,
        omegas: &cfg.slicing.omega,
    };
    let stats = scenario.cold_start_stats();
    let t = scenario.econ.short_slots_per_long;
    let forecaster = OracleForecaster { horizon: t };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.traffic.seed ^ (day as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    (0..scenario.econ.long_slots)
        .map(|h| {
            let end = day * cfg.traffic.slots_per_day + h * t;
            let adj = adjust_slices(&forecaster, series, end, &stats, &ctx, cfg.slicing.aggregation, h, &mut rng)?;
            Ok(adj.decisions)
        })
        .collect()
}

/// Environment of `day` under its oracle slicing schedule.
fn day_env(cfg: &ExperimentConfig, scenario: &Scenario, series: &TrafficSeries, day: usize) -> Result<OffloadEnv> {
    let spd = cfg.traffic.slots_per_day;
    let schedule = oracle_schedule(cfg, scenario, series, day)?;
    let traffic = series.window(day * spd..(day + 1) * spd)?;
    let mut env = OffloadEnv::new(scenario.clone(), traffic, schedule[0].clone())?;
    env.set_schedule(schedule)?;
    env.set_day(day);
    Ok(env)
}

/// Training environments: one per history day at multiplier 1, plus the
/// evaluation day.
#[derive(Debug, Clone)]
pub struct AgentTrainer {
    pub days: Vec<OffloadEnv>,
    pub eval: OffloadEnv,
    pub seed: u64,
}

impl AgentTrainer {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let base = cfg.with_axis(SweepAxis::TrafficMultiplier, 1.0);
        let scenario = base.scenario()?;
        let series = base.traffic_series()?;
        let days = (0..cfg.traffic.history_days)
            .map(|d| day_env(&base, &scenario, &series, d))
            .collect::<Result<Vec<_>>>()?;
        let eval = day_env(&base, &scenario, &series, cfg.traffic.history_days)?;
        Ok(Self { days, eval, seed })
    }

    pub fn state_dim(&self) -> usize {
        self.eval.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.eval.action_dim()
    }

    /// Environment and reset seed of `(agent, episode)`: the two agents of
    /// a pair see different days in every episode.
    pub fn make(&self, agent: usize, episode: usize) -> (OffloadTask, u64) {
        let day = (2 * episode + agent) % self.days.len();
        let seed = self
            .seed
            .wrapping_mul(1_000_003)
            .wrapping_add((episode as u64) << 1 | agent as u64);
        (OffloadTask::new(self.days[day].clone()), seed)
    }

    pub fn eval_task(&self) -> OffloadTask {
        OffloadTask::new(self.eval.clone())
    }
}

/// Outcome of training one agent kind.
#[derive(Debug, Clone)]
pub struct TrainedAgents {
    pub kind: AgentKind,
    /// Two agents for the dual-distillation kind, one otherwise.
    pub agents: Vec<Agent>,
    pub curves: Vec<Vec<EpisodeStats>>,
    /// Index of the agent with the higher final-decile reward.
    pub best: usize,
}

impl TrainedAgents {
    pub fn best_agent(&self) -> &Agent {
        &self.agents[self.best]
    }

    pub fn best_curve(&self) -> &[EpisodeStats] {
        &self.curves[self.best]
    }
}

/// Mean reward over the last tenth of the episodes (at least one).
pub fn final_decile_mean(curve: &[EpisodeStats]) -> f64 {
    if curve.is_empty() {
        return 0.0;
    }
    let k = (curve.len() / 10).max(1);
    curve[curve.len() - k..].iter().map(|s| s.reward).sum::<f64>() / k as f64
}

pub fn train_agents(cfg: &ExperimentConfig, kind: AgentKind, seed: u64) -> Result<TrainedAgents> {
    let trainer = AgentTrainer::new(cfg, seed)?;
    train_agents_with(cfg, &trainer, kind, seed)
}

/// Trains `kind` for `cfg.agent.episodes` episodes on the trainer's days.
pub fn train_agents_with(
    cfg: &ExperimentConfig,
    trainer: &AgentTrainer,
    kind: AgentKind,
    seed: u64,
) -> Result<TrainedAgents> {
    let (sd, ad) = (trainer.state_dim(), trainer.action_dim());
    let params = cfg.agent.params.clone();
    let episodes = cfg.agent.episodes;
    let factory = |agent: usize, episode: usize| -> sliceoff_learn::Result<(Box<dyn TaskEnv>, u64)> {
        let (env, s) = trainer.make(agent, episode);
        Ok((Box::new(env), s))
    };
    let base = seed.wrapping_mul(2);
    let (agents, curves) = match kind {
        AgentKind::DualDistill => {
            let mut pair = [
                Agent::new(0, kind, params.clone(), sd, ad, base)?,
                Agent::new(1, kind, params, sd, ad, base + 1)?,
            ];
            let [c0, c1] = train_pair(&mut pair, &factory, episodes)?;
            (pair.to_vec(), vec![c0, c1])
        }
        _ => {
            let mut agent = Agent::new(0, kind, params, sd, ad, base)?;
            let curve = train_single(&mut agent, &factory, episodes)?;
            (vec![agent], vec![curve])
        }
    };
    let best = if curves.len() == 2 && final_decile_mean(&curves[1]) > final_decile_mean(&curves[0]) {
        1
    } else {
        0
    };
    info!(
        "trained {kind:?} seed {seed}: final-decile reward {:.2}",
        final_decile_mean(&curves[best])
    );
    Ok(TrainedAgents {
        kind,
        agents,
        curves,
        best,
    })
}
