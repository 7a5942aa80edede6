#![allow(dead_code)]

use sliceoff_harness::config::{ExperimentConfig, Method};
use sliceoff_harness::run::Components;
use sliceoff_harness::train::{train_agents, train_forecaster};
use sliceoff_learn::agent::AgentKind;

/// Two long slots of two short slots, tiny networks, a few history days.
pub fn smoke_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_config();
    cfg.scenario.long_slots = 2;
    cfg.scenario.short_slots_per_long = 2;
    cfg.traffic.slots_per_day = 4;
    cfg.traffic.history_days = 6;
    cfg.predictor.slots_per_day = 4;
    cfg.predictor.horizon_slots = 2;
    cfg.predictor.input_window_slots = 6;
    cfg.predictor.decoder_context_slots = 3;
    cfg.predictor.model_dim = 8;
    cfg.predictor.num_heads = 2;
    cfg.predictor.train_epochs = 2;
    cfg.predictor.batch_size = 4;
    cfg.agent.episodes = 3;
    cfg.agent.params.hidden_layer_sizes = vec![16, 16];
    cfg.agent.params.batch_size = 8;
    cfg.agent.params.warmup_steps = 10;
    cfg.experiment.seeds = vec![0, 1];
    cfg.experiment.method = Method::StaticOff;
    cfg.validate().unwrap();
    cfg
}

pub fn smoke_components(cfg: &ExperimentConfig, kinds: &[AgentKind]) -> Components {
    let mut c = Components {
        predictor: Some(train_forecaster(cfg).unwrap().model),
        agents: Vec::new(),
    };
    for &k in kinds {
        c.insert_agent(train_agents(cfg, k, 0).unwrap().best_agent().clone());
    }
    c
}
