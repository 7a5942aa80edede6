//! [`TaskEnv`] adapter over the offloading environment.

use sliceoff_core::env::{ActionVector, FeatureScale, OffloadEnv, StepInfo};

use crate::agent::TaskEnv;
use crate::Result;

/// Offloading environment exposing scaled state features.
#[derive(Debug, Clone)]
pub struct OffloadTask {
    pub env: OffloadEnv,
    pub scale: FeatureScale,
    last_info: Option<StepInfo>,
}

impl OffloadTask {
    pub fn new(env: OffloadEnv) -> Self {
        let scale = FeatureScale::for_scenario(env.scenario());
        Self {
            env,
            scale,
            last_info: None,
        }
    }

    /// Details of the most recent step.
    pub fn last_info(&self) -> Option<&StepInfo> {
        self.last_info.as_ref()
    }
}

impl TaskEnv for OffloadTask {
    fn state_dim(&self) -> usize {
        self.env.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        Ok(self.env.reset(seed)?.features(&self.scale))
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
        let out = self.env.step(&ActionVector::from_flat(action)?)?;
        let next = match &out.next {
            Some(s) => s.features(&self.scale),
            None => vec![0.0; self.env.state_dim()],
        };
        self.last_info = Some(out.info);
        Ok((next, out.reward, out.done))
    }
}
