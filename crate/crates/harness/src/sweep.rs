//! Grids over one configuration axis × methods × seeds.

use std::io::Write;
use std::path::Path;

use log::info;

use crate::config::{ExperimentConfig, Method, SweepAxis};
use crate::metrics::{compute_metrics, Metrics};
use crate::run::{run_experiment, write_run, Components};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub method: Method,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Runs every `(value, method, seed)` cell. With `out`, each cell's logs go
/// to `out/<axis>=<value>/<method>_seed<seed>/`.
pub fn sweep(
    cfg: &ExperimentConfig,
    components: &Components,
    axis: SweepAxis,
    values: &[f64],
    methods: &[Method],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || methods.is_empty() {
        return Err(Error::Empty("sweep needs values and methods".into()));
    }
    components.check(methods)?;
    let mut rows = Vec::with_capacity(values.len() * methods.len() * cfg.experiment.seeds.len());
    for &value in values {
        let mut cell = cfg.with_axis(axis, value);
        cell.validate()?;
        for &method in methods {
            cell.experiment.method = method;
            for &seed in &cfg.experiment.seeds {
                let log = run_experiment(&cell, components, seed)?;
                if let Some(dir) = out {
                    let d = dir
                        .join(format!("{}={value}", axis.name()))
                        .join(format!("{method}_seed{seed}"));
                    write_run(&d, &log)?;
                }
                let metrics = compute_metrics(&log)?;
                info!("{}={value} {method} seed {seed}: profit {:.3}", axis.name(), metrics.profit);
                rows.push(SweepRow {
                    axis,
                    value,
                    method,
                    seed,
                    metrics,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let regions: Vec<String> = rows
        .first()
        .map(|r| r.metrics.region_profit.iter().map(|(id, _)| id.clone()).collect())
        .unwrap_or_default();
    write!(f, "axis,value,method,seed,profit,cost,ru,dvr,dvr_defined,mean_upload_s,mean_queue_s,mean_exec_s")?;
    for id in &regions {
        write!(f, ",profit_{id}")?;
    }
    writeln!(f)?;
    for r in rows {
        let m = &r.metrics;
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.method,
            r.seed,
            m.profit,
            m.cost,
            m.ru,
            m.dvr,
            m.dvr_defined,
            m.mean_upload_s,
            m.mean_queue_s,
            m.mean_exec_s
        )?;
        for (_, p) in &m.region_profit {
            write!(f, ",{p}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Seed-averaged statistic of `method` at every swept value, in the order
/// the values first appear.
pub fn mean_curve(rows: &[SweepRow], method: Method, stat: impl Fn(&Metrics) -> f64) -> Vec<(f64, f64)> {
    let mut values: Vec<f64> = Vec::new();
    for r in rows.iter().filter(|r| r.method == method) {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|v| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.value == v)
                .map(|r| stat(&r.metrics))
                .collect();
            (v, xs.iter().sum::<f64>() / xs.len() as f64)
        })
        .collect()
}

/// Seed-averaged profit of one region.
pub fn region_profit_curve(rows: &[SweepRow], method: Method, region: &str) -> Vec<(f64, f64)> {
    mean_curve(rows, method, |m| {
        m.region_profit
            .iter()
            .find(|(id, _)| id == region)
            .map_or(0.0, |(_, p)| *p)
    })
}

/// Index of the largest value (first on ties).
pub fn argmax(ys: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, y) in ys.iter().enumerate() {
        if best.is_none_or(|b| *y > ys[b]) {
            best = Some(i);
        }
    }
    best
}

/// True when the maximum sits strictly inside the curve.
pub fn has_interior_maximum(ys: &[f64]) -> bool {
    match argmax(ys) {
        Some(i) => i > 0 && i + 1 < ys.len() && ys[i] > ys[0] && ys[i] > ys[ys.len() - 1],
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_maximum_detection() {
        assert!(has_interior_maximum(&[1.0, 3.0, 2.0]));
        assert!(!has_interior_maximum(&[1.0, 2.0, 3.0]));
        assert!(!has_interior_maximum(&[3.0, 2.0, 1.0]));
        assert!(!has_interior_maximum(&[2.0, 2.0, 2.0]));
        assert!(!has_interior_maximum(&[]));
    }
}
