//! Per-slot accounting of one run and the summary metrics derived from it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sliceoff_core::env::TraceRow;
use sliceoff_core::slicer::SliceDiagnostics;

use crate::config::Method;
use crate::{Error, Result};

/// Accounting of one region during one long slot. Resource-seconds cover
/// the service window of each short slot, the first `T^max` seconds after
/// the tasks arrive, when every task must be uploaded and executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub long_slot: usize,
    pub region: String,
    /// 1-based tiers in force during the slot.
    pub bandwidth_tier: usize,
    pub vm_tier: usize,
    pub revenue: f64,
    pub cost: f64,
    pub rented_bandwidth_s: f64,
    pub used_bandwidth_s: f64,
    pub rented_vm_s: f64,
    pub used_vm_s: f64,
    pub tasks: usize,
    pub violations: usize,
    /// Tasks whose upload finished (finite completion time).
    pub completed: usize,
    pub upload_s_sum: f64,
    pub queue_s_sum: f64,
    pub exec_s_sum: f64,
}

impl MetricsRow {
    pub fn new(long_slot: usize, region: String) -> Self {
        Self {
            long_slot,
            region,
            bandwidth_tier: 0,
            vm_tier: 0,
            revenue: 0.0,
            cost: 0.0,
            rented_bandwidth_s: 0.0,
            used_bandwidth_s: 0.0,
            rented_vm_s: 0.0,
            used_vm_s: 0.0,
            tasks: 0,
            violations: 0,
            completed: 0,
            upload_s_sum: 0.0,
            queue_s_sum: 0.0,
            exec_s_sum: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub method: Method,
    pub seed: u64,
    /// Rows ordered by long slot, then region.
    pub rows: Vec<MetricsRow>,
    pub trace: Vec<TraceRow>,
    pub slices: Vec<SliceDiagnostics>,
}

const ROW_HEADER: &str = "method,seed,long_slot,region,bandwidth_tier,vm_tier,revenue,cost,rented_bandwidth_s,\
used_bandwidth_s,rented_vm_s,used_vm_s,tasks,violations,completed,upload_s_sum,queue_s_sum,exec_s_sum";

impl MetricsLog {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{ROW_HEADER}")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.method,
                self.seed,
                r.long_slot,
                r.region,
                r.bandwidth_tier,
                r.vm_tier,
                r.revenue,
                r.cost,
                r.rented_bandwidth_s,
                r.used_bandwidth_s,
                r.rented_vm_s,
                r.used_vm_s,
                r.tasks,
                r.violations,
                r.completed,
                r.upload_s_sum,
                r.queue_s_sum,
                r.exec_s_sum
            )?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads a file written by [`MetricsLog::write_csv`]; the trace and
    /// slicing diagnostics are not part of it and come back empty.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let bad = |line: usize, what: &str| {
            Error::Config(format!("{}:{}: {what}", path.as_ref().display(), line + 1))
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == ROW_HEADER => {}
            _ => return Err(bad(0, "unexpected header")),
        }
        let mut head: Option<(Method, u64)> = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 18 {
                return Err(bad(i, "expected 18 fields"));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i, "bad number"));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i, "bad integer"));
            let method = Method::parse(f[0])?;
            let seed = f[1].parse::<u64>().map_err(|_| bad(i, "bad seed"))?;
            if *head.get_or_insert((method, seed)) != (method, seed) {
                return Err(bad(i, "mixed runs in one file"));
            }
            rows.push(MetricsRow {
                long_slot: int(2)?,
                region: f[3].to_string(),
                bandwidth_tier: int(4)?,
                vm_tier: int(5)?,
                revenue: num(6)?,
                cost: num(7)?,
                rented_bandwidth_s: num(8)?,
                used_bandwidth_s: num(9)?,
                rented_vm_s: num(10)?,
                used_vm_s: num(11)?,
                tasks: int(12)?,
                violations: int(13)?,
                completed: int(14)?,
                upload_s_sum: num(15)?,
                queue_s_sum: num(16)?,
                exec_s_sum: num(17)?,
            });
        }
        let (method, seed) = head.ok_or_else(|| Error::Empty(format!("{} has no rows", path.as_ref().display())))?;
        Ok(Self {
            method,
            seed,
            rows,
            trace: Vec::new(),
            slices: Vec::new(),
        })
    }

    /// Slot costs per long slot, summed over regions.
    pub fn cost_per_long_slot(&self) -> Vec<f64> {
        let slots = self.rows.iter().map(|r| r.long_slot + 1).max().unwrap_or(0);
        let mut out = vec![0.0; slots];
        for r in &self.rows {
            out[r.long_slot] += r.cost;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub profit: f64,
    pub revenue: f64,
    pub cost: f64,
    /// Mean of the bandwidth and VM utilizations.
    pub ru: f64,
    pub bandwidth_utilization: f64,
    pub vm_utilization: f64,
    /// Zero with `dvr_defined = false` when there were no tasks.
    pub dvr: f64,
    pub dvr_defined: bool,
    pub tasks: usize,
    pub violations: usize,
    pub completed: usize,
    pub mean_upload_s: f64,
    pub mean_queue_s: f64,
    pub mean_exec_s: f64,
    /// `(region, profit)` in first-appearance order.
    pub region_profit: Vec<(String, f64)>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn compute_metrics(log: &MetricsLog) -> Result<Metrics> {
    if log.rows.is_empty() {
        return Err(Error::Empty("metrics log has no rows".into()));
    }
    let mut revenue = 0.0;
    let mut cost = 0.0;
    let (mut bw_used, mut bw_rented, mut vm_used, mut vm_rented) = (0.0, 0.0, 0.0, 0.0);
    let (mut tasks, mut violations, mut completed) = (0, 0, 0);
    let (mut up, mut queue, mut exec) = (0.0, 0.0, 0.0);
    let mut region_profit: Vec<(String, f64)> = Vec::new();
    for r in &log.rows {
        revenue += r.revenue;
        cost += r.cost;
        bw_used += r.used_bandwidth_s;
        bw_rented += r.rented_bandwidth_s;
        vm_used += r.used_vm_s;
        vm_rented += r.rented_vm_s;
        tasks += r.tasks;
        violations += r.violations;
        completed += r.completed;
        up += r.upload_s_sum;
        queue += r.queue_s_sum;
        exec += r.exec_s_sum;
        match region_profit.iter_mut().find(|(id, _)| *id == r.region) {
            Some((_, p)) => *p += r.revenue - r.cost,
            None => region_profit.push((r.region.clone(), r.revenue - r.cost)),
        }
    }
    let bandwidth_utilization = ratio(bw_used, bw_rented);
    let vm_utilization = ratio(vm_used, vm_rented);
    let n = completed.max(1) as f64;
    Ok(Metrics {
        profit: revenue - cost,
        revenue,
        cost,
        ru: 0.5 * (bandwidth_utilization + vm_utilization),
        bandwidth_utilization,
        vm_utilization,
        dvr: if tasks > 0 { violations as f64 / tasks as f64 } else { 0.0 },
        dvr_defined: tasks > 0,
        tasks,
        violations,
        completed,
        mean_upload_s: if completed > 0 { up / n } else { 0.0 },
        mean_queue_s: if completed > 0 { queue / n } else { 0.0 },
        mean_exec_s: if completed > 0 { exec / n } else { 0.0 },
        region_profit,
    })
}

pub const SUMMARY_HEADER: &str = "method,seed,profit,revenue,cost,ru,bandwidth_utilization,vm_utilization,dvr,\
dvr_defined,tasks,violations,completed,mean_upload_s,mean_queue_s,mean_exec_s";

/// One CSV line matching [`SUMMARY_HEADER`].
pub fn summary_line(method: Method, seed: u64, m: &Metrics) -> String {
    format!(
        "{method},{seed},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        m.profit,
        m.revenue,
        m.cost,
        m.ru,
        m.bandwidth_utilization,
        m.vm_utilization,
        m.dvr,
        m.dvr_defined,
        m.tasks,
        m.violations,
        m.completed,
        m.mean_upload_s,
        m.mean_queue_s,
        m.mean_exec_s
    )
}

pub fn write_summary_csv(path: impl AsRef<Path>, entries: &[(Method, u64, Metrics)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{SUMMARY_HEADER}")?;
    for (method, seed, m) in entries {
        writeln!(f, "{}", summary_line(*method, *seed, m))?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rows: Vec<MetricsRow>) -> MetricsLog {
        MetricsLog {
            method: Method::StaticOff,
            seed: 0,
            rows,
            trace: Vec::new(),
            slices: Vec::new(),
        }
    }

    fn row(h: usize, region: &str) -> MetricsRow {
        let mut r = MetricsRow::new(h, region.into());
        r.rented_bandwidth_s = 100.0;
        r.rented_vm_s = 50.0;
        r
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(compute_metrics(&log(Vec::new())).is_err());
    }

    #[test]
    fn no_tasks_gives_zero_ru_and_flagged_dvr() {
        let m = compute_metrics(&log(vec![row(0, "R1"), row(0, "R2")])).unwrap();
        assert_eq!(m.ru, 0.0);
        assert_eq!(m.dvr, 0.0);
        assert!(!m.dvr_defined);
        assert_eq!(m.mean_upload_s, 0.0);
    }

    #[test]
    fn two_late_tasks_of_ten() {
        let mut r = row(0, "R1");
        r.tasks = 10;
        r.violations = 2;
        let m = compute_metrics(&log(vec![r])).unwrap();
        assert!((m.dvr - 0.2).abs() < 1e-12);
        assert!(m.dvr_defined);
    }

    #[test]
    fn fully_busy_resources_give_unit_ru() {
        let mut a = row(0, "R1");
        a.used_bandwidth_s = 100.0;
        a.used_vm_s = 50.0;
        let mut b = row(1, "R1");
        b.used_bandwidth_s = 100.0;
        b.used_vm_s = 50.0;
        let m = compute_metrics(&log(vec![a, b])).unwrap();
        assert!((m.ru - 1.0).abs() < 1e-12);
    }

    #[test]
    fn utilization_is_time_weighted() {
        let mut a = row(0, "R1");
        a.rented_bandwidth_s = 300.0;
        a.used_bandwidth_s = 300.0;
        let b = row(1, "R1");
        let m = compute_metrics(&log(vec![a, b])).unwrap();
        assert!((m.bandwidth_utilization - 0.75).abs() < 1e-12);
    }

    #[test]
    fn profit_and_breakdown() {
        let mut a = row(0, "R1");
        a.revenue = 10.0;
        a.cost = 4.0;
        a.completed = 2;
        a.upload_s_sum = 1.0;
        a.queue_s_sum = 0.5;
        a.exec_s_sum = 0.3;
        let mut b = row(0, "R2");
        b.revenue = 1.0;
        b.cost = 3.0;
        let m = compute_metrics(&log(vec![a, b])).unwrap();
        assert_eq!(m.profit, 4.0);
        assert_eq!(m.region_profit, vec![("R1".to_string(), 6.0), ("R2".to_string(), -2.0)]);
        assert_eq!((m.mean_upload_s, m.mean_queue_s, m.mean_exec_s), (0.5, 0.25, 0.15));
    }
}
