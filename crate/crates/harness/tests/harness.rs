mod common;

use std::process::Command;

use common::{smoke_components, smoke_config};
use proptest::prelude::*;
use sliceoff_core::model::{renting_cost, SliceDecision};
use sliceoff_harness::config::{ExperimentConfig, Method, SweepAxis};
use sliceoff_harness::metrics::{compute_metrics, MetricsLog};
use sliceoff_harness::report::{plot_convergence, report};
use sliceoff_harness::run::{run_experiment, Components};
use sliceoff_harness::sweep::{sweep, write_sweep_csv};
use sliceoff_harness::train::train_agents;
use sliceoff_learn::agent::AgentKind;

fn with_method(cfg: &ExperimentConfig, m: Method) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment.method = m;
    c
}

fn components() -> (ExperimentConfig, Components) {
    let cfg = smoke_config();
    let c = smoke_components(&cfg, &[AgentKind::DualDistill]);
    (cfg, c)
}

#[test]
fn smoke_run_has_one_row_per_long_slot_and_region() {
    let (cfg, c) = components();
    let log = run_experiment(&cfg, &c, 0).unwrap();
    assert_eq!(log.rows.len(), 2 * 3);
    let keys: Vec<(usize, &str)> = log.rows.iter().map(|r| (r.long_slot, r.region.as_str())).collect();
    assert_eq!(keys, [(0, "R1"), (0, "R2"), (0, "R3"), (1, "R1"), (1, "R2"), (1, "R3")]);
}

#[test]
fn repeated_runs_are_identical() {
    let (cfg, c) = components();
    for m in [Method::StaticOff, Method::SliceOff, Method::NaiveMovingAverage] {
        let cfg = with_method(&cfg, m);
        assert_eq!(run_experiment(&cfg, &c, 3).unwrap(), run_experiment(&cfg, &c, 3).unwrap());
    }
}

#[test]
fn static_decisions_never_change() {
    let (mut cfg, c) = components();
    cfg.scenario.long_slots = 4;
    cfg.scenario.short_slots_per_long = 1;
    cfg.predictor.horizon_slots = 1;
    let log = run_experiment(&cfg, &c, 1).unwrap();
    for region in ["R1", "R2", "R3"] {
        let rows: Vec<_> = log.rows.iter().filter(|r| r.region == region).collect();
        assert_eq!(rows.len(), 4);
        assert!(rows
            .iter()
            .all(|r| (r.bandwidth_tier, r.vm_tier, r.cost) == (rows[0].bandwidth_tier, rows[0].vm_tier, rows[0].cost)));
    }
    let per_slot = log.cost_per_long_slot();
    assert!(per_slot.iter().all(|c| *c == per_slot[0]));
}

/// Profit recomputed from the per-task trace and the rented tiers.
fn independent_profit(cfg: &ExperimentConfig, log: &MetricsLog) -> f64 {
    let scenario = cfg.scenario().unwrap();
    let catalogs = scenario.catalogs();
    let revenue: f64 = log.trace.iter().map(|t| t.record.revenue).sum();
    let mut cost = 0.0;
    for h in 0..cfg.scenario.long_slots {
        let decisions: Vec<SliceDecision> = catalogs
            .iter()
            .map(|cat| {
                let row = log
                    .rows
                    .iter()
                    .find(|r| r.long_slot == h && r.region == cat.region_id)
                    .unwrap();
                SliceDecision::from_indices(cat, row.bandwidth_tier - 1, row.vm_tier - 1).unwrap()
            })
            .collect();
        cost += renting_cost(&decisions, &catalogs).unwrap();
    }
    revenue - cost
}

#[test]
fn profit_matches_the_task_trace() {
    let (cfg, c) = components();
    for m in [Method::SliceOff, Method::StaticOff, Method::NaiveLastValue] {
        let cfg = with_method(&cfg, m);
        let log = run_experiment(&cfg, &c, 2).unwrap();
        let metrics = compute_metrics(&log).unwrap();
        let expected = independent_profit(&cfg, &log);
        assert!((metrics.profit - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{m}");
        let tasks: usize = log.rows.iter().map(|r| r.tasks).sum();
        assert_eq!(tasks, log.trace.len());
    }
}

#[test]
fn slices_change_only_at_long_slot_boundaries() {
    let (cfg, c) = components();
    let cfg = with_method(&cfg, Method::SliceOff);
    let log = run_experiment(&cfg, &c, 4).unwrap();
    assert_eq!(log.slices.len(), cfg.scenario.long_slots * 3);
    // every short slot of a long slot sees the rented bandwidth of that slot's row
    let window = cfg.scenario.max_delay_s;
    let t = cfg.scenario.short_slots_per_long as f64;
    let scenario = cfg.scenario().unwrap();
    for row in &log.rows {
        let cat = &scenario.regions.iter().find(|r| r.catalog.region_id == row.region).unwrap().catalog;
        let bw = cat.bandwidth_tiers_hz[row.bandwidth_tier - 1];
        assert!((row.rented_bandwidth_s - bw * window * t).abs() <= 1e-6 * bw * window);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn utilization_and_violation_rates_are_bounded(seed in 0u64..1000, delay in 0.2f64..2.0, mult in 0.5f64..2.5) {
        let (cfg, c) = components();
        let cfg = with_method(&cfg, Method::NaiveLastValue)
            .with_axis(SweepAxis::MaxDelay, delay)
            .with_axis(SweepAxis::TrafficMultiplier, mult);
        let log = run_experiment(&cfg, &c, seed).unwrap();
        let m = compute_metrics(&log).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.ru));
        prop_assert!((0.0..=1.0).contains(&m.dvr));
        for r in &log.rows {
            prop_assert!(r.used_bandwidth_s <= r.rented_bandwidth_s * (1.0 + 1e-12));
            prop_assert!(r.used_vm_s <= r.rented_vm_s * (1.0 + 1e-12));
            prop_assert!(r.violations <= r.tasks);
        }
    }
}

#[test]
fn multiplied_traffic_uses_grouped_actions() {
    let (cfg, c) = components();
    let cfg = with_method(&cfg, Method::SliceOff).with_axis(SweepAxis::TrafficMultiplier, 2.0);
    let log = run_experiment(&cfg, &c, 0).unwrap();
    assert!(log.trace.iter().map(|t| t.record.user).max().unwrap() >= 10);
}

#[test]
fn sweep_is_row_complete() {
    let (cfg, c) = components();
    let values = [0.6, 0.8, 1.0, 1.2];
    let methods = [Method::SliceOff, Method::StaticOff];
    let rows = sweep(&cfg, &c, SweepAxis::MaxDelay, &values, &methods, None).unwrap();
    assert_eq!(rows.len(), 4 * 2 * 2);
    for v in values {
        for m in methods {
            for s in &cfg.experiment.seeds {
                assert_eq!(
                    rows.iter().filter(|r| r.value == v && r.method == m && r.seed == *s).count(),
                    1
                );
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    write_sweep_csv(dir.path().join("s.csv"), &rows).unwrap();
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn unit_multiplier_is_the_identity_point() {
    let (cfg, c) = components();
    let cfg = with_method(&cfg, Method::SliceOff);
    let rows = sweep(&cfg, &c, SweepAxis::TrafficMultiplier, &[1.0], &[Method::SliceOff], None).unwrap();
    for r in rows {
        let plain = compute_metrics(&run_experiment(&cfg, &c, r.seed).unwrap()).unwrap();
        assert_eq!(r.metrics, plain);
    }
}

#[test]
fn missing_components_fail_before_simulating() {
    let cfg = with_method(&smoke_config(), Method::SliceOff);
    let err = run_experiment(&cfg, &Components::default(), 0).unwrap_err();
    assert_eq!(err.kind(), "missing_component");
    let mut no_predictor = smoke_components(&cfg, &[]);
    no_predictor.predictor = None;
    assert!(run_experiment(&cfg, &no_predictor, 0).is_err());
    let mut bad = smoke_config();
    bad.experiment.agent_checkpoint = Some("/nonexistent/agent.json".into());
    assert!(Components::load(&bad, &[Method::StaticOff]).is_err());
}

#[test]
fn csv_round_trip_and_report_files() {
    let (cfg, c) = components();
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<MetricsLog> = [0, 1, 2]
        .iter()
        .map(|&s| run_experiment(&cfg, &c, s).unwrap())
        .collect();
    let path = dir.path().join("m.csv");
    logs[0].write_csv(&path).unwrap();
    let back = MetricsLog::read_csv(&path).unwrap();
    assert_eq!(back.rows, logs[0].rows);

    let single = report(&logs[..1], &dir.path().join("one")).unwrap();
    let names: Vec<_> = single.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
    assert!(names.contains(&"profit.svg".to_string()) && names.contains(&"breakdown.svg".to_string()));
    report(&logs, &dir.path().join("multi")).unwrap();
    let a = std::fs::read(dir.path().join("multi/profit.svg")).unwrap();
    report(&logs, &dir.path().join("multi2")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("multi2/profit.svg")).unwrap());

    let t = train_agents(&cfg, AgentKind::Td3NoDistill, 5).unwrap();
    let curves = vec![("td3".to_string(), vec![t.curves[0].clone(), t.curves[0].clone()])];
    plot_convergence(&dir.path().join("conv.svg"), &curves).unwrap();
    assert!(std::fs::read_to_string(dir.path().join("conv.svg")).unwrap().contains("<svg"));
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sliceoff"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config();
    cfg.experiment.output_dir = dir.path().join("out");
    cfg.sweep.values = vec![0.8, 1.0];
    let cfg_path = dir.path().join("smoke.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();
    for args in [
        vec!["prepare-traffic", "--config", c],
        vec!["train-predictor", "--config", c],
        vec!["train-agent", "--config", c, "--method", "sliceoff", "--seed", "0"],
        vec!["run", "--config", c, "--method", "sliceoff"],
        vec!["run", "--config", c, "--method", "static_off"],
        vec!["sweep", "--config", c],
        vec!["report", "--config", c],
    ] {
        let out = cli(&args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = cfg.experiment.output_dir;
    for f in [
        "config.toml",
        "traffic.csv",
        "predictor.json",
        "agent_dual_distill.json",
        "sliceoff_seed0/metrics.csv",
        "static_off_seed1/trace.csv",
        "sweep_max_delay/sweep.csv",
        "sweep_max_delay/sweep_max_delay_profit.svg",
        "report/summary.csv",
        "report/summary.txt",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn cli_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = cli(&["run", "--out", out_dir, "--method", "sliceoff"]);
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["error"], "missing_component");
    let out = cli(&["run", "--out", out_dir, "--method", "bogus"]);
    assert!(!out.status.success());
}
