use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use sliceoff_harness::config::{agent_kind_name, ExperimentConfig, Method, SweepAxis};
use sliceoff_harness::metrics::{compute_metrics, MetricsLog};
use sliceoff_harness::report::{plot_convergence, plot_sweep, report};
use sliceoff_harness::run::{agent_path, predictor_path, run_experiment, write_run, Components};
use sliceoff_harness::sweep::{sweep, write_sweep_csv};
use sliceoff_harness::train::{final_decile_mean, train_agents, train_forecaster};
use sliceoff_harness::Result;
use sliceoff_learn::agent::write_episode_csv;
use sliceoff_learn::predictor::write_loss_curve;

#[derive(Parser)]
#[command(name = "sliceoff", about = "Network slicing and edge offloading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; the bundled default when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Seed(s), overriding the configuration; repeat or comma-separate.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Method, overriding the configuration.
    #[arg(long, short)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured traffic series (history days plus evaluation day).
    PrepareTraffic(Common),
    /// Train the traffic forecaster on the history days.
    TrainPredictor(Common),
    /// Train the offloading agent(s) used by the method.
    TrainAgent(Common),
    /// Evaluate the method on the evaluation day for every seed.
    Run(Common),
    /// Sweep one axis over methods and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// traffic_multiplier, max_delay or omega.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Methods to compare, overriding the configuration.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Summaries and plots over every run found under the output directory.
    Report(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(out) = &c.out {
        cfg.experiment.output_dir = out.clone();
    }
    if !c.seeds.is_empty() {
        cfg.experiment.seeds = c.seeds.clone();
    }
    if let Some(m) = &c.method {
        cfg.experiment.method = Method::parse(m)?;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.experiment.output_dir)?;
    std::fs::write(cfg.experiment.output_dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(cfg)
}

fn find_logs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_logs(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareTraffic(c) => {
            let cfg = load_config(&c)?;
            let path = cfg.experiment.output_dir.join("traffic.csv");
            cfg.traffic_series()?.write_csv(&path)?;
            info!("wrote {}", path.display());
        }
        Command::TrainPredictor(c) => {
            let cfg = load_config(&c)?;
            let trained = train_forecaster(&cfg)?;
            let dir = &cfg.experiment.output_dir;
            trained.model.save(predictor_path(dir))?;
            write_loss_curve(dir.join("predictor_loss.csv"), &trained.curve)?;
            info!("predictor best epoch {}", trained.best_epoch);
        }
        Command::TrainAgent(c) => {
            let cfg = load_config(&c)?;
            let kind = cfg.experiment.method.agent_kind();
            let name = agent_kind_name(kind);
            let dir = cfg.experiment.output_dir.clone();
            let mut runs = Vec::new();
            for (i, &seed) in cfg.experiment.seeds.iter().enumerate() {
                let trained = train_agents(&cfg, kind, seed)?;
                let rows: Vec<_> = trained.curves.iter().flatten().copied().collect();
                write_episode_csv(dir.join(format!("convergence_{name}_seed{seed}.csv")), &rows)?;
                // the first seed's better agent is the one runs load
                if i == 0 {
                    trained.best_agent().save(agent_path(&dir, kind))?;
                }
                info!("{name} seed {seed}: final-decile reward {:.3}", final_decile_mean(trained.best_curve()));
                runs.push(trained.best_curve().to_vec());
            }
            plot_convergence(&dir.join(format!("convergence_{name}.svg")), &[(name.to_string(), runs)])?;
        }
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let method = cfg.experiment.method;
            let components = Components::load(&cfg, &[method])?;
            let mut logs = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let log = run_experiment(&cfg, &components, seed)?;
                write_run(&cfg.run_dir(method, seed), &log)?;
                let m = compute_metrics(&log)?;
                println!(
                    "{{\"method\":\"{method}\",\"seed\":{seed},\"profit\":{},\"ru\":{},\"dvr\":{}}}",
                    m.profit, m.ru, m.dvr
                );
                logs.push(log);
            }
            report(&logs, &cfg.experiment.output_dir.join(format!("report_{method}")))?;
        }
        Command::Sweep {
            common,
            axis,
            values,
            methods,
        } => {
            let cfg = load_config(&common)?;
            let axis = match axis {
                Some(a) => SweepAxis::parse(&a)?,
                None => cfg.sweep.axis,
            };
            let values = if values.is_empty() { cfg.sweep.values.clone() } else { values };
            let methods = if methods.is_empty() {
                cfg.sweep.methods.clone()
            } else {
                methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?
            };
            let components = Components::load(&cfg, &methods)?;
            let dir = cfg.experiment.output_dir.join(format!("sweep_{}", axis.name()));
            let rows = sweep(&cfg, &components, axis, &values, &methods, Some(&dir))?;
            write_sweep_csv(dir.join("sweep.csv"), &rows)?;
            plot_sweep(&dir, &rows)?;
        }
        Command::Report(c) => {
            let cfg = load_config(&c)?;
            let mut paths = Vec::new();
            find_logs(&cfg.experiment.output_dir, &mut paths)?;
            let logs = paths
                .iter()
                .map(MetricsLog::read_csv)
                .collect::<Result<Vec<_>>>()?;
            let written = report(&logs, &cfg.experiment.output_dir.join("report"))?;
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
