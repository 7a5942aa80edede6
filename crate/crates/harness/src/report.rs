//! Summary tables and SVG plots over finished runs.

use std::io::Write;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use sliceoff_learn::agent::EpisodeStats;

use crate::config::Method;
use crate::metrics::{compute_metrics, write_summary_csv, Metrics, MetricsLog};
use crate::sweep::{mean_curve, SweepRow};
use crate::{Error, Result};

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Plot(format!("{e:?}"))
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-method metrics in first-appearance order.
fn group(entries: &[(Method, u64, Metrics)]) -> Vec<(Method, Vec<&Metrics>)> {
    let mut out: Vec<(Method, Vec<&Metrics>)> = Vec::new();
    for (m, _, metrics) in entries {
        match out.iter_mut().find(|(k, _)| k == m) {
            Some((_, v)) => v.push(metrics),
            None => out.push((*m, vec![metrics])),
        }
    }
    out
}

fn padded_range(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-9);
    (lo - 0.05 * span)..(hi + 0.05 * span)
}

/// Bar per method with a mean ± sd whisker.
fn bar_chart(path: &Path, title: &str, y_desc: &str, bars: &[(String, f64, f64)]) -> Result<()> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let lo = bars.iter().map(|b| b.1 - b.2).fold(0.0, f64::min);
    let hi = bars.iter().map(|b| b.1 + b.2).fold(0.0, f64::max);
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..bars.len() as f64, padded_range(lo, hi))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(bars.len().max(1) * 2)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 {
                labels.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (i, (_, mean, sd)) in bars.iter().enumerate() {
        let x = i as f64;
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x + 0.15, 0.0), (x + 0.85, *mean)],
                color.filled(),
            )))
            .map_err(plot_err)?;
        if *sd > 0.0 {
            let c = x + 0.5;
            chart
                .draw_series([
                    PathElement::new(vec![(c, mean - sd), (c, mean + sd)], BLACK),
                    PathElement::new(vec![(c - 0.1, mean - sd), (c + 0.1, mean - sd)], BLACK),
                    PathElement::new(vec![(c - 0.1, mean + sd), (c + 0.1, mean + sd)], BLACK),
                ])
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Stacked upload / queue / execution bars per method.
fn breakdown_chart(path: &Path, groups: &[(Method, Vec<&Metrics>)]) -> Result<()> {
    let parts: Vec<[f64; 3]> = groups
        .iter()
        .map(|(_, ms)| {
            let m = |f: fn(&Metrics) -> f64| mean_sd(&ms.iter().map(|x| f(x)).collect::<Vec<_>>()).0;
            [m(|x| x.mean_upload_s), m(|x| x.mean_queue_s), m(|x| x.mean_exec_s)]
        })
        .collect();
    let hi = parts.iter().map(|p| p.iter().sum::<f64>()).fold(0.0, f64::max);
    let labels: Vec<String> = groups.iter().map(|(m, _)| m.to_string()).collect();
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean task time breakdown", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..groups.len() as f64, 0f64..(hi * 1.1).max(1e-6))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len().max(1) * 2)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 {
                labels.get(i).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("seconds")
        .draw()
        .map_err(plot_err)?;
    for (k, name) in ["upload", "queue", "execution"].iter().enumerate() {
        let color = PALETTE[k];
        chart
            .draw_series(parts.iter().enumerate().map(|(i, p)| {
                let base: f64 = p[..k].iter().sum();
                let x = i as f64;
                Rectangle::new([(x + 0.15, base), (x + 0.85, base + p[k])], color.filled())
            }))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Line chart of `(x, mean, sd)` series with shaded ± sd bands.
fn band_chart(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(String, Vec<(f64, f64, f64)>)],
) -> Result<()> {
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, sd) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - sd);
        y1 = y1.max(m + sd);
    }
    if !x0.is_finite() {
        return Err(Error::Empty("nothing to plot".into()));
    }
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(padded_range(x0, x1), padded_range(y0, y1))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(plot_err)?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.iter().any(|p| p.2 > 0.0) {
            let mut band: Vec<(f64, f64)> = s.iter().map(|&(x, m, sd)| (x, m + sd)).collect();
            band.extend(s.iter().rev().map(|&(x, m, sd)| (x, m - sd)));
            chart
                .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
                .map_err(plot_err)?;
        }
        chart
            .draw_series(LineSeries::new(s.iter().map(|&(x, m, _)| (x, m)), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Summary CSV and text plus profit, cost and time-breakdown plots for a set
/// of runs. Returns the written paths.
pub fn report(logs: &[MetricsLog], out: &Path) -> Result<Vec<PathBuf>> {
    if logs.is_empty() {
        return Err(Error::Empty("report needs at least one log".into()));
    }
    std::fs::create_dir_all(out)?;
    let entries: Vec<(Method, u64, Metrics)> = logs
        .iter()
        .map(|l| Ok((l.method, l.seed, compute_metrics(l)?)))
        .collect::<Result<_>>()?;
    let groups = group(&entries);
    let mut written = Vec::new();

    let csv = out.join("summary.csv");
    write_summary_csv(&csv, &entries)?;
    written.push(csv);

    let txt = out.join("summary.txt");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&txt)?);
    writeln!(f, "{:<22} {:>5} {:>12} {:>12} {:>8} {:>8}", "method", "runs", "profit", "cost", "RU", "DVR")?;
    for (m, ms) in &groups {
        let stat = |g: fn(&Metrics) -> f64| mean_sd(&ms.iter().map(|x| g(x)).collect::<Vec<_>>());
        let (p, psd) = stat(|x| x.profit);
        writeln!(
            f,
            "{:<22} {:>5} {:>12} {:>12.3} {:>8.4} {:>8.4}",
            m.name(),
            ms.len(),
            format!("{p:.3}±{psd:.3}"),
            stat(|x| x.cost).0,
            stat(|x| x.ru).0,
            stat(|x| x.dvr).0
        )?;
    }
    f.flush()?;
    written.push(txt);

    let bars = |g: fn(&Metrics) -> f64| -> Vec<(String, f64, f64)> {
        groups
            .iter()
            .map(|(m, ms)| {
                let (mean, sd) = mean_sd(&ms.iter().map(|x| g(x)).collect::<Vec<_>>());
                (m.to_string(), mean, sd)
            })
            .collect()
    };
    let profit = out.join("profit.svg");
    bar_chart(&profit, "Profit per method", "profit ($)", &bars(|x| x.profit))?;
    written.push(profit);
    let cost = out.join("cost.svg");
    bar_chart(&cost, "Renting cost per method", "cost ($)", &bars(|x| x.cost))?;
    written.push(cost);
    let breakdown = out.join("breakdown.svg");
    breakdown_chart(&breakdown, &groups)?;
    written.push(breakdown);
    Ok(written)
}

/// Episode-reward curves, mean ± sd across the runs of each label.
pub fn plot_convergence(path: &Path, curves: &[(String, Vec<Vec<EpisodeStats>>)]) -> Result<()> {
    if curves.is_empty() || curves.iter().any(|(_, runs)| runs.is_empty()) {
        return Err(Error::Empty("no convergence curves".into()));
    }
    let series: Vec<(String, Vec<(f64, f64, f64)>)> = curves
        .iter()
        .map(|(label, runs)| {
            let len = runs.iter().map(Vec::len).min().unwrap_or(0);
            let pts = (0..len)
                .map(|e| {
                    let xs: Vec<f64> = runs.iter().map(|r| r[e].reward).collect();
                    let (m, sd) = mean_sd(&xs);
                    (e as f64, m, sd)
                })
                .collect();
            (label.clone(), pts)
        })
        .collect();
    band_chart(path, "Training convergence", "episode", "episode reward", &series)
}

/// Profit, RU and DVR against the swept value, one line per method.
pub fn plot_sweep(out: &Path, rows: &[SweepRow]) -> Result<Vec<PathBuf>> {
    let first = rows.first().ok_or_else(|| Error::Empty("no sweep rows".into()))?;
    std::fs::create_dir_all(out)?;
    let axis = first.axis.name();
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let stats: [(&str, fn(&Metrics) -> f64); 3] = [("profit", |m| m.profit), ("ru", |m| m.ru), ("dvr", |m| m.dvr)];
    let mut written = Vec::new();
    for (name, stat) in stats {
        let series: Vec<(String, Vec<(f64, f64, f64)>)> = methods
            .iter()
            .map(|&m| {
                let pts = mean_curve(rows, m, stat)
                    .into_iter()
                    .map(|(v, _)| {
                        let xs: Vec<f64> = rows
                            .iter()
                            .filter(|r| r.method == m && r.value == v)
                            .map(|r| stat(&r.metrics))
                            .collect();
                        let (mean, sd) = mean_sd(&xs);
                        (v, mean, sd)
                    })
                    .collect();
                (m.to_string(), pts)
            })
            .collect();
        let path = out.join(format!("sweep_{axis}_{name}.svg"));
        band_chart(&path, &format!("{name} vs {axis}"), axis, name, &series)?;
        written.push(path);
    }
    Ok(written)
}
