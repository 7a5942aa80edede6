//! Per-region request traffic: ingestion of raw cellular activity dumps,
//! min–max rescaling onto integer user counts, and synthetic seasonal
//! traffic generation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling period of the raw activity records.
pub const RAW_SLOT_MS: u64 = 600_000;
pub const DEFAULT_SLOT_DURATION_S: f64 = 600.0;
/// Short slots in one day at 10-minute resolution.
pub const SLOTS_PER_DAY: usize = 144;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawTrafficRecord {
    pub cell_id: u64,
    pub timestamp_ms: u64,
    pub internet_activity: f64,
}

/// Real-valued activity per region on an aligned 10-minute grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub region_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub start_ms: u64,
    pub slot_duration_s: f64,
}

impl RawSeries {
    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of [`ingest_raw`], with the warning counters.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub series: RawSeries,
    pub skipped_rows: usize,
    pub filled_gaps: usize,
}

impl IngestReport {
    pub fn warnings(&self) -> usize {
        self.skipped_rows + self.filled_gaps
    }
}

/// Integer request counts per region and short slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSeries {
    region_ids: Vec<String>,
    counts: Vec<Vec<u32>>,
    slot_duration_ms: u64,
}

impl TrafficSeries {
    pub fn new(region_ids: Vec<String>, counts: Vec<Vec<u32>>, slot_duration_s: f64) -> Result<Self> {
        if region_ids.len() != counts.len() || region_ids.is_empty() {
            return Err(Error::domain("one count sequence per region is required"));
        }
        let len = counts[0].len();
        if counts.iter().any(|c| c.len() != len) {
            return Err(Error::domain("all regions must have equal sequence length"));
        }
        if !(slot_duration_s > 0.0) {
            return Err(Error::domain("slot duration must be > 0"));
        }
        Ok(Self {
            region_ids,
            counts,
            slot_duration_ms: (slot_duration_s * 1000.0).round() as u64,
        })
    }

    pub fn region_ids(&self) -> &[String] {
        &self.region_ids
    }

    pub fn num_regions(&self) -> usize {
        self.region_ids.len()
    }

    pub fn len(&self) -> usize {
        self.counts[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slot_duration_s(&self) -> f64 {
        self.slot_duration_ms as f64 / 1000.0
    }

    pub fn counts(&self, region: usize) -> &[u32] {
        &self.counts[region]
    }

    pub fn count(&self, region: usize, slot: usize) -> u32 {
        self.counts[region][slot]
    }

    pub fn region_index(&self, region_id: &str) -> Option<usize> {
        self.region_ids.iter().position(|r| r == region_id)
    }

    pub fn max_count(&self) -> u32 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Checks that the length covers a whole number of long slots.
    pub fn check_divisible(&self, short_slots_per_long: usize) -> Result<()> {
        if short_slots_per_long == 0 || self.len() % short_slots_per_long != 0 {
            return Err(Error::domain(format!(
                "series length {} not divisible by {short_slots_per_long} short slots per long slot",
                self.len()
            )));
        }
        Ok(())
    }

    /// Sub-series over `range` of short slots.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start > range.end {
            return Err(Error::domain(format!(
                "window {range:?} outside series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            region_ids: self.region_ids.clone(),
            counts: self.counts.iter().map(|c| c[range.clone()].to_vec()).collect(),
            slot_duration_ms: self.slot_duration_ms,
        })
    }

    /// Counts multiplied by `factor`, rounded, clipped to `cap`.
    pub fn scaled(&self, factor: f64, cap: u32) -> Self {
        let counts = self
            .counts
            .iter()
            .map(|c| {
                c.iter()
                    .map(|&n| ((f64::from(n) * factor).round().max(0.0) as u32).min(cap))
                    .collect()
            })
            .collect();
        Self {
            region_ids: self.region_ids.clone(),
            counts,
            slot_duration_ms: self.slot_duration_ms,
        }
    }

    /// Mean count per region.
    pub fn mean_counts(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| c.iter().map(|&n| f64::from(n)).sum::<f64>() / c.len().max(1) as f64)
            .collect()
    }

    /// Writes the canonical `region_id,slot_index,count` file.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["region_id", "slot_index", "count"])?;
        for (r, id) in self.region_ids.iter().enumerate() {
            for (t, n) in self.counts[r].iter().enumerate() {
                w.write_record([id.as_str(), &t.to_string(), &n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a canonical file. Regions keep their first-appearance order.
    pub fn read_csv(path: impl AsRef<Path>, slot_duration_s: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut order: Vec<String> = Vec::new();
        let mut cells: BTreeMap<String, BTreeMap<usize, u32>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::domain(format!("expected 3 columns, found {}", rec.len())));
            }
            let id = rec[0].to_string();
            let slot: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad slot index {:?}", &rec[1])))?;
            let count: u32 = rec[2]
                .trim()
                .parse()
                .map_err(|_| Error::domain(format!("bad count {:?}", &rec[2])))?;
            if !cells.contains_key(&id) {
                order.push(id.clone());
            }
            cells.entry(id).or_default().insert(slot, count);
        }
        let mut counts = Vec::with_capacity(order.len());
        for id in &order {
            let m = &cells[id];
            let len = m.len();
            if m.keys().copied().ne(0..len) {
                return Err(Error::domain(format!("region {id} has non-contiguous slot indices")));
            }
            counts.push(m.values().copied().collect());
        }
        Self::new(order, counts, slot_duration_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Comma,
    Whitespace,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

/// Column positions of (cell, timestamp, internet activity).
#[derive(Debug, Clone, Copy)]
struct Layout {
    cell: usize,
    ts: usize,
    internet: usize,
    width: usize,
}

impl Layout {
    fn from_header(fields: &[&str]) -> Option<Self> {
        let find = |names: &[&str]| {
            fields
                .iter()
                .position(|f| names.iter().any(|n| f.eq_ignore_ascii_case(n)))
        };
        Some(Self {
            cell: find(&["cell_id", "square_id", "cellid", "squareid"])?,
            ts: find(&["timestamp_ms", "time_interval", "timeinterval", "timestamp"])?,
            internet: find(&["internet_activity", "internet"])?,
            width: fields.len(),
        })
    }

    /// Headerless files: three columns, or the eight-column dump layout
    /// (cell, time, country, sms in/out, call in/out, internet).
    fn from_width(width: usize) -> Option<Self> {
        match width {
            3 => Some(Self { cell: 0, ts: 1, internet: 2, width }),
            8 => Some(Self { cell: 0, ts: 1, internet: 7, width }),
            _ => None,
        }
    }

    fn parse(&self, fields: &[&str]) -> Option<RawTrafficRecord> {
        if fields.len() != self.width {
            return None;
        }
        let cell_id = fields[self.cell].parse().ok()?;
        let timestamp_ms = fields[self.ts].parse().ok()?;
        // empty activity fields mean no recorded activity
        let raw = fields[self.internet];
        let internet_activity = if raw.is_empty() { 0.0 } else { raw.parse().ok()? };
        if !(internet_activity >= 0.0 && f64::is_finite(internet_activity)) {
            return None;
        }
        Some(RawTrafficRecord {
            cell_id,
            timestamp_ms,
            internet_activity,
        })
    }
}

/// Reads raw activity records for `cell_ids` and aligns them on the 10-minute
/// grid. Several rows for the same (cell, interval) are summed. Intervals
/// with no record are filled with zero and counted as warnings; unparseable
/// rows are skipped and counted as well.
pub fn ingest_raw(path: impl AsRef<Path>, cell_ids: &[u64]) -> Result<IngestReport> {
    let file = File::open(path.as_ref())?;
    ingest_reader(BufReader::new(file), cell_ids)
}

pub fn ingest_reader(reader: impl BufRead, cell_ids: &[u64]) -> Result<IngestReport> {
    let mut layout: Option<Layout> = None;
    let mut delimiter = None;
    let mut skipped = 0usize;
    let mut sums: BTreeMap<u64, BTreeMap<u64, f64>> = BTreeMap::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| Delimiter::detect(&line));
        let fields = delim.split(&line);
        let lay = match layout {
            Some(l) => l,
            None => {
                let first_is_numeric = fields.first().is_some_and(|f| f.parse::<u64>().is_ok());
                let l = if first_is_numeric {
                    Layout::from_width(fields.len())
                } else {
                    Layout::from_header(&fields)
                };
                match l {
                    Some(l) => {
                        layout = Some(l);
                        if !first_is_numeric {
                            continue;
                        }
                        l
                    }
                    None => {
                        return Err(Error::domain(format!(
                            "cannot infer traffic file layout from line {}",
                            lineno + 1
                        )))
                    }
                }
            }
        };
        match lay.parse(&fields) {
            Some(rec) => {
                if cell_ids.contains(&rec.cell_id) {
                    *sums
                        .entry(rec.cell_id)
                        .or_default()
                        .entry(rec.timestamp_ms)
                        .or_insert(0.0) += rec.internet_activity;
                }
            }
            None => {
                skipped += 1;
                warn!("skipping unparseable traffic row {}", lineno + 1);
            }
        }
    }

    for id in cell_ids {
        if !sums.contains_key(id) {
            return Err(Error::UnknownCell(*id));
        }
    }
    let start = sums
        .values()
        .filter_map(|m| m.keys().next())
        .min()
        .copied()
        .unwrap_or(0);
    let start = start - start % RAW_SLOT_MS;
    let end = sums
        .values()
        .filter_map(|m| m.keys().next_back())
        .max()
        .copied()
        .unwrap_or(start);
    let len = ((end - start) / RAW_SLOT_MS + 1) as usize;

    let mut filled = 0usize;
    let mut values = Vec::with_capacity(cell_ids.len());
    for id in cell_ids {
        let mut seq = vec![0.0; len];
        let mut seen = vec![false; len];
        for (&ts, &v) in &sums[id] {
            let slot = ((ts - start) / RAW_SLOT_MS) as usize;
            seq[slot] += v;
            seen[slot] = true;
        }
        let gaps = seen.iter().filter(|s| !**s).count();
        if gaps > 0 {
            warn!("cell {id}: zero-filled {gaps} missing intervals");
        }
        filled += gaps;
        values.push(seq);
    }
    Ok(IngestReport {
        series: RawSeries {
            region_ids: cell_ids.iter().map(|c| c.to_string()).collect(),
            values,
            start_ms: start,
            slot_duration_s: RAW_SLOT_MS as f64 / 1000.0,
        },
        skipped_rows: skipped,
        filled_gaps: filled,
    })
}

/// Per-region min–max map of raw activity onto integers in `[lo, hi]`,
/// rounding to nearest with ties away from zero. A constant region maps
/// entirely to `lo`.
pub fn rescale(raw: &RawSeries, lo: u32, hi: u32) -> Result<TrafficSeries> {
    if hi <= lo {
        return Err(Error::domain(format!("rescale range [{lo}, {hi}] is empty")));
    }
    let span = f64::from(hi - lo);
    let counts = raw
        .values
        .iter()
        .map(|seq| {
            let min = seq.iter().copied().fold(f64::INFINITY, f64::min);
            let max = seq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            seq.iter()
                .map(|&x| {
                    if !(max > min) {
                        return lo;
                    }
                    let y = f64::from(lo) + (x - min) / (max - min) * span;
                    (y.round() as u32).clamp(lo, hi)
                })
                .collect()
        })
        .collect();
    TrafficSeries::new(raw.region_ids.clone(), counts, raw.slot_duration_s)
}

/// Rescales an integer series (identity when every region already spans
/// exactly `[lo, hi]`).
pub fn rescale_counts(series: &TrafficSeries, lo: u32, hi: u32) -> Result<TrafficSeries> {
    let raw = RawSeries {
        region_ids: series.region_ids.clone(),
        values: series
            .counts
            .iter()
            .map(|c| c.iter().map(|&n| f64::from(n)).collect())
            .collect(),
        start_ms: 0,
        slot_duration_s: series.slot_duration_s(),
    };
    rescale(&raw, lo, hi)
}

/// Parameters of the synthetic daily-seasonal generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTraffic {
    pub seed: u64,
    pub regions: Vec<String>,
    pub days: usize,
    pub base: f64,
    pub amplitude: f64,
    pub noise_sd: f64,
    #[serde(default = "default_slots_per_day")]
    pub slots_per_day: usize,
}

fn default_slots_per_day() -> usize {
    SLOTS_PER_DAY
}

/// Daily sinusoid per region, phase-shifted by `2π·r/R`, plus Gaussian
/// noise, clipped at zero and rounded.
pub fn synthesize(params: &SyntheticTraffic) -> Result<TrafficSeries> {
    let p = params;
    if p.regions.is_empty() || p.days == 0 || p.slots_per_day == 0 {
        return Err(Error::domain("synthetic traffic needs regions, days and slots"));
    }
    if !(p.noise_sd >= 0.0) || !(p.amplitude >= 0.0) {
        return Err(Error::domain("noise and amplitude must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let noise = Normal::new(0.0, p.noise_sd).map_err(|e| Error::domain(e.to_string()))?;
    let n_regions = p.regions.len();
    let len = p.days * p.slots_per_day;
    let mut counts = vec![Vec::with_capacity(len); n_regions];
    for t in 0..len {
        let phase_of_day = (t % p.slots_per_day) as f64 / p.slots_per_day as f64;
        for (r, seq) in counts.iter_mut().enumerate() {
            let phase = std::f64::consts::TAU * r as f64 / n_regions as f64;
            let clean = p.base + p.amplitude * (std::f64::consts::TAU * phase_of_day + phase).sin();
            let eps = if p.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            seq.push((clean + eps).max(0.0).round() as u32);
        }
    }
    TrafficSeries::new(p.regions.clone(), counts, DEFAULT_SLOT_DURATION_S)
}

/// Step pattern: `low` requests during the first half of every day and
/// `high` during the second half, plus Gaussian noise.
pub fn synthesize_step(
    seed: u64,
    regions: &[String],
    days: usize,
    low: f64,
    high: f64,
    noise_sd: f64,
    slots_per_day: usize,
) -> Result<TrafficSeries> {
    if regions.is_empty() || days == 0 || slots_per_day < 2 {
        return Err(Error::domain("step traffic needs regions, days and >= 2 slots per day"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd.max(0.0)).map_err(|e| Error::domain(e.to_string()))?;
    let len = days * slots_per_day;
    let mut counts = vec![Vec::with_capacity(len); regions.len()];
    for t in 0..len {
        let level = if t % slots_per_day < slots_per_day / 2 { low } else { high };
        for seq in counts.iter_mut() {
            let eps = if noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            seq.push((level + eps).max(0.0).round() as u32);
        }
    }
    TrafficSeries::new(regions.to_vec(), counts, DEFAULT_SLOT_DURATION_S)
}

/// Writes raw records in the three-column tab-separated layout accepted by
/// [`ingest_raw`].
pub fn write_raw_records(path: impl AsRef<Path>, records: &[RawTrafficRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "cell_id\ttimestamp_ms\tinternet_activity")?;
    for r in records {
        writeln!(f, "{}\t{}\t{}", r.cell_id, r.timestamp_ms, r.internet_activity)?;
    }
    f.flush()?;
    Ok(())
}
