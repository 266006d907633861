//! Per-run metric series, smoothing, crossing costs and CSV I/O.
//!
//! CSV layout (schema version 1): one comment line
//! `# airfeel-metrics v1 scheme=<s> repeat=<n> q=<q> seed=<n>` followed by a
//! header row and one row per evaluation point. Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `schema_version` | always 1 |
//! | `round` | rounds completed at this evaluation |
//! | `validation_loss` | mean holdout loss |
//! | `cum_unit_energy` | Σ c_r t T1 / p_n |
//! | `cum_raw_samples` | samples acquired, summed over devices |
//! | `cum_energy_sensing_j`, `cum_energy_compute_j`, `cum_energy_comm_j` | joules, summed over devices |
//! | `cum_latency_s` | seconds |
//! | `theta_bar` | mean adaptive threshold over devices |
//! | `c_r` | denoising factor of the last round |
//! | `b_raw` | mean raw samples per device in the last round |
//!
//! With diagnostics enabled four more columns follow: `grad_norm_sq`,
//! `grad_variance`, `descent_bound`, `gen_error_bound`.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{Model, Sample};

pub const CSV_SCHEMA_VERSION: u32 = 1;

const BASE_COLUMNS: [&str; 12] = [
    "schema_version",
    "round",
    "validation_loss",
    "cum_unit_energy",
    "cum_raw_samples",
    "cum_energy_sensing_j",
    "cum_energy_compute_j",
    "cum_energy_comm_j",
    "cum_latency_s",
    "theta_bar",
    "c_r",
    "b_raw",
];
const DIAGNOSTIC_COLUMNS: [&str; 4] = ["grad_norm_sq", "grad_variance", "descent_bound", "gen_error_bound"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics {
    pub grad_norm_sq: f64,
    pub grad_variance: f64,
    pub descent_bound: f64,
    pub gen_error_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRow {
    pub round: usize,
    pub validation_loss: f64,
    pub cum_unit_energy: f64,
    pub cum_raw_samples: u64,
    pub cum_energy_sensing_j: f64,
    pub cum_energy_compute_j: f64,
    pub cum_energy_comm_j: f64,
    pub cum_latency_s: f64,
    pub theta_bar: f64,
    pub c_r: f64,
    pub b_raw: f64,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub scheme: String,
    pub repeat: usize,
    pub q: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub meta: RunMeta,
    pub rows: Vec<MetricsRow>,
}

impl MetricsRecord {
    pub fn new(meta: RunMeta) -> Self {
        Self { meta, rows: Vec::new() }
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.round <= last.round {
                return Err(Error::invalid(format!("round {} does not follow {}", row.round, last.round)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.validation_loss).collect()
    }

    pub fn has_diagnostics(&self) -> bool {
        self.rows.iter().any(|r| r.diagnostics.is_some())
    }

    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Mean loss over the holdout set.
pub fn validation_loss(model: &Model, holdout: &[Sample], exec: Exec) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::invalid("validation needs a nonempty holdout set"));
    }
    const CHUNK: usize = 256;
    let chunks = holdout.len().div_ceil(CHUNK);
    let partial = exec.try_map(chunks, |c| {
        let part = &holdout[c * CHUNK..((c + 1) * CHUNK).min(holdout.len())];
        part.iter()
            .map(|s| model.sample_loss(s))
            .sum::<Result<f64>>()
    })?;
    Ok(partial.iter().sum::<f64>() / holdout.len() as f64)
}

/// Causal moving average with linearly decaying weights.
///
/// Output `i` weights input `i - j` by `window - j` for `j < window`, and
/// divides by the sum of the weights actually covered, which corrects the
/// bias of the first `window - 1` outputs.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::invalid("cannot smooth an empty series"));
    }
    if window == 0 {
        return Err(Error::invalid("smoothing window must be at least 1"));
    }
    Ok((0..series.len())
        .map(|i| {
            let span = window.min(i + 1);
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..span {
                let w = (window - j) as f64;
                num += w * series[i - j];
                den += w;
            }
            num / den
        })
        .collect())
}

/// Costs spent by the first evaluation point whose smoothed loss is at or
/// below `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub index: usize,
    pub round: usize,
    pub unit_energy: f64,
    pub raw_samples: f64,
}

/// `None` when the smoothed series never reaches `target`.
pub fn crossing_cost(
    smoothed_loss: &[f64],
    rounds: &[usize],
    unit_energy: &[f64],
    raw_samples: &[f64],
    target: f64,
) -> Result<Option<Crossing>> {
    let n = smoothed_loss.len();
    if rounds.len() != n || unit_energy.len() != n || raw_samples.len() != n {
        return Err(Error::invalid("crossing series must have equal lengths"));
    }
    Ok(smoothed_loss.iter().position(|&l| l <= target).map(|i| Crossing {
        index: i,
        round: rounds[i],
        unit_energy: unit_energy[i],
        raw_samples: raw_samples[i],
    }))
}

/// [`crossing_cost`] on one record, smoothing its loss with `window`.
pub fn record_crossing(record: &MetricsRecord, window: usize, target: f64) -> Result<Option<Crossing>> {
    let curve = Curve::from_record(record, window)?;
    curve.crossing(target)
}

/// A smoothed loss curve with its cost axes, possibly averaged over repeats.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub rounds: Vec<usize>,
    pub loss: Vec<f64>,
    pub unit_energy: Vec<f64>,
    pub raw_samples: Vec<f64>,
}

impl Curve {
    pub fn from_record(record: &MetricsRecord, window: usize) -> Result<Self> {
        Ok(Self {
            rounds: record.rows.iter().map(|r| r.round).collect(),
            loss: smooth(&record.losses(), window)?,
            unit_energy: record.rows.iter().map(|r| r.cum_unit_energy).collect(),
            raw_samples: record.rows.iter().map(|r| r.cum_raw_samples as f64).collect(),
        })
    }

    /// Smooth each repeat, then average pointwise.
    pub fn mean_of(records: &[MetricsRecord], window: usize) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::invalid("no records to average"))?;
        let mut acc = Self::from_record(first, window)?;
        for rec in &records[1..] {
            let c = Self::from_record(rec, window)?;
            if c.rounds != acc.rounds {
                return Err(Error::invalid("records evaluate different rounds"));
            }
            for (a, b) in acc.loss.iter_mut().zip(&c.loss) {
                *a += b;
            }
            for (a, b) in acc.unit_energy.iter_mut().zip(&c.unit_energy) {
                *a += b;
            }
            for (a, b) in acc.raw_samples.iter_mut().zip(&c.raw_samples) {
                *a += b;
            }
        }
        let n = records.len() as f64;
        for v in [&mut acc.loss, &mut acc.unit_energy, &mut acc.raw_samples] {
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(acc)
    }

    pub fn crossing(&self, target: f64) -> Result<Option<Crossing>> {
        crossing_cost(&self.loss, &self.rounds, &self.unit_energy, &self.raw_samples, target)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss.last().expect("curves are nonempty")
    }

    /// Smoothed loss at the first point whose cumulative unit energy reaches
    /// `energy`, or `None` if the curve never spends that much.
    pub fn loss_at_unit_energy(&self, energy: f64) -> Option<f64> {
        self.unit_energy.iter().position(|&u| u >= energy).map(|i| self.loss[i])
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn header(diagnostics: bool) -> Vec<&'static str> {
    let mut h = BASE_COLUMNS.to_vec();
    if diagnostics {
        h.extend(DIAGNOSTIC_COLUMNS);
    }
    h
}

pub fn write_csv(record: &MetricsRecord, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let m = &record.meta;
    writeln!(
        out,
        "# airfeel-metrics v{CSV_SCHEMA_VERSION} scheme={} repeat={} q={} seed={}",
        m.scheme,
        m.repeat,
        fmt_f64(m.q),
        m.seed
    )
    .map_err(|e| Error::io(path, e))?;
    let diagnostics = record.has_diagnostics();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(diagnostics))?;
    for r in &record.rows {
        let mut fields = vec![
            CSV_SCHEMA_VERSION.to_string(),
            r.round.to_string(),
            fmt_f64(r.validation_loss),
            fmt_f64(r.cum_unit_energy),
            r.cum_raw_samples.to_string(),
            fmt_f64(r.cum_energy_sensing_j),
            fmt_f64(r.cum_energy_compute_j),
            fmt_f64(r.cum_energy_comm_j),
            fmt_f64(r.cum_latency_s),
            fmt_f64(r.theta_bar),
            fmt_f64(r.c_r),
            fmt_f64(r.b_raw),
        ];
        if diagnostics {
            let d = r.diagnostics.unwrap_or_default();
            fields.extend([d.grad_norm_sq, d.grad_variance, d.descent_bound, d.gen_error_bound].map(fmt_f64));
        }
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_meta(line: &str) -> Option<RunMeta> {
    let rest = line.strip_prefix("# airfeel-metrics v")?;
    let mut scheme = None;
    let mut repeat = None;
    let mut q = None;
    let mut seed = None;
    for part in rest.split_whitespace().skip(1) {
        let (k, v) = part.split_once('=')?;
        match k {
            "scheme" => scheme = Some(v.to_string()),
            "repeat" => repeat = v.parse().ok(),
            "q" => q = v.parse().ok(),
            "seed" => seed = v.parse().ok(),
            _ => {}
        }
    }
    Some(RunMeta {
        scheme: scheme?,
        repeat: repeat?,
        q: q?,
        seed: seed?,
    })
}

pub fn read_csv(path: &Path) -> Result<MetricsRecord> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let meta = parse_meta(first.trim_end()).ok_or_else(|| Error::invalid(format!("{}: missing metrics header line", path.display())))?;
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let diagnostics = match headers.len() {
        n if n == BASE_COLUMNS.len() => false,
        n if n == BASE_COLUMNS.len() + DIAGNOSTIC_COLUMNS.len() => true,
        n => return Err(Error::invalid(format!("{}: unexpected column count {n}", path.display()))),
    };
    if headers.iter().zip(header(diagnostics)).any(|(a, b)| a != b) {
        return Err(Error::invalid(format!("{}: unexpected column names", path.display())));
    }
    let mut record = MetricsRecord::new(meta);
    for row in rdr.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad number `{}`", path.display(), &row[i])))
        };
        let u = |i: usize| -> Result<u64> {
            row[i]
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad integer `{}`", path.display(), &row[i])))
        };
        let diag = if diagnostics {
            Some(Diagnostics {
                grad_norm_sq: f(12)?,
                grad_variance: f(13)?,
                descent_bound: f(14)?,
                gen_error_bound: f(15)?,
            })
        } else {
            None
        };
        record.push(MetricsRow {
            round: u(1)? as usize,
            validation_loss: f(2)?,
            cum_unit_energy: f(3)?,
            cum_raw_samples: u(4)?,
            cum_energy_sensing_j: f(5)?,
            cum_energy_compute_j: f(6)?,
            cum_energy_comm_j: f(7)?,
            cum_latency_s: f(8)?,
            theta_bar: f(9)?,
            c_r: f(10)?,
            b_raw: f(11)?,
            diagnostics: diag,
        })?;
    }
    Ok(record)
}
