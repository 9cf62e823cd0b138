//! Results CSV, per-session CSV and markdown tables.
//!
//! Floats are written with six decimals; absent statistics are empty fields.

use std::io::{Read, Write};

use thiserror::Error;

use super::{Metrics, Stat};
use crate::crypto::Kind;
use crate::protocol::SessionRecord;

pub const RESULTS_HEADER: [&str; 16] = [
    "algorithm",
    "kind",
    "config",
    "security_level",
    "n_iterations",
    "success_rate",
    "keygen_mean_ms",
    "keygen_std_ms",
    "op2_mean_ms",
    "op2_std_ms",
    "op3_mean_ms",
    "op3_std_ms",
    "overhead_mean_ms",
    "overhead_std_ms",
    "crypto_only_mean_ms",
    "bytes_on_wire_mean",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unexpected CSV header: {0}")]
    Header(String),
    #[error("row {row}: bad `{column}` value `{value}`")]
    Field { row: usize, column: &'static str, value: String },
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

fn metrics_fields(m: &Metrics) -> [String; 16] {
    let mean = |s: Option<Stat>| opt(s.map(|s| s.mean));
    let std = |s: Option<Stat>| opt(s.map(|s| s.std));
    [
        m.algorithm.clone(),
        m.kind.as_str().to_string(),
        m.config.clone(),
        m.security_level.to_string(),
        m.n_iterations.to_string(),
        f6(m.success_rate),
        mean(m.keygen),
        std(m.keygen),
        mean(m.op2),
        std(m.op2),
        mean(m.op3),
        std(m.op3),
        mean(m.overhead),
        std(m.overhead),
        mean(m.crypto_only),
        opt(m.bytes_on_wire_mean),
    ]
}

pub fn write_results_csv<W: Write>(metrics: &[Metrics], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for m in metrics {
        w.write_record(metrics_fields(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sessions_csv<'a, W: Write>(
    records: impl IntoIterator<Item = &'a SessionRecord>,
    out: W,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SessionRecord::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a results CSV. Input with no header at all reads as no rows. The
/// crypto-only std is not stored in the CSV and reads back as zero.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<Metrics>, ReportError> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = r.records();
    let Some(header) = rows.next().transpose()? else {
        return Ok(Vec::new());
    };
    if header.iter().ne(RESULTS_HEADER) {
        return Err(ReportError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != RESULTS_HEADER.len() {
            return Err(ReportError::Header(format!("row {row} has {} fields", rec.len())));
        }
        let bad = |col: usize| ReportError::Field {
            row,
            column: RESULTS_HEADER[col],
            value: rec[col].to_string(),
        };
        let num = |col: usize| -> Result<Option<f64>, ReportError> {
            match &rec[col] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(col)),
            }
        };
        let stat = |col: usize| -> Result<Option<Stat>, ReportError> {
            Ok(match (num(col)?, num(col + 1)?) {
                (Some(mean), std) => Some(Stat {
                    mean,
                    std: std.unwrap_or(0.0),
                }),
                (None, _) => None,
            })
        };
        let kind = match &rec[1] {
            "KEM" => Kind::Kem,
            "DSA" => Kind::Dsa,
            _ => return Err(bad(1)),
        };
        out.push(Metrics {
            algorithm: rec[0].to_string(),
            kind,
            config: rec[2].to_string(),
            security_level: rec[3].parse().map_err(|_| bad(3))?,
            n_iterations: rec[4].parse().map_err(|_| bad(4))?,
            success_rate: num(5)?.ok_or_else(|| bad(5))?,
            keygen: stat(6)?,
            op2: stat(8)?,
            op3: stat(10)?,
            overhead: stat(12)?,
            crypto_only: num(14)?.map(|mean| Stat { mean, std: 0.0 }),
            bytes_on_wire_mean: num(15)?,
        });
    }
    Ok(out)
}

fn cell(s: Option<Stat>) -> String {
    s.map(|s| format!("{:.3} ± {:.3}", s.mean, s.std)).unwrap_or_else(|| "-".into())
}

/// One aligned table per kind (KEMs first), rows sorted by ascending mean
/// overhead; rows without an overhead go last.
pub fn render_markdown(metrics: &[Metrics]) -> String {
    let mut out = String::new();
    for kind in [Kind::Kem, Kind::Dsa] {
        let mut rows: Vec<&Metrics> = metrics.iter().filter(|m| m.kind == kind).collect();
        if rows.is_empty() {
            continue;
        }
        rows.sort_by(|a, b| {
            let key = |m: &Metrics| m.overhead.map_or(f64::INFINITY, |s| s.mean);
            key(a)
                .total_cmp(&key(b))
                .then_with(|| a.algorithm.cmp(&b.algorithm))
                .then_with(|| a.config.cmp(&b.config))
        });
        let (op2, op3) = match kind {
            Kind::Kem => ("Encaps [ms]", "Decaps [ms]"),
            Kind::Dsa => ("Sign [ms]", "Verify [ms]"),
        };
        let header = [
            "Algorithm",
            "Config",
            "KeyGen [ms]",
            op2,
            op3,
            "Overhead [ms]",
            "Crypto-only [ms]",
            "Bytes",
            "Success",
            "Level",
        ]
        .map(String::from);
        let body: Vec<[String; 10]> = rows
            .iter()
            .map(|m| {
                [
                    m.algorithm.clone(),
                    m.config.clone(),
                    cell(m.keygen),
                    cell(m.op2),
                    cell(m.op3),
                    cell(m.overhead),
                    m.crypto_only.map_or("-".into(), |s| format!("{:.3}", s.mean)),
                    m.bytes_on_wire_mean.map_or("-".into(), |b| format!("{b:.0}")),
                    format!("{:.2}", m.success_rate),
                    m.security_level.to_string(),
                ]
            })
            .collect();
        let mut widths = header.clone().map(|h| h.chars().count());
        for r in &body {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String; 10]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("| {} |\n", padded.join(" | "))
        };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!("### {}\n\n", kind.as_str()));
        out.push_str(&line(&header));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for r in &body {
            out.push_str(&line(r));
        }
    }
    out
}
