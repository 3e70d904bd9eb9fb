//! Per-run CSV rows and per-bin summaries, with exact-round-trip CSV and
//! JSON encodings.
//!
//! Floats are written with Rust's shortest round-trip formatting, so parsing
//! an exported file reproduces every value bit for bit. Missing values are
//! empty cells in CSV and `null` in JSON.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Column order of the per-run CSV.
pub const RUN_COLUMNS: [&str; 16] = [
    "run_id",
    "seed",
    "overlap_factor",
    "method",
    "source_acc",
    "true_target_acc",
    "pred_lower",
    "disc_full",
    "disc_nonoverlap",
    "overlap_disc",
    "concentration",
    "assumption2_gap",
    "valid",
    "failure",
    "source_agree",
    "target_agree",
];

/// One (run, method) row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    pub seed: u64,
    pub overlap_factor: f64,
    pub method: String,
    pub source_acc: Option<f64>,
    pub true_target_acc: Option<f64>,
    pub pred_lower: Option<f64>,
    pub disc_full: Option<f64>,
    pub disc_nonoverlap: Option<f64>,
    pub overlap_disc: Option<f64>,
    pub concentration: Option<f64>,
    pub assumption2_gap: Option<f64>,
    pub valid: Option<bool>,
    pub failure: Option<String>,
    pub source_agree: Option<f64>,
    pub target_agree: Option<f64>,
}

impl RunRecord {
    pub fn failed(run_id: usize, seed: u64, overlap_factor: f64, method: &str, reason: &str) -> Self {
        Self {
            run_id,
            seed,
            overlap_factor,
            method: method.to_string(),
            source_acc: None,
            true_target_acc: None,
            pred_lower: None,
            disc_full: None,
            disc_nonoverlap: None,
            overlap_disc: None,
            concentration: None,
            assumption2_gap: None,
            valid: None,
            failure: Some(sanitize(reason)),
            source_agree: None,
            target_agree: None,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

/// Failure text must fit in one CSV cell.
fn sanitize(reason: &str) -> String {
    let s: String = reason
        .chars()
        .map(|c| match c {
            ',' => ';',
            '\n' | '\r' => ' ',
            c => c,
        })
        .collect();
    if s.is_empty() {
        "unknown".into()
    } else {
        s
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|v| format!("{v:?}")).unwrap_or_default()
}

fn write_record<W: Write>(out: &mut W, r: &RunRecord) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.run_id,
        r.seed,
        r.overlap_factor,
        r.method,
        opt_f64(r.source_acc),
        opt_f64(r.true_target_acc),
        opt_f64(r.pred_lower),
        opt_f64(r.disc_full),
        opt_f64(r.disc_nonoverlap),
        opt_f64(r.overlap_disc),
        opt_f64(r.concentration),
        opt_f64(r.assumption2_gap),
        r.valid.map(|v| if v { "1" } else { "0" }).unwrap_or(""),
        r.failure.as_deref().map(sanitize).unwrap_or_default(),
        opt_f64(r.source_agree),
        opt_f64(r.target_agree),
    )
}

pub fn write_runs_csv<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "{}", RUN_COLUMNS.join(","))?;
    for r in records {
        write_record(&mut out, r)?;
    }
    Ok(())
}

pub fn save_runs_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_runs_csv(records, &mut out)?;
    out.flush()?;
    Ok(())
}

struct Cells<'a> {
    cells: Vec<&'a str>,
    line: usize,
    origin: &'a Path,
}

impl<'a> Cells<'a> {
    fn err(&self, message: String) -> Error {
        Error::Csv {
            path: self.origin.to_path_buf(),
            line: self.line,
            message,
        }
    }

    fn parse<T: std::str::FromStr>(&self, i: usize, name: &str) -> Result<T> {
        self.cells[i]
            .parse()
            .map_err(|_| self.err(format!("bad {name} `{}`", self.cells[i])))
    }

    fn opt_f64(&self, i: usize, name: &str) -> Result<Option<f64>> {
        if self.cells[i].is_empty() {
            Ok(None)
        } else {
            self.parse(i, name).map(Some)
        }
    }

    fn opt_bool(&self, i: usize, name: &str) -> Result<Option<bool>> {
        match self.cells[i] {
            "" => Ok(None),
            "1" => Ok(Some(true)),
            "0" => Ok(Some(false)),
            other => Err(self.err(format!("bad {name} `{other}`"))),
        }
    }
}

pub fn read_runs_csv<R: BufRead>(input: R, origin: &Path) -> Result<Vec<RunRecord>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != RUN_COLUMNS.join(",") {
        return Err(Error::Csv {
            path: origin.to_path_buf(),
            line: 1,
            message: "unexpected per-run header".into(),
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = Cells {
            cells: line.split(',').collect(),
            line: idx + 2,
            origin,
        };
        if c.cells.len() != RUN_COLUMNS.len() {
            return Err(c.err(format!(
                "expected {} cells, found {}",
                RUN_COLUMNS.len(),
                c.cells.len()
            )));
        }
        records.push(RunRecord {
            run_id: c.parse(0, "run_id")?,
            seed: c.parse(1, "seed")?,
            overlap_factor: c.parse(2, "overlap_factor")?,
            method: c.cells[3].to_string(),
            source_acc: c.opt_f64(4, "source_acc")?,
            true_target_acc: c.opt_f64(5, "true_target_acc")?,
            pred_lower: c.opt_f64(6, "pred_lower")?,
            disc_full: c.opt_f64(7, "disc_full")?,
            disc_nonoverlap: c.opt_f64(8, "disc_nonoverlap")?,
            overlap_disc: c.opt_f64(9, "overlap_disc")?,
            concentration: c.opt_f64(10, "concentration")?,
            assumption2_gap: c.opt_f64(11, "assumption2_gap")?,
            valid: c.opt_bool(12, "valid")?,
            failure: (!c.cells[13].is_empty()).then(|| c.cells[13].to_string()),
            source_agree: c.opt_f64(14, "source_agree")?,
            target_agree: c.opt_f64(15, "target_agree")?,
        });
    }
    Ok(records)
}

pub fn load_runs_csv(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(Error::io_at(path))?;
    read_runs_csv(std::io::BufReader::new(file), path)
}

/// Bin means for one critic method.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodBin {
    pub pred_lower: Option<f64>,
    pub source_agree: Option<f64>,
    pub target_agree: Option<f64>,
    pub disc_full: Option<f64>,
    pub disc_nonoverlap: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    /// Distinct runs whose overlap factor falls in the bin.
    pub runs: usize,
    /// Runs with at least one failed method.
    pub failures: usize,
    pub overlap_factor: Option<f64>,
    pub true_target_acc: Option<f64>,
    pub assumption2_gap: Option<f64>,
    pub dis2: MethodBin,
    pub odd: MethodBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub bins: Vec<BinSummary>,
}

pub const SUMMARY_COLUMNS: [&str; 20] = [
    "bin",
    "lo",
    "hi",
    "runs",
    "failures",
    "overlap_factor",
    "true_target_acc",
    "assumption2_gap",
    "dis2_pred_lower",
    "dis2_source_agree",
    "dis2_target_agree",
    "dis2_disc_full",
    "dis2_disc_nonoverlap",
    "dis2_coverage",
    "odd_pred_lower",
    "odd_source_agree",
    "odd_target_agree",
    "odd_disc_full",
    "odd_disc_nonoverlap",
    "odd_coverage",
];

fn method_cells(m: &MethodBin) -> [Option<f64>; 6] {
    [
        m.pred_lower,
        m.source_agree,
        m.target_agree,
        m.disc_full,
        m.disc_nonoverlap,
        m.coverage,
    ]
}

pub fn write_summary_csv<W: Write>(summary: &SweepSummary, mut out: W) -> Result<()> {
    writeln!(out, "{}", SUMMARY_COLUMNS.join(","))?;
    for b in &summary.bins {
        let mut cells = vec![
            b.bin.to_string(),
            format!("{:?}", b.lo),
            format!("{:?}", b.hi),
            b.runs.to_string(),
            b.failures.to_string(),
            opt_f64(b.overlap_factor),
            opt_f64(b.true_target_acc),
            opt_f64(b.assumption2_gap),
        ];
        cells.extend(method_cells(&b.dis2).into_iter().map(opt_f64));
        cells.extend(method_cells(&b.odd).into_iter().map(opt_f64));
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_summary_csv<R: BufRead>(input: R, origin: &Path) -> Result<SweepSummary> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != SUMMARY_COLUMNS.join(",") {
        return Err(Error::Csv {
            path: origin.to_path_buf(),
            line: 1,
            message: "unexpected summary header".into(),
        });
    }
    let mut bins = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c = Cells {
            cells: line.split(',').collect(),
            line: idx + 2,
            origin,
        };
        if c.cells.len() != SUMMARY_COLUMNS.len() {
            return Err(c.err(format!(
                "expected {} cells, found {}",
                SUMMARY_COLUMNS.len(),
                c.cells.len()
            )));
        }
        let method = |base: usize| -> Result<MethodBin> {
            Ok(MethodBin {
                pred_lower: c.opt_f64(base, "pred_lower")?,
                source_agree: c.opt_f64(base + 1, "source_agree")?,
                target_agree: c.opt_f64(base + 2, "target_agree")?,
                disc_full: c.opt_f64(base + 3, "disc_full")?,
                disc_nonoverlap: c.opt_f64(base + 4, "disc_nonoverlap")?,
                coverage: c.opt_f64(base + 5, "coverage")?,
            })
        };
        bins.push(BinSummary {
            bin: c.parse(0, "bin")?,
            lo: c.parse(1, "lo")?,
            hi: c.parse(2, "hi")?,
            runs: c.parse(3, "runs")?,
            failures: c.parse(4, "failures")?,
            overlap_factor: c.opt_f64(5, "overlap_factor")?,
            true_target_acc: c.opt_f64(6, "true_target_acc")?,
            assumption2_gap: c.opt_f64(7, "assumption2_gap")?,
            dis2: method(8)?,
            odd: method(14)?,
        });
    }
    Ok(SweepSummary { bins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::config(format!("unknown export format `{other}`"))),
        }
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn export_summary(summary: &SweepSummary, format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    match format {
        ExportFormat::Csv => write_summary_csv(summary, &mut out)?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, summary)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn export_runs(records: &[RunRecord], format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let mut out = create(path.as_ref())?;
    match format {
        ExportFormat::Csv => write_runs_csv(records, &mut out)?,
        ExportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, records)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn parse_summary(path: impl AsRef<Path>, format: ExportFormat) -> Result<SweepSummary> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    match format {
        ExportFormat::Csv => read_summary_csv(file, path),
        ExportFormat::Json => Ok(serde_json::from_reader(file)?),
    }
}

pub fn parse_runs(path: impl AsRef<Path>, format: ExportFormat) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    match format {
        ExportFormat::Csv => read_runs_csv(file, path),
        ExportFormat::Json => Ok(serde_json::from_reader(file)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
    }

    fn record() -> impl Strategy<Value = RunRecord> {
        (
            (0usize..10_000, any::<u64>(), 0.0f64..1.0, prop::sample::select(vec!["dis2", "odd"])),
            prop::collection::vec(prop::option::of(finite()), 10),
            prop::option::of(any::<bool>()),
            prop::option::of("[a-z ,]{1,12}"),
        )
            .prop_map(|((run_id, seed, f, m), v, valid, failure)| RunRecord {
                run_id,
                seed,
                overlap_factor: f,
                method: m.into(),
                source_acc: v[0],
                true_target_acc: v[1],
                pred_lower: v[2],
                disc_full: v[3],
                disc_nonoverlap: v[4],
                overlap_disc: v[5],
                concentration: v[6],
                assumption2_gap: v[7],
                valid,
                failure: failure.map(|f| sanitize(&f)),
                source_agree: v[8],
                target_agree: v[9],
            })
    }

    proptest! {
        #[test]
        fn runs_csv_round_trip(records in prop::collection::vec(record(), 0..8)) {
            let mut buf = Vec::new();
            write_runs_csv(&records, &mut buf).unwrap();
            let back = read_runs_csv(std::io::Cursor::new(buf), Path::new("mem")).unwrap();
            prop_assert_eq!(back, records);
        }
    }

    #[test]
    fn failure_text_is_sanitized() {
        let r = RunRecord::failed(1, 2, 0.5, "odd", "bad, worse\nworst");
        assert_eq!(r.failure.as_deref(), Some("bad; worse worst"));
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "run_id,seed\n1,2\n";
        assert!(read_runs_csv(std::io::Cursor::new(text), Path::new("x")).is_err());
    }
}
