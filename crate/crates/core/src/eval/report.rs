//! Evaluation reports: `# key=value` metadata lines followed by CSV rows.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub t: usize,
    pub delta: usize,
    pub patch_size: usize,
    pub mae: f64,
    /// Undefined when the cell's truths are constant.
    pub r2: Option<f64>,
    pub n_examples: usize,
    /// Windows the forecaster declined for lack of history.
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
}

const HEADER: &str = "model,T,delta,patch_size,mae,r2,n_examples,n_skipped";

impl EvalReport {
    pub fn row(&self, model: &str, t: usize, delta: usize, patch_size: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.t == t && r.delta == delta && r.patch_size == patch_size)
    }

    /// Rows of a merged report follow the given model order, then grid keys.
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry {k:?} cannot be encoded")));
            }
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "{HEADER}")?;
        for r in &self.rows {
            if r.model.contains([',', '\n']) {
                return Err(Error::Format(format!("model name {:?} cannot be encoded", r.model)));
            }
            let r2 = r.r2.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.model, r.t, r.delta, r.patch_size, r.mae, r2, r.n_examples, r.n_skipped
            )?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut report = EvalReport::default();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let line_no = i as u64 + 1;
            let err = |m: String| Error::Parse { line: line_no, message: m };
            if !header_seen {
                if let Some(meta) = line.strip_prefix("# ") {
                    let (k, v) = meta.split_once('=').ok_or_else(|| err("metadata line without '='".into()))?;
                    report.metadata.insert(k.to_string(), v.to_string());
                    continue;
                }
                if line != HEADER {
                    return Err(err(format!("expected header {HEADER:?}")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err(format!("expected 8 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
            let float = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            report.rows.push(ReportRow {
                model: f[0].to_string(),
                t: int(f[1])?,
                delta: int(f[2])?,
                patch_size: int(f[3])?,
                mae: float(f[4])?,
                r2: if f[5].is_empty() { None } else { Some(float(f[5])?) },
                n_examples: int(f[6])?,
                n_skipped: int(f[7])?,
            });
        }
        if !header_seen {
            return Err(Error::Format("report has no header line".into()));
        }
        Ok(report)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    /// Curves for external plotting: MAE against `T` for each fixed horizon
    /// and against the horizon for each fixed `T`, per model and patch size.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "model,patch_size,axis,fixed,x,mae")?;
        let mut rows: Vec<&ReportRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| (&a.model, a.patch_size, a.delta, a.t).cmp(&(&b.model, b.patch_size, b.delta, b.t)));
        for r in &rows {
            writeln!(out, "{},{},T,{},{},{}", r.model, r.patch_size, r.delta, r.t, r.mae)?;
        }
        rows.sort_by(|a, b| (&a.model, a.patch_size, a.t, a.delta).cmp(&(&b.model, b.patch_size, b.t, b.delta)));
        for r in &rows {
            writeln!(out, "{},{},delta,{},{},{}", r.model, r.patch_size, r.t, r.delta, r.mae)?;
        }
        Ok(())
    }
}
