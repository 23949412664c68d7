//! Study rows, the append-only CSV writer and tidy plot data.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::config::{StudyConfig, StudyKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    Infeasible(String),
}

/// One trial at one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub study: StudyKind,
    pub x: f64,
    pub trial: usize,
    pub seed: u64,
    pub oracle: String,
    pub metrics: Vec<(&'static str, f64)>,
    pub status: RowStatus,
}

impl ReportRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// Provenance lines every output file starts with.
pub fn provenance(cfg: &StudyConfig) -> Vec<String> {
    provenance_lines(&cfg.config_hash, cfg.seed, &format!("study = {}", cfg.kind.name()))
}

/// Version, config hash and master seed, then `tag` verbatim.
pub fn provenance_lines(config_hash: &str, seed: u64, tag: &str) -> Vec<String> {
    vec![
        format!("otflow {}", env!("CARGO_PKG_VERSION")),
        format!("config_sha256 = {config_hash}"),
        format!("master_seed = {seed}"),
        tag.to_string(),
    ]
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

/// Writes the header up front and flushes after every row, so an
/// interrupted study leaves a readable prefix.
pub struct ReportWriter {
    path: PathBuf,
    out: BufWriter<File>,
    metrics: Vec<&'static str>,
}

impl ReportWriter {
    pub fn create(path: &Path, comments: &[String], metrics: &[&'static str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            metrics: metrics.to_vec(),
        };
        let mut head = String::new();
        for c in comments {
            writeln!(head, "# {c}").unwrap();
        }
        write!(head, "study,x,trial,seed,oracle,status").unwrap();
        for m in metrics {
            write!(head, ",{m}").unwrap();
        }
        head.push('\n');
        w.emit(&head)?;
        Ok(w)
    }

    fn emit(&mut self, s: &str) -> Result<()> {
        self.out
            .write_all(s.as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_row(&mut self, row: &ReportRow) -> Result<()> {
        let status = match &row.status {
            RowStatus::Ok => "ok".to_string(),
            RowStatus::Infeasible(m) => format!("infeasible: {}", clean(m)),
        };
        let mut s = format!("{},{},{},{},{},{}", row.study.name(), row.x, row.trial, row.seed, clean(&row.oracle), status);
        for m in &self.metrics {
            match row.metric(m) {
                Some(v) => write!(s, ",{v}").unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
        self.emit(&s)
    }

    pub fn comment(&mut self, line: &str) -> Result<()> {
        self.emit(&format!("# {line}\n"))
    }
}

/// Long-format `x,metric,value,trial` lines, preceded by `comments`.
pub fn emit_plotdata(rows: &[ReportRow], comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        writeln!(s, "# {c}").unwrap();
    }
    s.push_str("x,metric,value,trial\n");
    for r in rows.iter().filter(|r| r.is_ok()) {
        for (k, v) in &r.metrics {
            writeln!(s, "{},{k},{v},{}", r.x, r.trial).unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(x: f64, metrics: Vec<(&'static str, f64)>) -> ReportRow {
        ReportRow {
            study: StudyKind::AlphaSweep,
            x,
            trial: 0,
            seed: 9,
            oracle: "w2, exact".into(),
            metrics,
            status: RowStatus::Ok,
        }
    }

    #[test]
    fn plotdata_shape() {
        let s = emit_plotdata(&[row(2.0, vec![("kl", 0.5)])], &[]);
        assert_eq!(s, "x,metric,value,trial\n2,kl,0.5,0\n");
        let rows: Vec<ReportRow> = [1.0, 10.0, 100.0].iter().map(|&x| row(x, vec![("kl", 1.0 / x)])).collect();
        let s = emit_plotdata(&rows, &["note".into()]);
        let xs: Vec<&str> = s.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(xs, ["1", "10", "100"]);
    }

    #[test]
    fn writer_flushes_each_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let mut w = ReportWriter::create(&p, &["hello".into()], &["kl", "action"]).unwrap();
        w.write_row(&row(1.0, vec![("kl", 0.25)])).unwrap();
        let mut bad = row(2.0, vec![]);
        bad.status = RowStatus::Infeasible("diverged, twice".into());
        w.write_row(&bad).unwrap();
        // Readable before the writer is dropped.
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "# hello\nstudy,x,trial,seed,oracle,status,kl,action\n\
             alpha_sweep,1,0,9,w2; exact,ok,0.25,\n\
             alpha_sweep,2,0,9,w2; exact,infeasible: diverged; twice,,\n"
        );
    }
}
