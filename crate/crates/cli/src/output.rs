//! Table files, `result.json` and `manifest.json`.
//!
//! Everything is rendered in memory first and then written through a
//! temporary file in the target directory followed by a rename, so an
//! interrupted run never leaves a truncated file behind.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use weylsim::scenarios::{Check, ColumnData, ScenarioResult, Table};

use crate::config::Section;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros trimmed,
/// exponent form outside [1e-5, 1e9).
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

fn cell(data: &ColumnData, row: usize) -> String {
    match data {
        ColumnData::Real(v) => fmt_sig(v[row]),
        ColumnData::Optional(v) => v[row].map(fmt_sig).unwrap_or_default(),
        ColumnData::Text(v) => v[row].clone(),
    }
}

pub fn render_csv(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(table.columns.iter().map(|c| c.header()))?;
    for row in 0..table.rows() {
        w.write_record(table.columns.iter().map(|c| cell(&c.data, row)))?;
    }
    w.into_inner().context("flushing CSV buffer")
}

#[derive(Serialize)]
struct JsonColumn<'a> {
    name: &'a str,
    unit: Option<&'a str>,
    values: serde_json::Value,
}

#[derive(Serialize)]
struct JsonTable<'a> {
    name: &'a str,
    columns: Vec<JsonColumn<'a>>,
}

#[derive(Serialize)]
struct JsonResult<'a> {
    scenario: String,
    tables: Vec<JsonTable<'a>>,
    checks: &'a [Check],
}

pub fn render_json(res: &ScenarioResult) -> Result<Vec<u8>> {
    let tables = res
        .tables
        .iter()
        .map(|t| JsonTable {
            name: &t.name,
            columns: t
                .columns
                .iter()
                .map(|c| JsonColumn {
                    name: &c.name,
                    unit: c.unit.as_deref(),
                    values: match &c.data {
                        ColumnData::Real(v) => serde_json::json!(v),
                        ColumnData::Optional(v) => serde_json::json!(v),
                        ColumnData::Text(v) => serde_json::json!(v),
                    },
                })
                .collect(),
        })
        .collect();
    let doc = JsonResult {
        scenario: res.manifest.config.name.to_string(),
        tables,
        checks: &res.checks,
    };
    let mut out = serde_json::to_vec_pretty(&doc)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Serialize)]
struct CheckSummary<'a> {
    passed: usize,
    failed: usize,
    checks: &'a [Check],
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    scenario: String,
    config: &'a Section,
    started_at: &'a str,
    finished_at: &'a str,
    wall_time_s: f64,
    summary: CheckSummary<'a>,
    outputs: &'a [OutputFile],
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a file in {}", dir.display()))?;
    tmp.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub struct Timestamps {
    pub started: String,
    pub finished: String,
}

/// Writes the table files and then the manifest. Returns every path written.
pub fn write_result(
    res: &ScenarioResult,
    resolved: &Section,
    dir: &Path,
    format: Format,
    times: &Timestamps,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files: Vec<(String, Vec<u8>)> = match format {
        Format::Csv => res
            .tables
            .iter()
            .map(|t| Ok((format!("{}.csv", t.name), render_csv(t)?)))
            .collect::<Result<_>>()?,
        Format::Json => vec![("result.json".to_string(), render_json(res)?)],
    };
    let mut outputs = Vec::new();
    let mut written = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        write_atomic(&path, bytes)?;
        outputs.push(OutputFile {
            file: name.clone(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        written.push(path);
    }
    let passed = res.checks.iter().filter(|c| c.pass).count();
    let manifest = Manifest {
        tool: "weylsim",
        version: env!("CARGO_PKG_VERSION"),
        core_version: res.manifest.version,
        scenario: res.manifest.config.name.to_string(),
        config: resolved,
        started_at: &times.started,
        finished_at: &times.finished,
        wall_time_s: res.manifest.wall_time_s,
        summary: CheckSummary {
            passed,
            failed: res.checks.len() - passed,
            checks: &res.checks,
        },
        outputs: &outputs,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    let path = dir.join("manifest.json");
    write_atomic(&path, &bytes)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use weylsim::scenarios::Column;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(600.0), "600");
        assert_eq!(fmt_sig(8.327846608123), "8.32784661");
        assert_eq!(fmt_sig(-0.000123456789123), "-0.000123456789");
        assert_eq!(fmt_sig(1.5e-9), "1.5e-9");
        assert_eq!(fmt_sig(123456789012.0), "1.23456789e11");
        assert_eq!(fmt_sig(f64::NAN), "nan");
        let x = 1.234567891234567;
        let s = fmt_sig(x);
        assert!((s.parse::<f64>().unwrap() - x).abs() < 1e-8);
    }

    #[test]
    fn csv_has_unit_headers_and_blank_gaps() {
        let t = Table::new(
            "t",
            vec![
                Column::real("t", Some("us"), vec![0.0, 3.0]),
                Column::optional("ratio", None, vec![Some(0.5), None]),
                Column::text("series", vec!["a".into(), "b,c".into()]),
            ],
        )
        .unwrap();
        let text = String::from_utf8(render_csv(&t).unwrap()).unwrap();
        assert_eq!(text, "t(us),ratio,series\n0,0.5,a\n3,,\"b,c\"\n");
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_atomic(&p, b"first version, longer\n").unwrap();
        write_atomic(&p, b"second\n").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
