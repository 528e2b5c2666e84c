//! CSV and JSON files exchanged with the command-line front end.
//!
//! CSV files open with `# key=value` metadata lines, the first of which is
//! always `schema_version`, followed by a fixed header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CoherenceTrace, RateCurve, RatePoint};

pub const SCHEMA_VERSION: u32 = 1;
pub const TRACE_HEADER: [&str; 3] = ["t_cpmg_s", "coherence", "std_err"];
pub const RATE_HEADER: [&str; 2] = ["f_s_hz", "gamma_per_s"];
pub const DATASET_HEADER: [&str; 3] = ["f_s_hz", "gamma2_per_s", "sigma_per_s"];

pub type Metadata = Vec<(String, String)>;

/// Prefixes an I/O error with the offending path.
pub(crate) fn at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => at(path)(io),
            _ => unreachable!(),
        }
    } else {
        Error::Input(format!("{}: {e}", path.display()))
    }
}

fn write_csv(path: &Path, meta: &[(String, String)], header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(at(path))?);
    writeln!(out, "# schema_version={SCHEMA_VERSION}")?;
    for (k, v) in meta {
        writeln!(out, "# {k}={v}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(|e| csv_error(path, e))?;
        for row in rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(|e| csv_error(path, e))?;
        }
        w.flush()?;
    }
    out.flush()?;
    Ok(())
}

/// Parsed CSV body plus its metadata lines.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub metadata: Metadata,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = std::fs::read_to_string(path).map_err(at(path))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let metadata = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l.trim_start_matches('#').split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Input("file is empty".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Input(format!("data row {}: '{f}' is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(CsvTable { metadata, header, rows })
}

fn expect_header(table: &CsvTable, expected: &[&str]) -> Result<()> {
    if table.header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Input(format!(
            "expected header '{}', found '{}'",
            expected.join(","),
            table.header.join(",")
        )));
    }
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &CoherenceTrace, extra: &[(String, String)]) -> Result<()> {
    let mut meta = vec![
        ("route".to_string(), format!("{:?}", trace.route).to_lowercase()),
        ("dt_s".to_string(), trace.dt.to_string()),
    ];
    if let Some(s) = trace.seed {
        meta.push(("seed".into(), s.to_string()));
    }
    meta.extend_from_slice(extra);
    let rows: Vec<Vec<f64>> = trace.points.iter().map(|p| vec![p.t_cpmg, p.coherence, p.std_err]).collect();
    write_csv(path, &meta, &TRACE_HEADER, &rows)
}

pub fn write_rate_csv(path: &Path, rates: &[(f64, f64)], meta: &[(String, String)]) -> Result<()> {
    let rows: Vec<Vec<f64>> = rates.iter().map(|&(f, g)| vec![f, g]).collect();
    write_csv(path, meta, &RATE_HEADER, &rows)
}

/// Reads `f_s_hz,gamma_per_s` pairs; dataset files are accepted too and
/// their σ column ignored.
pub fn read_rate_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let table = read_csv(path)?;
    if expect_header(&table, &RATE_HEADER).is_err() {
        expect_header(&table, &DATASET_HEADER)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    }
    Ok(table.rows.iter().map(|r| (r[0], r[1])).collect())
}

pub fn write_dataset_csv(path: &Path, curve: &RateCurve, meta: &[(String, String)]) -> Result<()> {
    let mut all = vec![("label".to_string(), curve.label.clone())];
    all.extend_from_slice(meta);
    let rows: Vec<Vec<f64>> = curve.points.iter().map(|p| vec![p.f_s, p.gamma2, p.sigma]).collect();
    write_csv(path, &all, &DATASET_HEADER, &rows)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonPoint {
    Triple([f64; 3]),
    Named {
        f_s_hz: f64,
        gamma2_per_s: f64,
        #[serde(default)]
        sigma_per_s: f64,
    },
}

/// Loads a rate dataset from CSV or from a JSON array of
/// `[f_s_hz, gamma2_per_s, sigma_per_s]` triples (or objects with those keys).
/// The label is the `label` metadata entry or else the file stem.
pub fn read_dataset(path: &Path) -> Result<RateCurve> {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (label, points) = if is_json {
        let text = std::fs::read_to_string(path).map_err(at(path))?;
        if text.trim().is_empty() {
            return Err(Error::Input(format!("{}: file is empty", path.display())));
        }
        let raw: Vec<JsonPoint> =
            serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let pts: Vec<RatePoint> = raw
            .into_iter()
            .map(|p| match p {
                JsonPoint::Triple([f_s, gamma2, sigma]) => RatePoint { f_s, gamma2, sigma },
                JsonPoint::Named {
                    f_s_hz,
                    gamma2_per_s,
                    sigma_per_s,
                } => RatePoint {
                    f_s: f_s_hz,
                    gamma2: gamma2_per_s,
                    sigma: sigma_per_s,
                },
            })
            .collect();
        (stem, pts)
    } else {
        let table = read_csv(path)?;
        expect_header(&table, &DATASET_HEADER).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let label = table.meta("label").map(str::to_string).unwrap_or(stem);
        let pts = table
            .rows
            .iter()
            .map(|r| RatePoint {
                f_s: r[0],
                gamma2: r[1],
                sigma: r[2],
            })
            .collect();
        (label, pts)
    };
    if points.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    RateCurve::new(label, points).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Input(format!("serialization failed: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json_string(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(at(path))?;
    Ok(())
}
