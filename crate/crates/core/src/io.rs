//! File schemas.
//!
//! All tabular files are comma-separated with a header line; ids are opaque
//! strings. Floats are written in Rust's shortest round-trip form, so a read
//! after a write reproduces every value exactly.
//!
//! | file | header |
//! |---|---|
//! | features | `id,label,x0,...,x{d-1}` |
//! | probabilities | `id,label,p0,...,p{K-1}` (rows must sum to 1 within 1e-4) |
//! | losses | `id,loss` (non-negative) |
//! | density ratios | `id,ratio` (positive) |
//! | prediction sets | `id,label,covered,set_size,members` (`members` = `;`-joined ascending labels) |
//! | report | `method,score,shift,alpha,trials,coverage,avg_set_size,severity,cell` |
//! | trials | `method,score,shift,trial,coverage,avg_set_size,severity,q,scale` |
//! | plot | `score,method,shift,severity,coverage,avg_set_size` |
//!
//! Report numbers are fixed to four decimals; JSON reports carry the same
//! values. The dataset manifest is JSON, see [`Manifest`].

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::PredictionSet;
use crate::error::{Error, Result};
use crate::metrics::{ExperimentReport, TrialResult};
use crate::scores::ProbabilityVector;
use crate::synthgen::{Domain, SynthDataset};
use crate::vae::LossRecord;

pub const PROBABILITY_TOLERANCE: f64 = 1e-4;
pub const MANIFEST_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// A data row tagged with its 1-based line number.
type Row = (usize, Vec<String>);

/// Header and records of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Row>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let line = i + 2;
        if record.len() != header.len() {
            return Err(Error::schema(
                path,
                format!(
                    "line {line}: {} fields, header has {}",
                    record.len(),
                    header.len()
                ),
            ));
        }
        rows.push((line, record.iter().map(|f| f.trim().to_string()).collect()));
    }
    Ok((header, rows))
}

fn expect_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
        return Err(Error::schema(
            path,
            format!(
                "header `{}` does not match `{}`",
                header.join(","),
                expected.join(",")
            ),
        ));
    }
    Ok(())
}

/// `prefix0..prefix{n-1}` columns after `id,label`.
fn indexed_header(path: &Path, header: &[String], prefix: &str) -> Result<usize> {
    if header.len() < 4 || header[0] != "id" || header[1] != "label" {
        return Err(Error::schema(
            path,
            format!(
                "expected `id,label,{prefix}0,{prefix}1,...`, found `{}`",
                header.join(",")
            ),
        ));
    }
    for (i, h) in header[2..].iter().enumerate() {
        if *h != format!("{prefix}{i}") {
            return Err(Error::schema(
                path,
                format!("column {} should be `{prefix}{i}`, found `{h}`", i + 3),
            ));
        }
    }
    Ok(header.len() - 2)
}

fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::schema(
                path,
                format!("line {line}: {what} `{field}` is not a finite number"),
            )
        })
}

fn parse_label(path: &Path, line: usize, field: &str, num_labels: usize) -> Result<usize> {
    let label: usize = field.parse().map_err(|_| {
        Error::schema(
            path,
            format!("line {line}: label `{field}` is not a class index"),
        )
    })?;
    if label >= num_labels {
        return Err(Error::schema(
            path,
            format!("line {line}: label {label} outside 0..{num_labels}"),
        ));
    }
    Ok(label)
}

fn check_unique_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut seen = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(Error::schema(
                path,
                format!("duplicate id `{id}` on lines {} and {}", prev + 2, i + 2),
            ));
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_row(w: &mut csv::Writer<File>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(csv_err(path))
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub probs: Vec<ProbabilityVector>,
}

impl ProbabilityTable {
    pub fn num_labels(&self) -> usize {
        self.probs.first().map_or(0, ProbabilityVector::num_labels)
    }
}

pub fn read_probabilities(path: &Path) -> Result<ProbabilityTable> {
    let (header, rows) = read_table(path)?;
    let k = indexed_header(path, &header, "p")?;
    if rows.is_empty() {
        return Err(Error::schema(path, "no rows"));
    }
    let mut table = ProbabilityTable {
        ids: Vec::with_capacity(rows.len()),
        labels: Vec::with_capacity(rows.len()),
        probs: Vec::with_capacity(rows.len()),
    };
    for (line, row) in rows {
        let values = row[2..]
            .iter()
            .map(|f| parse_f64(path, line, f, "probability"))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::schema(
                path,
                format!("line {line}: probabilities sum to {total}, expected 1 within {PROBABILITY_TOLERANCE}"),
            ));
        }
        let p = ProbabilityVector::with_tolerance(values, PROBABILITY_TOLERANCE)
            .map_err(|e| Error::schema(path, format!("line {line}: {e}")))?;
        table.labels.push(parse_label(path, line, &row[1], k)?);
        table.ids.push(row[0].clone());
        table.probs.push(p);
    }
    check_unique_ids(path, &table.ids)?;
    Ok(table)
}

pub fn write_probabilities(path: &Path, table: &ProbabilityTable) -> Result<()> {
    let k = table.num_labels();
    let mut w = create(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..k).map(|i| format!("p{i}")));
    write_row(&mut w, path, &header)?;
    for ((id, y), p) in table.ids.iter().zip(&table.labels).zip(&table.probs) {
        let mut row = vec![id.clone(), y.to_string()];
        row.extend(p.as_slice().iter().map(f64::to_string));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

pub fn read_features(path: &Path, num_classes: usize) -> Result<SynthDataset> {
    let (header, rows) = read_table(path)?;
    indexed_header(path, &header, "x")?;
    if rows.is_empty() {
        return Err(Error::schema(path, "no rows"));
    }
    let mut data = SynthDataset {
        ids: Vec::new(),
        features: Vec::new(),
        labels: Vec::new(),
        num_classes,
        domain: Domain::Source,
    };
    for (line, row) in rows {
        data.ids.push(row[0].clone());
        data.labels
            .push(parse_label(path, line, &row[1], num_classes)?);
        data.features.push(
            row[2..]
                .iter()
                .map(|f| parse_f64(path, line, f, "feature"))
                .collect::<Result<_>>()?,
        );
    }
    check_unique_ids(path, &data.ids)?;
    Ok(data)
}

pub fn write_features(path: &Path, data: &SynthDataset) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..data.dim()).map(|i| format!("x{i}")));
    write_row(&mut w, path, &header)?;
    for ((id, y), x) in data.ids.iter().zip(&data.labels).zip(&data.features) {
        let mut row = vec![id.clone(), y.to_string()];
        row.extend(x.iter().map(f64::to_string));
        write_row(&mut w, path, &row)?;
    }
    finish(w, path)
}

/// Ids and labels from any file whose first two columns are `id,label`.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let (header, rows) = read_table(path)?;
    if header.len() < 2 || header[0] != "id" || header[1] != "label" {
        return Err(Error::schema(path, "expected leading `id,label` columns"));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        ids.push(row[0].clone());
        labels.push(parse_label(path, line, &row[1], usize::MAX)?);
    }
    check_unique_ids(path, &ids)?;
    Ok((ids, labels))
}

/// Two-column `id,<value>` table such as losses or density ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub ids: Vec<String>,
    pub values: Vec<f64>,
}

impl ValueTable {
    /// Values reordered to follow `ids`. Every id must appear exactly once on
    /// both sides.
    pub fn aligned_to(&self, ids: &[String], what: &str) -> Result<Vec<f64>> {
        let index: HashMap<&str, f64> = self
            .ids
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
            .collect();
        if self.ids.len() != ids.len() {
            let extra = self.ids.iter().find(|id| !ids.contains(id));
            return Err(Error::invalid(format!(
                "{what}: {} rows for {} samples{}",
                self.ids.len(),
                ids.len(),
                extra.map_or(String::new(), |id| format!(" (unmatched id `{id}`)"))
            )));
        }
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("{what}: no row for id `{id}`")))
            })
            .collect()
    }
}

fn read_values(path: &Path, column: &str, positive: bool) -> Result<ValueTable> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &["id", column])?;
    if rows.is_empty() {
        return Err(Error::schema(path, "no rows"));
    }
    let mut table = ValueTable {
        ids: Vec::with_capacity(rows.len()),
        values: Vec::with_capacity(rows.len()),
    };
    for (line, row) in rows {
        let v = parse_f64(path, line, &row[1], column)?;
        if v < 0.0 || (positive && v == 0.0) {
            let need = if positive { "positive" } else { "non-negative" };
            return Err(Error::schema(
                path,
                format!("line {line}: {column} {v} must be {need}"),
            ));
        }
        table.ids.push(row[0].clone());
        table.values.push(v);
    }
    check_unique_ids(path, &table.ids)?;
    Ok(table)
}

fn write_values(path: &Path, column: &str, ids: &[String], values: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    write_row(&mut w, path, &["id".to_string(), column.to_string()])?;
    for (id, v) in ids.iter().zip(values) {
        write_row(&mut w, path, &[id.clone(), v.to_string()])?;
    }
    finish(w, path)
}

pub fn read_losses(path: &Path) -> Result<ValueTable> {
    read_values(path, "loss", false)
}

/// Writes raw losses; normalization is recomputed by consumers.
pub fn write_losses(path: &Path, records: &[LossRecord]) -> Result<()> {
    let ids: Vec<String> = records.iter().map(|r| r.sample_id.clone()).collect();
    let values: Vec<f64> = records.iter().map(|r| r.raw_loss).collect();
    write_values(path, "loss", &ids, &values)
}

pub fn read_ratios(path: &Path) -> Result<ValueTable> {
    read_values(path, "ratio", true)
}

pub fn write_ratios(path: &Path, ids: &[String], ratios: &[f64]) -> Result<()> {
    write_values(path, "ratio", ids, ratios)
}

fn join_members(members: &[usize]) -> String {
    members
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

pub fn write_prediction_sets(
    path: &Path,
    ids: &[String],
    labels: &[usize],
    sets: &[PredictionSet],
) -> Result<()> {
    if ids.len() != sets.len() || labels.len() != sets.len() {
        return Err(Error::LengthMismatch {
            what: "ids/labels vs prediction sets",
            left: ids.len().min(labels.len()),
            right: sets.len(),
        });
    }
    let mut w = create(path)?;
    write_row(
        &mut w,
        path,
        &["id", "label", "covered", "set_size", "members"].map(String::from),
    )?;
    for ((id, &y), set) in ids.iter().zip(labels).zip(sets) {
        let mut members = set.members.clone();
        members.sort_unstable();
        write_row(
            &mut w,
            path,
            &[
                id.clone(),
                y.to_string(),
                u8::from(members.contains(&y)).to_string(),
                members.len().to_string(),
                join_members(&members),
            ],
        )?;
    }
    finish(w, path)
}

/// Prediction sets read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SetTable {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub members: Vec<Vec<usize>>,
}

pub fn read_prediction_sets(path: &Path) -> Result<SetTable> {
    let (header, rows) = read_table(path)?;
    expect_header(
        path,
        &header,
        &["id", "label", "covered", "set_size", "members"],
    )?;
    if rows.is_empty() {
        return Err(Error::schema(path, "no rows"));
    }
    let mut table = SetTable {
        ids: Vec::new(),
        labels: Vec::new(),
        members: Vec::new(),
    };
    for (line, row) in rows {
        let bad = |msg: String| Error::schema(path, format!("line {line}: {msg}"));
        let label: usize = row[1]
            .parse()
            .map_err(|_| bad(format!("bad label `{}`", row[1])))?;
        let members = if row[4].is_empty() {
            Vec::new()
        } else {
            row[4]
                .split(';')
                .map(|m| m.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad members `{}`", row[4])))?
        };
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("members must be strictly ascending".into()));
        }
        let size: usize = row[3]
            .parse()
            .map_err(|_| bad(format!("bad set_size `{}`", row[3])))?;
        if size != members.len() {
            return Err(bad(format!(
                "set_size {size} but {} members",
                members.len()
            )));
        }
        let covered = match row[2].as_str() {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("covered must be 0 or 1, found `{other}`"))),
        };
        if covered != members.contains(&label) {
            return Err(bad("covered flag disagrees with members".into()));
        }
        table.ids.push(row[0].clone());
        table.labels.push(label);
        table.members.push(members);
    }
    check_unique_ids(path, &table.ids)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

/// Round to the four decimals the CSV shows.
fn round4(v: f64) -> f64 {
    fixed4(v).parse().expect("formatted float parses")
}

#[derive(Serialize)]
struct JsonRow<'a> {
    method: &'a str,
    score: &'a str,
    shift: &'a str,
    alpha: f64,
    trials: usize,
    coverage: f64,
    avg_set_size: f64,
    severity: Option<f64>,
    cell: String,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    alpha: f64,
    rows: Vec<JsonRow<'a>>,
}

pub fn write_report(path: &Path, report: &ExperimentReport, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => {
            let mut w = create(path)?;
            write_row(
                &mut w,
                path,
                &[
                    "method",
                    "score",
                    "shift",
                    "alpha",
                    "trials",
                    "coverage",
                    "avg_set_size",
                    "severity",
                    "cell",
                ]
                .map(String::from),
            )?;
            for r in &report.rows {
                write_row(
                    &mut w,
                    path,
                    &[
                        r.method.to_string(),
                        r.score.to_string(),
                        r.shift.clone(),
                        r.alpha.to_string(),
                        r.trials.to_string(),
                        fixed4(r.coverage),
                        fixed4(r.avg_set_size),
                        r.severity.map(fixed4).unwrap_or_default(),
                        r.cell(),
                    ],
                )?;
            }
            finish(w, path)
        }
        ReportFormat::Json => {
            let json = JsonReport {
                alpha: report.alpha,
                rows: report
                    .rows
                    .iter()
                    .map(|r| JsonRow {
                        method: r.method.name(),
                        score: r.score.name(),
                        shift: &r.shift,
                        alpha: r.alpha,
                        trials: r.trials,
                        coverage: round4(r.coverage),
                        avg_set_size: round4(r.avg_set_size),
                        severity: r.severity.map(round4),
                        cell: r.cell(),
                    })
                    .collect(),
            };
            write_json(path, &json)
        }
    }
}

pub fn write_trials(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = create(path)?;
    write_row(
        &mut w,
        path,
        &[
            "method",
            "score",
            "shift",
            "trial",
            "coverage",
            "avg_set_size",
            "severity",
            "q",
            "scale",
        ]
        .map(String::from),
    )?;
    for r in results {
        write_row(
            &mut w,
            path,
            &[
                r.method.to_string(),
                r.score.to_string(),
                r.shift.clone(),
                r.trial.to_string(),
                r.coverage.to_string(),
                r.avg_set_size.to_string(),
                r.severity.map(|s| s.to_string()).unwrap_or_default(),
                r.q.to_string(),
                r.scale.to_string(),
            ],
        )?;
    }
    finish(w, path)
}

/// Coverage and set size against shift severity, one line per report row.
pub fn write_plot_data(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut w = create(path)?;
    write_row(
        &mut w,
        path,
        &[
            "score",
            "method",
            "shift",
            "severity",
            "coverage",
            "avg_set_size",
        ]
        .map(String::from),
    )?;
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by(|a, b| {
        (a.score, a.method).cmp(&(b.score, b.method)).then(
            a.severity
                .unwrap_or(0.0)
                .total_cmp(&b.severity.unwrap_or(0.0)),
        )
    });
    for r in rows {
        write_row(
            &mut w,
            path,
            &[
                r.score.to_string(),
                r.method.to_string(),
                r.shift.clone(),
                r.severity.map(fixed4).unwrap_or_default(),
                fixed4(r.coverage),
                fixed4(r.avg_set_size),
            ],
        )?;
    }
    finish(w, path)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut file = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(b"\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// One split listed in a manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub domain: Domain,
    pub rows: usize,
    pub features: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density_ratios: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dataset: String,
    pub num_classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub generator: String,
    pub splits: Vec<SplitEntry>,
    /// Free-form provenance such as the generating spec.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Option<&SplitEntry> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Load a manifest and check that every referenced file exists and has the
/// declared number of rows and columns.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(path)?;
    if manifest.schema_version != MANIFEST_VERSION {
        return Err(Error::schema(
            path,
            format!("unsupported manifest version {}", manifest.schema_version),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    for split in &manifest.splits {
        let features = read_features(&base.join(&split.features), manifest.num_classes)?;
        if features.len() != split.rows || features.dim() != manifest.dim {
            return Err(Error::schema(
                path,
                format!(
                    "split `{}`: declared {} rows x {} dims, file has {} x {}",
                    split.name,
                    split.rows,
                    manifest.dim,
                    features.len(),
                    features.dim()
                ),
            ));
        }
        if let Some(p) = &split.probabilities {
            let probs = read_probabilities(&base.join(p))?;
            if probs.ids != features.ids || probs.num_labels() != manifest.num_classes {
                return Err(Error::schema(
                    path,
                    format!(
                        "split `{}`: probability file does not match features",
                        split.name
                    ),
                ));
            }
        }
        for extra in [&split.losses, &split.density_ratios].into_iter().flatten() {
            let full = base.join(extra);
            if !full.exists() {
                return Err(Error::schema(
                    path,
                    format!("missing file {}", full.display()),
                ));
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{Threshold, ThresholdMethod};
    use std::fs;

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn probabilities_parse_and_validate() {
        let d = dir();
        let good = d.path().join("good.csv");
        fs::write(&good, "id,label,p0,p1\na,0,0.25,0.75\nb,1,1,0\n").unwrap();
        let t = read_probabilities(&good).unwrap();
        assert_eq!(t.ids, vec!["a", "b"]);
        assert_eq!(t.labels, vec![0, 1]);
        assert_eq!(t.probs[0].as_slice(), &[0.25, 0.75]);

        let bad_sum = d.path().join("sum.csv");
        fs::write(&bad_sum, "id,label,p0,p1\na,0,0.5,0.5\nb,1,0.5,0.3\n").unwrap();
        let err = read_probabilities(&bad_sum).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let ragged = d.path().join("ragged.csv");
        fs::write(&ragged, "id,label,p0,p1\na,0,0.5\n").unwrap();
        assert!(read_probabilities(&ragged).is_err());

        let label = d.path().join("label.csv");
        fs::write(&label, "id,label,p0,p1\na,2,0.5,0.5\n").unwrap();
        assert!(read_probabilities(&label).is_err());

        let dup = d.path().join("dup.csv");
        fs::write(&dup, "id,label,p0,p1\na,0,0.5,0.5\na,1,0.5,0.5\n").unwrap();
        assert!(read_probabilities(&dup).is_err());
    }

    #[test]
    fn losses_parse_and_validate() {
        let d = dir();
        let good = d.path().join("l.csv");
        fs::write(&good, "id,loss\nx,0.5\ny,0\n").unwrap();
        assert_eq!(read_losses(&good).unwrap().values, vec![0.5, 0.0]);
        let neg = d.path().join("neg.csv");
        fs::write(&neg, "id,loss\nx,-0.5\n").unwrap();
        assert!(read_losses(&neg)
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        let hdr = d.path().join("hdr.csv");
        fs::write(&hdr, "id,value\nx,1\n").unwrap();
        assert!(read_losses(&hdr).is_err());
        let zero_ratio = d.path().join("r.csv");
        fs::write(&zero_ratio, "id,ratio\nx,0\n").unwrap();
        assert!(read_ratios(&zero_ratio).is_err());
    }

    #[test]
    fn value_alignment_requires_matching_ids() {
        let t = ValueTable {
            ids: vec!["b".into(), "a".into()],
            values: vec![2.0, 1.0],
        };
        let ids = vec!["a".to_string(), "b".to_string()];
        assert_eq!(t.aligned_to(&ids, "losses").unwrap(), vec![1.0, 2.0]);
        assert!(t
            .aligned_to(&["a".to_string(), "c".to_string()], "losses")
            .is_err());
        assert!(t.aligned_to(&["a".to_string()], "losses").is_err());
    }

    fn set(members: Vec<usize>) -> PredictionSet {
        PredictionSet {
            members,
            threshold: Threshold {
                q: 0.5,
                alpha: 0.1,
                method: ThresholdMethod::Split,
                scale: 1.0,
            },
        }
    }

    #[test]
    fn prediction_set_file_contract() {
        let d = dir();
        let path = d.path().join("sets.csv");
        let mut unordered = set(vec![0, 2]);
        unordered.members = vec![2, 0];
        let sets = vec![unordered, set(vec![]), set(vec![1])];
        let ids: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        write_prediction_sets(&path, &ids, &[2, 0, 0], &sets).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "id,label,covered,set_size,members\na,2,1,2,0;2\nb,0,0,0,\nc,0,0,1,1\n"
        );
        let back = read_prediction_sets(&path).unwrap();
        assert_eq!(back.members, vec![vec![0, 2], vec![], vec![1]]);

        let inconsistent = d.path().join("bad.csv");
        fs::write(
            &inconsistent,
            "id,label,covered,set_size,members\na,1,1,1,0\n",
        )
        .unwrap();
        assert!(read_prediction_sets(&inconsistent).is_err());
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let d = dir();
        let path = d.path().join("missing").join("x.csv");
        assert!(matches!(
            write_prediction_sets(&path, &[], &[], &[]),
            Err(Error::Io { .. })
        ));
    }
}
