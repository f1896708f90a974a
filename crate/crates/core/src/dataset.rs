//! Trial and survival data containers with CSV ingestion.
//!
//! Trial files carry the header `x1,...,xr,a,y[,c_true]`, survival files
//! `x1,...,xr,a,time,event[,c_true]`. Fields are comma separated with a `.`
//! decimal point and LF line endings. Reals are written in shortest
//! round-trip form, so `load(save(ds))` reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Column-major matrix of real covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    columns: Vec<Vec<f64>>,
    names: Vec<String>,
    n: usize,
}

impl CovariateMatrix {
    /// Build from columns; names default to `x1..xr`.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=columns.len()).map(|j| format!("x{j}")).collect();
        Self::with_names(columns, names)
    }

    pub fn with_names(columns: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::validation("covariate matrix needs at least one column"));
        }
        if names.len() != columns.len() {
            return Err(Error::validation("one name per covariate column required"));
        }
        let n = columns[0].len();
        if n == 0 {
            return Err(Error::validation("covariate matrix needs at least one row"));
        }
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::validation(format!(
                    "column {} has {} rows, expected {n}",
                    names[j],
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "non-finite covariate at row {}, column {}",
                    i + 1,
                    names[j]
                )));
            }
        }
        for (j, name) in names.iter().enumerate() {
            if names[..j].contains(name) {
                return Err(Error::validation(format!("duplicate covariate name {name}")));
            }
        }
        Ok(Self { columns, names, n })
    }

    /// Build from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != r) {
            return Err(Error::validation("ragged covariate rows"));
        }
        let columns = (0..r).map(|j| rows.iter().map(|row| row[j]).collect()).collect();
        Self::from_columns(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.columns[col]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| indices.iter().map(|&i| c[i]).collect())
            .collect();
        Self {
            columns,
            names: self.names.clone(),
            n: indices.len(),
        }
    }
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::validation(format!("{what} at row {} is not 0 or 1", i + 1))),
        None => Ok(()),
    }
}

fn check_arms(treatment: &[u8]) -> Result<()> {
    let treated = treatment.iter().filter(|&&a| a == 1).count();
    if treated == 0 || treated == treatment.len() {
        return Err(Error::validation("both arms non-empty: treatment must contain 0s and 1s"));
    }
    Ok(())
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::validation(format!("non-finite {what} at row {}", i + 1))),
        None => Ok(()),
    }
}

/// Randomized trial with a continuous outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub covariates: CovariateMatrix,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    /// Known randomization probability `pr(A = 1)`.
    pub propensity: f64,
    /// Ground-truth contrast `C(x_i)`, simulation only.
    pub true_contrast: Option<Vec<f64>>,
}

impl TrialDataset {
    pub fn new(
        covariates: CovariateMatrix,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        propensity: f64,
        true_contrast: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = covariates.n_rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::validation(format!(
                "length mismatch: {n} covariate rows, {} treatments, {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        check_binary(&treatment, "treatment")?;
        check_arms(&treatment)?;
        check_finite(&outcome, "outcome")?;
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(Error::validation(format!("propensity {propensity} must lie in (0, 1)")));
        }
        if let Some(c) = &true_contrast {
            if c.len() != n {
                return Err(Error::validation("true contrast length mismatch"));
            }
            check_finite(c, "true contrast")?;
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            propensity,
            true_contrast,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    /// Row indices of units in arm `arm`.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        arm_indices(&self.treatment, arm)
    }
}

/// Right-censored time-to-event data.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    pub covariates: CovariateMatrix,
    pub treatment: Vec<u8>,
    /// `min(T, C)`.
    pub observed_time: Vec<f64>,
    /// 1 when the event was observed (`T <= C`).
    pub event: Vec<u8>,
    /// Ground-truth RMST difference, simulation only.
    pub true_contrast: Option<Vec<f64>>,
}

impl SurvivalDataset {
    pub fn new(
        covariates: CovariateMatrix,
        treatment: Vec<u8>,
        observed_time: Vec<f64>,
        event: Vec<u8>,
        true_contrast: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = covariates.n_rows();
        if treatment.len() != n || observed_time.len() != n || event.len() != n {
            return Err(Error::validation("length mismatch in survival dataset"));
        }
        check_binary(&treatment, "treatment")?;
        check_binary(&event, "event")?;
        check_arms(&treatment)?;
        if let Some(i) = observed_time.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::validation(format!(
                "observed time at row {} must be finite and nonnegative",
                i + 1
            )));
        }
        for arm in [0u8, 1] {
            let has_event = treatment
                .iter()
                .zip(&event)
                .any(|(&a, &e)| a == arm && e == 1);
            if !has_event {
                return Err(Error::validation(format!("arm {arm} has no observed events")));
            }
        }
        if let Some(c) = &true_contrast {
            if c.len() != n {
                return Err(Error::validation("true contrast length mismatch"));
            }
            check_finite(c, "true contrast")?;
        }
        Ok(Self {
            covariates,
            treatment,
            observed_time,
            event,
            true_contrast,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        arm_indices(&self.treatment, arm)
    }
}

fn arm_indices(treatment: &[u8], arm: u8) -> Vec<usize> {
    treatment
        .iter()
        .enumerate()
        .filter(|(_, &a)| a == arm)
        .map(|(i, _)| i)
        .collect()
}

/// The parsed header of a delimited data file.
struct Layout {
    covariates: Vec<usize>,
    named: Vec<(&'static str, Option<usize>)>,
}

impl Layout {
    fn col(&self, name: &str) -> Option<usize> {
        self.named.iter().find(|(n, _)| *n == name).and_then(|(_, c)| *c)
    }
}

fn parse_layout(headers: &csv::StringRecord, required: &[&'static str], optional: &[&'static str]) -> Result<Layout> {
    let mut covariates = Vec::new();
    let mut named: Vec<(&'static str, Option<usize>)> =
        required.iter().chain(optional).map(|&n| (n, None)).collect();
    for (pos, header) in headers.iter().enumerate() {
        if let Some(idx) = header.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx != covariates.len() + 1 {
                return Err(Error::Schema(format!(
                    "covariate column `{header}` out of sequence; expected x{}",
                    covariates.len() + 1
                )));
            }
            covariates.push(pos);
            continue;
        }
        match named.iter_mut().find(|(n, _)| *n == header) {
            Some((_, slot @ None)) => *slot = Some(pos),
            Some((_, Some(_))) => return Err(Error::Schema(format!("duplicate column `{header}`"))),
            None => return Err(Error::Schema(format!("unexpected column `{header}`"))),
        }
    }
    if covariates.is_empty() {
        return Err(Error::Schema("no covariate columns x1..xr".into()));
    }
    for name in required {
        if named.iter().any(|(n, c)| n == name && c.is_none()) {
            return Err(Error::Schema(format!("missing column `{name}`")));
        }
    }
    Ok(Layout { covariates, named })
}

struct Table {
    headers: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record.map_err(|e| csv_error(path, e))?);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!("{} has no data rows", path.display())));
    }
    Ok(Table { headers, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn parse_cell(table: &Table, row: usize, col: usize) -> Result<f64> {
    let raw = table.rows[row].get(col).unwrap_or("");
    raw.parse::<f64>().map_err(|_| Error::Parse {
        row: row + 1,
        column: table.headers.get(col).unwrap_or("").to_string(),
        message: if raw.is_empty() {
            "missing value".to_string()
        } else {
            format!("`{raw}` is not a number")
        },
    })
}

fn parse_column(table: &Table, col: usize) -> Result<Vec<f64>> {
    (0..table.rows.len()).map(|i| parse_cell(table, i, col)).collect()
}

fn parse_flag_column(table: &Table, col: usize) -> Result<Vec<u8>> {
    let header = table.headers.get(col).unwrap_or("");
    parse_column(table, col)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            v => Err(Error::validation(format!(
                "{header} at row {} is {v}; must be 0 or 1",
                i + 1
            ))),
        })
        .collect()
}

fn read_covariates(table: &Table, layout: &Layout) -> Result<CovariateMatrix> {
    let columns = layout
        .covariates
        .iter()
        .map(|&c| parse_column(table, c))
        .collect::<Result<Vec<_>>>()?;
    CovariateMatrix::from_columns(columns)
}

/// Load a trial CSV. `propensity` is the known randomization probability.
pub fn load_trial_csv(path: impl AsRef<Path>, propensity: f64) -> Result<TrialDataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let layout = parse_layout(&table.headers, &["a", "y"], &["c_true"])?;
    let covariates = read_covariates(&table, &layout)?;
    let treatment = parse_flag_column(&table, layout.col("a").unwrap())?;
    let outcome = parse_column(&table, layout.col("y").unwrap())?;
    let truth = layout.col("c_true").map(|c| parse_column(&table, c)).transpose()?;
    TrialDataset::new(covariates, treatment, outcome, propensity, truth)
}

/// Load a survival CSV.
pub fn load_survival_csv(path: impl AsRef<Path>) -> Result<SurvivalDataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let layout = parse_layout(&table.headers, &["a", "time", "event"], &["c_true"])?;
    let covariates = read_covariates(&table, &layout)?;
    let treatment = parse_flag_column(&table, layout.col("a").unwrap())?;
    let time = parse_column(&table, layout.col("time").unwrap())?;
    let event = parse_flag_column(&table, layout.col("event").unwrap())?;
    let truth = layout.col("c_true").map(|c| parse_column(&table, c)).transpose()?;
    SurvivalDataset::new(covariates, treatment, time, event, truth)
}

/// Header line (without newline) for a trial file with `r` covariates.
pub fn trial_header(r: usize, with_truth: bool) -> String {
    header(r, &["a", "y"], with_truth)
}

pub fn survival_header(r: usize, with_truth: bool) -> String {
    header(r, &["a", "time", "event"], with_truth)
}

fn header(r: usize, tail: &[&str], with_truth: bool) -> String {
    let mut cols: Vec<String> = (1..=r).map(|j| format!("x{j}")).collect();
    cols.extend(tail.iter().map(|s| s.to_string()));
    if with_truth {
        cols.push("c_true".into());
    }
    cols.join(",")
}

fn write_rows(
    path: &Path,
    header: &str,
    covariates: &CovariateMatrix,
    mut tail: impl FnMut(usize, &mut String),
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut line = String::with_capacity(256);
    let write = |out: &mut BufWriter<File>, line: &str| {
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
    };
    write(&mut out, header)?;
    write(&mut out, "\n")?;
    for i in 0..covariates.n_rows() {
        line.clear();
        for j in 0..covariates.n_cols() {
            if j > 0 {
                line.push(',');
            }
            push_real(&mut line, covariates.get(i, j));
        }
        tail(i, &mut line);
        line.push('\n');
        write(&mut out, &line)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn push_real(line: &mut String, v: f64) {
    use std::fmt::Write as _;
    // `{:?}` is the shortest representation that parses back to the same bits.
    let _ = write!(line, "{v:?}");
}

pub fn save_trial_csv(ds: &TrialDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = trial_header(ds.covariates.n_cols(), ds.true_contrast.is_some());
    write_rows(path, &header, &ds.covariates, |i, line| {
        line.push(',');
        line.push(if ds.treatment[i] == 1 { '1' } else { '0' });
        line.push(',');
        push_real(line, ds.outcome[i]);
        if let Some(c) = &ds.true_contrast {
            line.push(',');
            push_real(line, c[i]);
        }
    })
}

pub fn save_survival_csv(ds: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = survival_header(ds.covariates.n_cols(), ds.true_contrast.is_some());
    write_rows(path, &header, &ds.covariates, |i, line| {
        line.push(',');
        line.push(if ds.treatment[i] == 1 { '1' } else { '0' });
        line.push(',');
        push_real(line, ds.observed_time[i]);
        line.push(',');
        line.push(if ds.event[i] == 1 { '1' } else { '0' });
        if let Some(c) = &ds.true_contrast {
            line.push(',');
            push_real(line, c[i]);
        }
    })
}

/// True when the file's header names a survival schema.
pub fn is_survival_csv(path: impl AsRef<Path>) -> Result<bool> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?;
    Ok(headers.iter().any(|h| h == "time"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_small_trial_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "x1,x2,a,y\n0.5,1,0,2.5\n-1,2,1,3\n0,0,1,-1\n");
        let ds = load_trial_csv(&p, 0.5).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.covariates.n_cols(), 2);
        assert_eq!(ds.covariates.get(1, 0), -1.0);
        assert_eq!(ds.treatment, vec![0, 1, 1]);
        assert!(ds.true_contrast.is_none());
    }

    #[test]
    fn one_armed_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "x1,a,y\n0.5,1,2.5\n-1,1,3\n");
        let err = load_trial_csv(&p, 0.5).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("both arms non-empty")), "{err}");
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = write(&dir, "m.csv", "x1,a\n1,0\n");
        assert!(matches!(load_trial_csv(&missing, 0.5), Err(Error::Schema(_))));
        let dup = write(&dir, "d.csv", "x1,a,y,y\n1,0,1,1\n");
        assert!(matches!(load_trial_csv(&dup, 0.5), Err(Error::Schema(_))));
        let gap = write(&dir, "g.csv", "x1,x3,a,y\n1,0,1,1\n");
        assert!(matches!(load_trial_csv(&gap, 0.5), Err(Error::Schema(_))));
    }

    #[test]
    fn parse_error_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "x1,a,y\n1,0,2\n1,1,abc\n");
        match load_trial_csv(&p, 0.5).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other}"),
        }
        let empty = write(&dir, "e.csv", "x1,a,y\n,0,2\n1,1,2\n");
        assert!(matches!(load_trial_csv(&empty, 0.5), Err(Error::Parse { .. })));
    }

    #[test]
    fn survival_validation() {
        let dir = tempfile::tempdir().unwrap();
        let ok = write(&dir, "s.csv", "x1,a,time,event\n0.1,0,2.0,1\n0.2,1,3.5,1\n");
        assert_eq!(load_survival_csv(&ok).unwrap().len(), 2);
        let neg = write(&dir, "n.csv", "x1,a,time,event\n0.1,0,-1,1\n0.2,1,3.5,1\n");
        assert!(matches!(load_survival_csv(&neg), Err(Error::Validation(_))));
        let bad_event = write(&dir, "b.csv", "x1,a,time,event\n0.1,0,1,2\n0.2,1,3.5,1\n");
        assert!(matches!(load_survival_csv(&bad_event), Err(Error::Validation(_))));
    }

    #[test]
    fn propensity_must_be_interior() {
        let x = CovariateMatrix::from_columns(vec![vec![0.0, 1.0]]).unwrap();
        assert!(TrialDataset::new(x.clone(), vec![0, 1], vec![0.0, 1.0], 1.0, None).is_err());
        assert!(TrialDataset::new(x, vec![0, 1], vec![0.0, 1.0], 0.5, None).is_ok());
    }

    #[test]
    fn header_matches_schema_and_omits_empty_optional() {
        assert_eq!(trial_header(3, false), "x1,x2,x3,a,y");
        assert_eq!(trial_header(2, true), "x1,x2,a,y,c_true");
        assert_eq!(survival_header(1, false), "x1,a,time,event");
    }

    #[test]
    fn save_writes_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let x = CovariateMatrix::from_columns(vec![vec![0.1, 0.2]]).unwrap();
        let ds = TrialDataset::new(x, vec![0, 1], vec![1.0 / 3.0, 2.0], 0.5, None).unwrap();
        let p = dir.path().join("out.csv");
        save_trial_csv(&ds, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,a,y");
        assert_eq!(load_trial_csv(&p, 0.5).unwrap(), ds);
    }
}
