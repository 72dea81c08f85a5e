//! Tabular data ingestion and design-matrix assembly.
//!
//! A [`Dataset`] is a set of equal-length numeric columns. A [`ModelSpec`]
//! names the roles (outcome, endogenous regressors, covariates, excluded
//! instruments, optional cluster id) and [`build_design`] assembles the
//! design matrices in a deterministic, recorded column order:
//!
//! - `X = [covariates | endogenous]`, n×(l+p)
//! - `Z = [covariates | excluded instruments]`, n×(l+q)
//!
//! with a synthetic constant prepended to the covariate block unless
//! suppressed. Rows containing the NA token are dropped on load (listwise
//! deletion) and the drop count is surfaced in the load summary.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Column-oriented numeric table with unique column names.
#[derive(Debug, Clone)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n: usize,
}

impl Dataset {
    /// Build a dataset from named columns. All columns must have the same
    /// nonzero length, contain only finite values, and names must be unique.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Spec(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Spec(format!("duplicate column name `{name}`")));
            }
        }
        let n = columns.first().map_or(0, |c| c.len());
        if n == 0 {
            return Err(Error::Spec("zero observations".into()));
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Spec(format!(
                    "column `{name}` has length {} but expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Spec(format!(
                    "non-finite value in column `{name}` at row {i}"
                )));
            }
        }
        Ok(Dataset { names, columns, n })
    }

    /// Convenience constructor from rows (used heavily in tests).
    pub fn from_rows(names: &[&str], rows: &[&[f64]]) -> Result<Self> {
        let k = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); k];
        for row in rows {
            if row.len() != k {
                return Err(Error::Spec("ragged row".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                columns[j].push(v);
            }
        }
        Dataset::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|c| c == name)
            .map(|i| self.columns[i].as_slice())
    }
}

/// CSV parsing options: field delimiter and the token treated as missing.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub na_token: String,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            na_token: "NA".into(),
        }
    }
}

/// Row accounting for a CSV load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_dropped: usize,
}

/// Read a headered CSV file into a [`Dataset`], dropping any row that
/// contains the NA token. Non-numeric fields other than the NA token are
/// an error, as are ragged rows and files with no surviving observations.
pub fn load_csv<P: AsRef<Path>>(path: P, options: &CsvOptions) -> Result<(Dataset, LoadSummary)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Csv(format!("{}: empty header", path.display())));
    }

    let k = headers.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut rows_read = 0usize;
    let mut rows_dropped = 0usize;
    let mut parsed = Vec::with_capacity(k);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
        rows_read += 1;
        if record.len() != k {
            return Err(Error::Csv(format!(
                "{}: row {} has {} fields, header has {k}",
                path.display(),
                line + 2,
                record.len()
            )));
        }
        parsed.clear();
        let mut has_na = false;
        for (j, field) in record.iter().enumerate() {
            if field == options.na_token {
                has_na = true;
                continue;
            }
            let value: f64 = field.parse().map_err(|_| {
                Error::Csv(format!(
                    "{}: row {}, column `{}`: cannot parse `{field}` as a number",
                    path.display(),
                    line + 2,
                    headers[j]
                ))
            })?;
            parsed.push(value);
        }
        if has_na {
            rows_dropped += 1;
            continue;
        }
        for (col, &v) in columns.iter_mut().zip(parsed.iter()) {
            col.push(v);
        }
    }

    let rows_kept = rows_read - rows_dropped;
    if rows_kept == 0 {
        return Err(Error::Csv(format!(
            "{}: zero observations after dropping {rows_dropped} incomplete rows",
            path.display()
        )));
    }
    let dataset = Dataset::new(headers, columns)?;
    Ok((
        dataset,
        LoadSummary {
            rows_read,
            rows_kept,
            rows_dropped,
        },
    ))
}

/// Name used for the synthetic constant column.
pub const CONSTANT_NAME: &str = "const";

/// Variable roles for one estimation problem.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
    pub cluster: Option<String>,
    /// Prepend a constant to the covariate block (on by default; turn off
    /// only for fully saturated designs).
    pub include_constant: bool,
}

impl ModelSpec {
    pub fn new<S: Into<String>>(outcome: S, endogenous: Vec<String>, instruments: Vec<String>) -> Self {
        ModelSpec {
            outcome: outcome.into(),
            endogenous,
            covariates: Vec::new(),
            instruments,
            cluster: None,
            include_constant: true,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<String>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_cluster<S: Into<String>>(mut self, cluster: S) -> Self {
        self.cluster = Some(cluster.into());
        self
    }

    pub fn without_constant(mut self) -> Self {
        self.include_constant = false;
        self
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.endogenous.is_empty() {
            return Err(Error::Spec("at least one endogenous variable required".into()));
        }
        if self.instruments.len() < self.endogenous.len() {
            return Err(Error::Spec(format!(
                "under-identified: {} instruments for {} endogenous variables",
                self.instruments.len(),
                self.endogenous.len()
            )));
        }
        let mut seen: HashSet<&str> = HashSet::new();
        let mut roles = vec![self.outcome.as_str()];
        roles.extend(self.endogenous.iter().map(|s| s.as_str()));
        roles.extend(self.covariates.iter().map(|s| s.as_str()));
        roles.extend(self.instruments.iter().map(|s| s.as_str()));
        if let Some(c) = &self.cluster {
            roles.push(c.as_str());
        }
        for label in roles {
            if !seen.insert(label) {
                return Err(Error::Spec(format!(
                    "label `{label}` appears in more than one role"
                )));
            }
            if data.column(label).is_none() {
                return Err(Error::Spec(format!("column `{label}` not found in data")));
            }
        }
        Ok(())
    }
}

/// Assembled design matrices with recorded column order.
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    pub y: DVector<f64>,
    /// n×(l+p): covariate block first, endogenous block last.
    pub x: DMatrix<f64>,
    /// n×(l+q): covariate block first, excluded instruments last.
    pub z: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z_names: Vec<String>,
    /// Group codes in `[0, groups)`, present when the spec named a cluster id.
    pub cluster_ids: Option<Vec<usize>>,
    /// l: number of covariates (including the constant when enabled).
    pub n_covariates: usize,
    /// p: number of endogenous regressors.
    pub n_endogenous: usize,
    /// q: number of excluded instruments.
    pub n_excluded: usize,
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of cluster groups, if cluster ids are present.
    pub fn n_clusters(&self) -> Option<usize> {
        self.cluster_ids
            .as_ref()
            .map(|ids| ids.iter().copied().max().map_or(0, |m| m + 1))
    }

    /// Assemble from raw matrices, running the same rank checks as
    /// [`build_design`]. `x` must hold the covariate block first and the
    /// endogenous block last, and `z` the covariate block first and the
    /// excluded instruments last.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        x_names: Vec<String>,
        z_names: Vec<String>,
        n_covariates: usize,
        n_endogenous: usize,
        cluster_ids: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Spec("row count mismatch between Y, X, Z".into()));
        }
        if x.ncols() != n_covariates + n_endogenous || z.ncols() < x.ncols() {
            return Err(Error::Spec("inconsistent design dimensions".into()));
        }
        let n_excluded = z.ncols() - n_covariates;
        let design = DesignMatrices {
            y,
            x,
            z,
            x_names,
            z_names,
            cluster_ids,
            n_covariates,
            n_endogenous,
            n_excluded,
        };
        design.check_rank()?;
        Ok(design)
    }

    fn check_rank(&self) -> Result<()> {
        let kz = self.z.ncols();
        let sv = linalg::singular_values(&self.z);
        let rz = linalg::rank_from_singular_values(&sv, linalg::RANK_TOL);
        if rz < kz {
            return Err(Error::RankDeficient(format!(
                "instrument matrix Z has rank {rz} < {kz}{}",
                name_collinear(&self.z, &self.z_names)
            )));
        }
        let xz = self.x.transpose() * &self.z;
        let rxz = linalg::rank(&xz);
        if rxz < self.x.ncols() {
            return Err(Error::RankDeficient(format!(
                "cross-moment matrix X'Z has rank {rxz} < {} (instruments do not identify all regressors)",
                self.x.ncols()
            )));
        }
        Ok(())
    }
}

/// Try to name columns whose removal restores full rank; best effort only.
fn name_collinear(m: &DMatrix<f64>, names: &[String]) -> String {
    let k = m.ncols();
    if k > 32 {
        return String::new();
    }
    let full = linalg::rank(m);
    let mut offenders = Vec::new();
    for j in 0..k {
        let reduced = m.clone().remove_column(j);
        if linalg::rank(&reduced) == full {
            offenders.push(names.get(j).cloned().unwrap_or_else(|| format!("col{j}")));
        }
    }
    if offenders.is_empty() {
        String::new()
    } else {
        format!(" (columns involved: {})", offenders.join(", "))
    }
}

/// Build design matrices for `spec` against `data`, verifying the rank
/// conditions rank(Z) = l+q and rank(X'Z) = l+p before returning.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<DesignMatrices> {
    spec.validate(data)?;
    let n = data.n();

    let mut cov_names: Vec<String> = Vec::new();
    if spec.include_constant {
        cov_names.push(CONSTANT_NAME.to_string());
    }
    cov_names.extend(spec.covariates.iter().cloned());
    let l = cov_names.len();
    let p = spec.endogenous.len();
    let q = spec.instruments.len();
    if l + q > n || l + p > n {
        return Err(Error::Spec(format!(
            "design has more columns than the {n} observations"
        )));
    }

    let fetch = |label: &str| -> &[f64] { data.column(label).expect("validated above") };

    let mut x = DMatrix::zeros(n, l + p);
    let mut z = DMatrix::zeros(n, l + q);
    for (j, name) in cov_names.iter().enumerate() {
        if spec.include_constant && j == 0 {
            x.column_mut(j).fill(1.0);
            z.column_mut(j).fill(1.0);
        } else {
            let col = fetch(name);
            for i in 0..n {
                x[(i, j)] = col[i];
                z[(i, j)] = col[i];
            }
        }
    }
    for (j, name) in spec.endogenous.iter().enumerate() {
        let col = fetch(name);
        for i in 0..n {
            x[(i, l + j)] = col[i];
        }
    }
    for (j, name) in spec.instruments.iter().enumerate() {
        let col = fetch(name);
        for i in 0..n {
            z[(i, l + j)] = col[i];
        }
    }

    let cluster_ids = match &spec.cluster {
        None => None,
        Some(label) => {
            let col = fetch(label);
            let mut codes = Vec::with_capacity(n);
            let mut levels: Vec<f64> = Vec::new();
            for &v in col {
                let code = match levels.iter().position(|&u| u == v) {
                    Some(c) => c,
                    None => {
                        levels.push(v);
                        levels.len() - 1
                    }
                };
                codes.push(code);
            }
            Some(codes)
        }
    };

    let mut x_names = cov_names.clone();
    x_names.extend(spec.endogenous.iter().cloned());
    let mut z_names = cov_names;
    z_names.extend(spec.instruments.iter().cloned());

    let y = DVector::from_column_slice(fetch(&spec.outcome));
    DesignMatrices::from_parts(y, x, z, x_names, z_names, l, p, cluster_ids)
}
