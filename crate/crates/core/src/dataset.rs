//! Records, declared bounds, outcome clipping and fold assignment.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Seed;

/// Dense row-major matrix of covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Declared bounds on outcomes (`b_mu`) and inverse propensities (`b_pi`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub b_mu: f64,
    pub b_pi: f64,
}

impl Bounds {
    /// `b_pi` must be at least 2: the propensity clip range
    /// `[1/b_pi, 1 - 1/b_pi]` is empty otherwise.
    pub fn new(b_mu: f64, b_pi: f64) -> Result<Self> {
        if !(b_mu.is_finite() && b_mu > 0.0) {
            return Err(Error::param(format!("b_mu must be positive and finite, got {b_mu}")));
        }
        if !(b_pi.is_finite() && b_pi >= 2.0) {
            return Err(Error::param(format!("b_pi must be finite and >= 2, got {b_pi}")));
        }
        Ok(Bounds { b_mu, b_pi })
    }

    /// Clip threshold on propensities, `1 / b_pi`.
    pub fn eta(&self) -> f64 {
        1.0 / self.b_pi
    }

    pub fn propensity_range(&self) -> (f64, f64) {
        (self.eta(), 1.0 - self.eta())
    }

    pub fn outcome_range(&self) -> (f64, f64) {
        (-self.b_mu, self.b_mu)
    }
}

/// Observational records `(X_i, A_i, Y_i)`.
///
/// Construction only checks shapes. Value constraints (binary treatment,
/// finite entries, outcome range) are checked by [`validate`] so that raw
/// input can be loaded and diagnosed before use.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    covariates: Matrix,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
}

impl Dataset {
    pub fn new(covariates: Matrix, treatment: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        let n = covariates.rows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::shape(format!(
                "covariates have {n} rows but treatment has {} and outcome has {}",
                treatment.len(),
                outcome.len()
            )));
        }
        if n < 2 {
            return Err(Error::shape(format!("dataset needs at least 2 records, got {n}")));
        }
        Ok(Dataset { covariates, treatment, outcome })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn d(&self) -> usize {
        self.covariates.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[f64] {
        self.covariates.row(i)
    }

    pub fn treated_fraction(&self) -> f64 {
        self.treatment.iter().sum::<f64>() / self.n() as f64
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.d()).map(|j| format!("x{j}")).collect();
        names.push("a".into());
        names.push("y".into());
        names
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Reads the `x0..x{d-1}, a, y` CSV layout. Columns may appear in any order.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        let layout = ColumnLayout::resolve(&names)?;
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |col: usize| -> Result<f64> {
                let raw = record.get(col).unwrap_or("").trim();
                raw.parse::<f64>().map_err(|_| {
                    Error::shape(format!("row {row}, column '{}': cannot parse '{raw}'", names[col]))
                })
            };
            for &col in &layout.x {
                x.push(field(col)?);
            }
            a.push(field(layout.a)?);
            y.push(field(layout.y)?);
        }
        let n = a.len();
        Dataset::new(Matrix::new(n, layout.x.len(), x)?, a, y)
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.column_names())?;
        let mut buf = Vec::with_capacity(self.d() + 2);
        for i in 0..self.n() {
            buf.clear();
            buf.extend(self.x(i).iter().map(f64::to_string));
            buf.push(self.treatment[i].to_string());
            buf.push(self.outcome[i].to_string());
            wtr.write_record(&buf)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// JSON mirror of the CSV layout: `{"columns": [...], "rows": [[...], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.n())
            .map(|i| {
                let mut r = self.x(i).to_vec();
                r.push(self.treatment[i]);
                r.push(self.outcome[i]);
                r
            })
            .collect();
        serde_json::to_value(JsonDataset { columns: self.column_names(), rows }).expect("serializable")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let parsed: JsonDataset = serde_json::from_value(value)?;
        let names: Vec<&str> = parsed.columns.iter().map(String::as_str).collect();
        let layout = ColumnLayout::resolve(&names)?;
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for (i, r) in parsed.rows.iter().enumerate() {
            if r.len() != names.len() {
                return Err(Error::shape(format!("row {i} has {} fields, expected {}", r.len(), names.len())));
            }
            x.extend(layout.x.iter().map(|&c| r[c]));
            a.push(r[layout.a]);
            y.push(r[layout.y]);
        }
        let n = a.len();
        Dataset::new(Matrix::new(n, layout.x.len(), x)?, a, y)
    }

    /// Keeps the given rows (in order).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let d = self.d();
        let mut x = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            x.extend_from_slice(self.x(i));
        }
        Dataset::new(
            Matrix::new(rows.len(), d, x)?,
            rows.iter().map(|&i| self.treatment[i]).collect(),
            rows.iter().map(|&i| self.outcome[i]).collect(),
        )
    }

    /// Rescales covariates so that the `quantile` row-norm equals one, then
    /// projects rows with larger norm onto the unit ball.
    pub fn rescale_covariates(&self, quantile: f64) -> Result<Self> {
        if !(0.0 < quantile && quantile <= 1.0) {
            return Err(Error::param(format!("quantile must be in (0, 1], got {quantile}")));
        }
        let mut norms: Vec<f64> = (0..self.n())
            .map(|i| self.x(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut sorted = norms.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = ((quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        let scale = sorted[rank - 1];
        let mut out = self.clone();
        if scale > 0.0 {
            for (i, norm) in norms.iter_mut().enumerate() {
                let shrink = (*norm / scale).max(1.0);
                for v in out.covariates.row_mut(i) {
                    *v /= scale * shrink;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

struct ColumnLayout {
    x: Vec<usize>,
    a: usize,
    y: usize,
}

impl ColumnLayout {
    fn resolve(names: &[&str]) -> Result<Self> {
        let find = |name: &str| names.iter().position(|n| *n == name);
        let a = find("a").ok_or_else(|| Error::shape("missing column 'a'"))?;
        let y = find("y").ok_or_else(|| Error::shape("missing column 'y'"))?;
        let mut x = Vec::new();
        while let Some(c) = find(&format!("x{}", x.len())) {
            x.push(c);
        }
        let expected = x.len() + 2;
        if names.len() != expected {
            return Err(Error::shape(format!(
                "expected columns x0..x{}, a, y; got {:?}",
                x.len().saturating_sub(1),
                names
            )));
        }
        Ok(ColumnLayout { x, a, y })
    }
}

/// Result of [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub d: usize,
    pub outcomes_out_of_bounds: usize,
    pub non_binary_treatments: usize,
    pub non_finite_entries: usize,
}

impl ValidationReport {
    /// True when the data satisfies every constraint once outcomes are clipped.
    pub fn passes(&self) -> bool {
        self.non_binary_treatments == 0 && self.non_finite_entries == 0
    }

    pub fn summary(&self) -> String {
        match self.outcomes_out_of_bounds {
            0 => "all outcomes within bounds".to_string(),
            1 => "1 outcome requires clipping".to_string(),
            c => format!("{c} outcomes require clipping"),
        }
    }
}

/// Checks treatment values, finiteness and outcome range.
///
/// Non-binary treatments and NaN/infinite entries are hard errors; outcomes
/// outside `[-b_mu, b_mu]` are only counted since [`clip_outcomes`] fixes them.
pub fn validate(data: &Dataset, bounds: &Bounds) -> Result<ValidationReport> {
    let mut first_non_finite = None;
    let mut non_finite = 0;
    for i in 0..data.n() {
        let bad_x = data.x(i).iter().filter(|v| !v.is_finite()).count();
        let bad_a = usize::from(!data.treatment[i].is_finite());
        let bad_y = usize::from(!data.outcome[i].is_finite());
        if bad_x + bad_a + bad_y > 0 && first_non_finite.is_none() {
            let field = if bad_x > 0 { "covariate" } else if bad_a > 0 { "treatment" } else { "outcome" };
            first_non_finite = Some((field, i));
        }
        non_finite += bad_x + bad_a + bad_y;
    }
    let mut first_non_binary = None;
    let mut non_binary = 0;
    for (i, &a) in data.treatment.iter().enumerate() {
        if a.is_finite() && a != 0.0 && a != 1.0 {
            non_binary += 1;
            first_non_binary.get_or_insert((i, a));
        }
    }
    if let Some((row, value)) = first_non_binary {
        return Err(Error::NonBinaryTreatment { count: non_binary, row, value });
    }
    if let Some((field, row)) = first_non_finite {
        return Err(Error::NonFinite { field, row });
    }
    let outcomes_out_of_bounds = data.outcome.iter().filter(|y| y.abs() > bounds.b_mu).count();
    Ok(ValidationReport {
        n: data.n(),
        d: data.d(),
        outcomes_out_of_bounds,
        non_binary_treatments: non_binary,
        non_finite_entries: non_finite,
    })
}

/// Replaces every outcome by its projection on `[-b_mu, b_mu]`.
pub fn clip_outcomes(data: &Dataset, bounds: &Bounds) -> Dataset {
    let mut out = data.clone();
    for y in &mut out.outcome {
        *y = y.clamp(-bounds.b_mu, bounds.b_mu);
    }
    out
}

/// Partition of record indices `0..n` into `k` disjoint folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl FoldAssignment {
    /// Builds an assignment from explicit fold labels.
    pub fn from_labels(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        let n = fold_of.len();
        if k < 2 || k > n {
            return Err(Error::InvalidFoldCount { n, k });
        }
        let mut members = vec![Vec::new(); k];
        for (i, &f) in fold_of.iter().enumerate() {
            if f >= k {
                return Err(Error::shape(format!("record {i} assigned to fold {f} >= k={k}")));
            }
            members[f].push(i);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyFold(empty));
        }
        Ok(FoldAssignment { fold_of, members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    #[inline]
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn all_members(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Seeded uniform shuffle of `0..n` sliced into `k` contiguous folds; the
/// first `n mod k` folds get one extra member.
pub fn split_folds(n: usize, k: usize, seed: Seed) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::InvalidFoldCount { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed.rng());
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut members = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let fold: Vec<usize> = perm[start..start + size].to_vec();
        for &i in &fold {
            fold_of[i] = f;
        }
        members.push(fold);
        start += size;
    }
    Ok(FoldAssignment { fold_of, members })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(a: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = a.len();
        Dataset::new(Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(), a, y).unwrap()
    }

    #[test]
    fn valid_three_rows_pass() {
        let data = toy(vec![0.0, 1.0, 1.0], vec![-1.0, 0.3, 1.0]);
        let report = validate(&data, &Bounds::new(1.0, 2.0).unwrap()).unwrap();
        assert!(report.passes());
        assert_eq!(report.outcomes_out_of_bounds, 0);
    }

    #[test]
    fn non_binary_treatment_is_error() {
        let data = toy(vec![0.0, 2.0, 1.0], vec![0.0; 3]);
        let err = validate(&data, &Bounds::new(1.0, 2.0).unwrap()).unwrap_err();
        assert!(err.to_string().contains("non-binary treatment"), "{err}");
    }

    #[test]
    fn nan_is_error() {
        let data = toy(vec![0.0, 1.0, 1.0], vec![0.0, f64::NAN, 0.0]);
        assert!(matches!(
            validate(&data, &Bounds::new(1.0, 2.0).unwrap()),
            Err(Error::NonFinite { field: "outcome", row: 1 })
        ));
    }

    #[test]
    fn out_of_range_outcome_reported() {
        let data = toy(vec![0.0, 1.0, 1.0], vec![0.0, 1.7, 0.0]);
        let report = validate(&data, &Bounds::new(1.0, 2.0).unwrap()).unwrap();
        assert_eq!(report.outcomes_out_of_bounds, 1);
        assert_eq!(report.summary(), "1 outcome requires clipping");
    }

    #[test]
    fn clipping_examples() {
        let bounds = Bounds::new(1.0, 2.0).unwrap();
        let data = toy(vec![0.0, 1.0, 1.0], vec![0.5, 1.7, -3.0]);
        let clipped = clip_outcomes(&data, &bounds);
        assert_eq!(clipped.outcome(), &[0.5, 1.0, -1.0]);
        assert_eq!(clipped.treatment(), data.treatment());
        assert_eq!(clipped.covariates(), data.covariates());
    }

    #[test]
    fn bounds_reject_degenerate_values() {
        assert!(Bounds::new(0.0, 2.0).is_err());
        assert!(Bounds::new(1.0, 1.5).is_err());
        assert!(Bounds::new(1.0, 2.0).is_ok());
    }

    #[test]
    fn fold_sizes() {
        let f = split_folds(10, 5, Seed(3)).unwrap();
        assert!(f.sizes().iter().all(|&s| s == 2));
        let mut sizes = split_folds(11, 5, Seed(3)).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 2, 2, 2, 3]);
        assert!(matches!(split_folds(3, 5, Seed(0)), Err(Error::InvalidFoldCount { .. })));
        assert!(split_folds(3, 1, Seed(0)).is_err());
    }

    #[test]
    fn csv_round_trip_and_bad_input() {
        let data = toy(vec![0.0, 1.0], vec![0.25, -0.5]);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("x0,a,y\n"));
        assert_eq!(Dataset::read_csv(&buf[..]).unwrap(), data);
        assert!(Dataset::read_csv("x0,a,y\n1,0,\n2,1,0\n".as_bytes()).is_err());
        assert!(Dataset::read_csv("x0,y\n1,0\n2,1\n".as_bytes()).is_err());
    }

    #[test]
    fn json_mirrors_csv() {
        let data = toy(vec![0.0, 1.0, 0.0], vec![0.25, -0.5, 0.0]);
        let json = data.to_json();
        assert_eq!(json["columns"], serde_json::json!(["x0", "a", "y"]));
        assert_eq!(Dataset::from_json(json).unwrap(), data);
    }

    #[test]
    fn rescale_bounds_most_norms() {
        let x = Matrix::new(4, 2, vec![3.0, 4.0, 0.3, 0.4, 6.0, 8.0, 0.0, 0.0]).unwrap();
        let data = Dataset::new(x, vec![0.0; 4], vec![0.0; 4]).unwrap();
        let out = data.rescale_covariates(0.75).unwrap();
        let norm = |i: usize| out.x(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm(0) - 1.0).abs() < 1e-12);
        assert!((norm(1) - 0.1).abs() < 1e-12);
        assert!((norm(2) - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn folds_partition_indices(n in 2usize..200, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let f = split_folds(n, k, Seed(seed)).unwrap();
            let mut all: Vec<usize> = f.all_members().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes = f.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for (fold, members) in f.all_members().iter().enumerate() {
                for &i in members {
                    prop_assert_eq!(f.fold_of(i), fold);
                }
            }
            prop_assert_eq!(split_folds(n, k, Seed(seed)).unwrap(), f);
        }

        #[test]
        fn clipping_is_idempotent(ys in proptest::collection::vec(-10.0f64..10.0, 2..30), b in 0.1f64..5.0) {
            let n = ys.len();
            let data = toy(vec![0.0; n], ys);
            let bounds = Bounds::new(b, 2.0).unwrap();
            let once = clip_outcomes(&data, &bounds);
            prop_assert!(once.outcome().iter().all(|y| y.abs() <= b));
            prop_assert_eq!(clip_outcomes(&once, &bounds), once);
        }
    }
}
