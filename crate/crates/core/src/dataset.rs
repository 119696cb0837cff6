//! Ingestion, validation, normalization and fold assignment for IV samples.
//!
//! A sample is stored as an [`IvDataset`]: an `n x d` feature matrix plus the
//! treatment, instrument and outcome vectors. Features are expected to be
//! normalized into `[0, 1]` with [`quantile_normalize`] before estimation,
//! although nothing downstream depends on that range.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest sample accepted by [`IvDataset::new`].
pub const MIN_ROWS: usize = 4;

/// Observed sample `(X, T, Z, Y)` with feature labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    pub x: DMatrix<f64>,
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub column_names: Vec<String>,
    /// Whether `T` and `Z` were validated as 0/1 indicators.
    pub binary: bool,
}

impl IvDataset {
    pub fn new(
        x: DMatrix<f64>,
        t: Vec<f64>,
        z: Vec<f64>,
        y: Vec<f64>,
        column_names: Vec<String>,
        binary: bool,
    ) -> Result<Self> {
        let n = x.nrows();
        if t.len() != n || z.len() != n || y.len() != n {
            return Err(Error::Validation(format!(
                "row counts disagree: X has {n}, T has {}, Z has {}, Y has {}",
                t.len(),
                z.len(),
                y.len()
            )));
        }
        if n < MIN_ROWS {
            return Err(Error::Validation(format!(
                "need at least {MIN_ROWS} rows, got {n}"
            )));
        }
        if column_names.len() != x.ncols() {
            return Err(Error::Validation(format!(
                "{} column names for {} feature columns",
                column_names.len(),
                x.ncols()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        for (name, col) in [("treatment", &t), ("instrument", &z), ("outcome", &y)] {
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite {name} at row {i}")));
            }
        }
        if binary {
            for (name, col) in [("treatment", &t), ("instrument", &z)] {
                if let Some(i) = col.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Validation(format!(
                        "{name} flagged binary but row {i} holds {}",
                        col[i]
                    )));
                }
            }
        }
        Ok(Self {
            x,
            t,
            z,
            y,
            column_names,
            binary,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// True when every instrument value is exactly 0 or 1.
    pub fn instrument_is_binary(&self) -> bool {
        self.z.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn treatment_is_binary(&self) -> bool {
        self.t.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Copy of the rows listed in `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> IvDataset {
        IvDataset {
            x: select_rows(&self.x, idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            column_names: self.column_names.clone(),
            binary: self.binary,
        }
    }

    /// Write as CSV with columns `y,t,z,<features>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "t".to_string(), "z".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.push(self.y[i].to_string());
            record.push(self.t[i].to_string());
            record.push(self.z[i].to_string());
            record.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub(crate) fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |r, c| x[(idx[r], c)])
}

/// Categorical feature column, one-hot encoded with `baseline` dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub baseline: String,
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub outcome: String,
    pub treatment: String,
    pub instrument: String,
    /// Feature columns in order; empty means every remaining column.
    #[serde(default)]
    pub features: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub binary: bool,
    /// Quantile count for feature normalization; `None` keeps raw values.
    #[serde(default)]
    pub quantiles: Option<usize>,
}

impl Schema {
    pub fn new(outcome: &str, treatment: &str, instrument: &str) -> Self {
        Self {
            outcome: outcome.into(),
            treatment: treatment.into(),
            instrument: instrument.into(),
            features: Vec::new(),
            categorical: Vec::new(),
            binary: false,
            quantiles: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<IvDataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::Schema(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_csv(std::io::BufReader::new(file), schema)
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

/// Parse a CSV stream into a validated dataset. Row numbers in errors are
/// 1-based data rows (the header is row 0).
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<IvDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let yi = find(&schema.outcome)?;
    let ti = find(&schema.treatment)?;
    let zi = find(&schema.instrument)?;

    let feature_names: Vec<String> = if schema.features.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != yi && *i != ti && *i != zi)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        schema.features.clone()
    };
    if feature_names.is_empty() {
        return Err(Error::Schema("at least one feature column is required".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;
    for cat in &schema.categorical {
        if !feature_names.contains(&cat.name) {
            return Err(Error::Schema(format!(
                "categorical column `{}` is not a feature",
                cat.name
            )));
        }
    }

    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    let n = records.len();
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for (r, rec) in records.iter().enumerate() {
        y.push(parse_cell(&rec[yi], r + 1, &schema.outcome)?);
        t.push(parse_cell(&rec[ti], r + 1, &schema.treatment)?);
        z.push(parse_cell(&rec[zi], r + 1, &schema.instrument)?);
    }

    // Expand features, one-hot encoding categoricals in sorted level order.
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    for (name, &ci) in feature_names.iter().zip(&feature_idx) {
        if let Some(cat) = schema.categorical.iter().find(|c| &c.name == name) {
            let levels: BTreeSet<&str> = records.iter().map(|rec| rec[ci].trim()).collect();
            if !levels.contains(cat.baseline.as_str()) {
                return Err(Error::Schema(format!(
                    "baseline level `{}` never occurs in column `{name}`",
                    cat.baseline
                )));
            }
            for level in levels.iter().filter(|l| **l != cat.baseline) {
                columns.push(
                    records
                        .iter()
                        .map(|rec| f64::from(u8::from(rec[ci].trim() == *level)))
                        .collect(),
                );
                names.push(format!("{name}={level}"));
            }
        } else {
            let col = records
                .iter()
                .enumerate()
                .map(|(r, rec)| parse_cell(&rec[ci], r + 1, name))
                .collect::<Result<Vec<_>>>()?;
            columns.push(col);
            names.push(name.clone());
        }
    }
    let mut x = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]);
    if let Some(q) = schema.quantiles {
        x = quantile_normalize(&x, q)?;
    }
    IvDataset::new(x, t, z, y, names, schema.binary)
}

/// Map one column into `[0, 1]` by its empirical rank.
///
/// A value `v` maps to `#{x < v} / #{x < max}`, rounded to the nearest of `q`
/// evenly spaced levels. Ties share a level, a 0/1 column stays 0/1, and a
/// constant column maps to 0.
pub fn normalize_column(values: &[f64], q: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[sorted.len() - 1];
    let below_max = sorted.partition_point(|&v| v < max);
    if below_max == 0 {
        return vec![0.0; values.len()];
    }
    let levels = (q - 1) as f64;
    values
        .iter()
        .map(|&v| {
            let rank = sorted.partition_point(|&s| s < v) as f64 / below_max as f64;
            (rank * levels).round() / levels
        })
        .collect()
}

/// Column-wise empirical quantile normalization into `[0, 1]` with `q` levels.
pub fn quantile_normalize(x: &DMatrix<f64>, q: usize) -> Result<DMatrix<f64>> {
    if q < 2 {
        return Err(Error::Argument(format!("quantile count must be >= 2, got {q}")));
    }
    if x.nrows() == 0 {
        return Ok(x.clone());
    }
    let mut out = DMatrix::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let col: Vec<f64> = x.column(c).iter().copied().collect();
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("column {c} has non-finite values")));
        }
        out.set_column(c, &nalgebra::DVector::from_vec(normalize_column(&col, q)));
    }
    Ok(out)
}

/// Assignment of rows to `k` cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_assignment: Vec<usize>,
    pub seed: u64,
    pub k: usize,
}

impl SplitPlan {
    pub fn n(&self) -> usize {
        self.fold_assignment.len()
    }

    /// Rows in fold `fold`, ascending.
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_assignment[i] == fold).collect()
    }

    /// Rows outside fold `fold`, ascending.
    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Balanced random partition of `0..n` into `k` folds, a pure function of
/// `(n, k, seed)`.
pub fn make_splits(n: usize, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Argument(format!(
            "cannot split {n} rows into {k} nonempty folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_assignment = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold_assignment[row] = pos % k;
    }
    Ok(SplitPlan {
        fold_assignment,
        seed,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new("y", "t", "z")
    }

    #[test]
    fn minimal_csv() {
        let csv = "y,t,z,x0\n1,0,1,0.5\n2,1,0,0.1\n3,1,1,0.2\n4,0,0,0.9\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.d(), 1);
        assert_eq!(ds.column_names, vec!["x0"]);
        assert_eq!(ds.y, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn nan_outcome_names_row() {
        let csv = "y,t,z,x0\n1,0,1,0.5\n2,1,0,0.1\nNaN,1,1,0.2\n4,0,0,0.9\n";
        match read_csv(csv.as_bytes(), &schema()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_instrument_is_schema_error() {
        let csv = "y,t,x0\n1,0,0.5\n2,1,0.1\n3,1,0.2\n4,0,0.9\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn binary_flag_is_enforced() {
        let csv = "y,t,z,x0\n1,0,1,0.5\n2,2,0,0.1\n3,1,1,0.2\n4,0,0,0.9\n";
        let mut s = schema();
        s.binary = true;
        assert!(matches!(read_csv(csv.as_bytes(), &s), Err(Error::Validation(_))));
    }

    #[test]
    fn one_hot_drops_baseline() {
        let csv = "y,t,z,os\n1,0,1,Windows\n2,1,0,OSX\n3,1,1,Linux\n4,0,0,Windows\n";
        let mut s = schema();
        s.categorical.push(CategoricalColumn {
            name: "os".into(),
            baseline: "Windows".into(),
        });
        let ds = read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(ds.column_names, vec!["os=Linux", "os=OSX"]);
        assert_eq!(ds.x.column(0).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(ds.x.column(1).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn text_in_numeric_feature() {
        let csv = "y,t,z,x0\n1,0,1,0.5\n2,1,0,abc\n3,1,1,0.2\n4,0,0,0.9\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn quantile_small_examples() {
        assert_eq!(
            normalize_column(&[1.0, 2.0, 3.0, 4.0], 4),
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
        );
        assert_eq!(normalize_column(&[5.0, 5.0, 5.0], 1000), vec![0.0; 3]);
        assert_eq!(normalize_column(&[0.0, 1.0, 1.0, 0.0], 1000), vec![0.0, 1.0, 1.0, 0.0]);
        assert!(quantile_normalize(&DMatrix::zeros(3, 1), 1).is_err());
    }

    #[test]
    fn split_examples() {
        let p = make_splits(4, 2, 7).unwrap();
        assert_eq!(p.fold_sizes(), vec![2, 2]);
        let p = make_splits(5, 2, 7).unwrap();
        assert_eq!(p.fold_sizes(), vec![3, 2]);
        assert_eq!(make_splits(100, 3, 11).unwrap(), make_splits(100, 3, 11).unwrap());
        assert!(matches!(make_splits(1, 2, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 1e-300, 1.0 / 3.0, -2.5, 7.0, 0.0, 1e17, 3.3]);
        let ds = IvDataset::new(
            x,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![std::f64::consts::PI, -0.0, 1e-12, 123456.789],
            vec!["a".into(), "b".into()],
            true,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let mut s = schema();
        s.binary = true;
        let back = read_csv(buf.as_slice(), &s).unwrap();
        assert_eq!(back, ds);
    }

    proptest! {
        #[test]
        fn splits_partition_rows(n in 2usize..300, k in 2usize..7, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = make_splits(n, k, seed).unwrap();
            let sizes = p.fold_sizes();
            prop_assert!(sizes.iter().all(|&s| s > 0));
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|f| p.test_rows(f)).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn quantile_monotone_and_stable(values in prop::collection::vec(-1e6f64..1e6, 2..200), q in 2usize..1500) {
            let out = normalize_column(&values, q);
            for i in 0..values.len() {
                prop_assert!((0.0..=1.0).contains(&out[i]));
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(out[i] <= out[j]);
                    }
                }
            }
            let twice = normalize_column(&out, q);
            let step = 1.0 / (q - 1) as f64;
            for (a, b) in out.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= step + 1e-12);
            }
        }
    }
}
