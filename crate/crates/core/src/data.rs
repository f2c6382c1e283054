//! Training data container and CSV ingestion.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative singular-value cut used for the effective rank of raw data.
pub const RANK_RTOL: f64 = 1e-10;

/// `n × d` training samples with labels.
///
/// When augmented, the standard basis `e_1..e_d` is appended after the `n`
/// samples; those rows take part in feature generation only. Labels always
/// have one row per original sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    n_samples: usize,
    augmented: bool,
    effective_rank: usize,
}

impl DataMatrix {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Data("data needs n >= 1 and d >= 1".into()));
        }
        if y.nrows() != x.nrows() {
            return Err(Error::dim(format!(
                "{} samples but {} label rows",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entry in data".into()));
        }
        let effective_rank = effective_rank(&x, RANK_RTOL);
        Ok(Self {
            n_samples: x.nrows(),
            x,
            y,
            augmented: false,
            effective_rank,
        })
    }

    /// Scalar labels.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[f64]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("ragged sample rows"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let y = DMatrix::from_column_slice(labels.len(), 1, labels);
        Self::new(x, y)
    }

    pub fn n(&self) -> usize {
        self.n_samples
    }

    /// Number of generator rows (`ñ = n + d` when augmented).
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    /// All rows including augmentation rows.
    pub fn x_all(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// The original `n × d` samples.
    pub fn samples(&self) -> DMatrix<f64> {
        self.x.rows(0, self.n_samples).into_owned()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn sample_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_samples).map(|i| self.row(i)).collect()
    }

    /// Appends `e_1..e_d` as generator rows.
    pub fn augment(&self) -> Result<Self> {
        if self.augmented {
            return Err(Error::State("data matrix is already augmented".into()));
        }
        let (n, d) = (self.n_rows(), self.d());
        let mut x = DMatrix::zeros(n + d, d);
        x.rows_mut(0, n).copy_from(&self.x);
        for k in 0..d {
            x[(n + k, k)] = 1.0;
        }
        Ok(Self {
            x,
            y: self.y.clone(),
            n_samples: self.n_samples,
            augmented: true,
            effective_rank: self.effective_rank,
        })
    }

    /// Replaces the samples, keeping labels (used after rank reduction).
    pub fn with_samples(&self, x: DMatrix<f64>) -> Result<Self> {
        Self::new(x, self.y.clone())
    }

    /// Reads a CSV file with a header row; the last `label_cols` columns are
    /// labels.
    pub fn read_csv(path: impl AsRef<Path>, label_cols: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(file, label_cols)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn read_csv_from(reader: impl std::io::Read, label_cols: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::Data(format!("row {}: cannot parse {s:?}", line + 1)))
                })
                .collect::<Result<_>>()?;
            if *width.get_or_insert(vals.len()) != vals.len() {
                return Err(Error::Data(format!("row {} has a different width", line + 1)));
            }
            if vals.len() <= label_cols {
                return Err(Error::Data("no feature columns left after labels".into()));
            }
            let split = vals.len() - label_cols;
            feats.push(vals[..split].to_vec());
            labels.push(vals[split..].to_vec());
        }
        if feats.is_empty() {
            return Err(Error::Data("no data rows".into()));
        }
        let (n, d, c) = (feats.len(), feats[0].len(), label_cols);
        let x = DMatrix::from_fn(n, d, |i, j| feats[i][j]);
        let y = DMatrix::from_fn(n, c, |i, j| labels[i][j]);
        Self::new(x, y)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let mut header: Vec<String> = (0..self.d()).map(|j| format!("x{}", j + 1)).collect();
        header.extend((0..self.outputs()).map(|j| format!("y{}", j + 1)));
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for i in 0..self.n_samples {
            let rec: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of singular values above `rtol · σ_max`.
pub fn effective_rank(x: &DMatrix<f64>, rtol: f64) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    let s = x.singular_values();
    let max = s.iter().fold(0.0f64, |m, v| m.max(*v));
    if max == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rtol * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augment_appends_basis() {
        let d = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]], &[0.0, 1.0]).unwrap();
        let a = d.augment().unwrap();
        assert_eq!(
            a.rows(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![1.0, 0.0], vec![0.0, 1.0]]
        );
        assert_eq!(a.n(), 2);
        assert_eq!(a.n_rows(), 4);
        assert!(matches!(a.augment(), Err(Error::State(_))));

        let one = DataMatrix::from_rows(&[vec![5.0]], &[1.0]).unwrap();
        assert_eq!(one.augment().unwrap().rows(), vec![vec![5.0], vec![1.0]]);
    }

    #[test]
    fn csv_labels_split() {
        let src = "a,b,y1,y2\n1,2,3,4\n5,6,7,8\n";
        let d = DataMatrix::read_csv_from(src.as_bytes(), 2).unwrap();
        assert_eq!(d.d(), 2);
        assert_eq!(d.outputs(), 2);
        assert_eq!(d.y()[(1, 0)], 7.0);
        assert!(DataMatrix::read_csv_from("a,y\n1,x\n".as_bytes(), 1).is_err());
        assert!(DataMatrix::read_csv_from("a,y\n1\n".as_bytes(), 1).is_err());
    }

    #[test]
    fn rank_of_collinear_rows() {
        let d = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[0.0, 0.0]).unwrap();
        assert_eq!(d.effective_rank(), 1);
    }
}
