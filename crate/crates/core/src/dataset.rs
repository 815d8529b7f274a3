//! Labelled datasets, file I/O, synthetic generation and regime classification.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassTag {
    OrthogonalSeparable,
    NegativeCorrelation,
    General,
}

impl ClassTag {
    fn rank(self) -> u8 {
        match self {
            ClassTag::OrthogonalSeparable => 0,
            ClassTag::NegativeCorrelation => 1,
            ClassTag::General => 2,
        }
    }

    /// True when `self` is at least as strict as `other`.
    pub fn implies(self, other: ClassTag) -> bool {
        self.rank() <= other.rank()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetClass {
    pub tag: ClassTag,
    /// 1-based sample indices of a pair violating the next-stricter class.
    pub witness: Option<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn from_path(p: &Path) -> Format {
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    n: usize,
    d: usize,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

fn parse_label(row: usize, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::BadLabel { row, value: s.to_string() })?;
    if v == 1.0 || v == -1.0 {
        Ok(v)
    } else {
        Err(Error::BadLabel { row, value: s.to_string() })
    }
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        for (i, &v) in y.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(Error::BadLabel { row: i + 1, value: v.to_string() });
            }
        }
        for i in 0..x.nrows() {
            if x.row(i).iter().all(|&v| v == 0.0) {
                return Err(Error::ZeroSample(i + 1));
            }
        }
        Ok(Dataset { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::MalformedRow { row: i + 1, expected: d, found: r.len() });
            }
        }
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Dataset::new(x, y.to_vec())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn pos_idx(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.y[i] > 0.0).collect()
    }

    pub fn neg_idx(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.y[i] < 0.0).collect()
    }

    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.x.select_rows(idx.iter())
    }

    pub fn x_pos(&self) -> DMatrix<f64> {
        self.rows(&self.pos_idx())
    }

    pub fn x_neg(&self) -> DMatrix<f64> {
        self.rows(&self.neg_idx())
    }

    pub fn y_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.y)
    }

    /// Split a signed dual vector into `(λ₊, λ₋)` with `λ₋ = {-λᵢ : yᵢ = -1}`.
    pub fn split_dual(&self, lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lp = self.pos_idx().iter().map(|&i| lambda[i]).collect();
        let lm = self.neg_idx().iter().map(|&i| -lambda[i]).collect();
        (lp, lm)
    }

    /// Inverse of [`Dataset::split_dual`].
    pub fn join_dual(&self, lp: &[f64], lm: &[f64]) -> Vec<f64> {
        let mut l = vec![0.0; self.n()];
        for (k, &i) in self.pos_idx().iter().enumerate() {
            l[i] = lp[k];
        }
        for (k, &i) in self.neg_idx().iter().enumerate() {
            l[i] = -lm[k];
        }
        l
    }

    pub fn from_csv_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(r);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::MalformedRow { row: 0, expected: 2, found: width });
        }
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            if rec.len() != width {
                return Err(Error::MalformedRow { row, expected: width, found: rec.len() });
            }
            let mut xs = Vec::with_capacity(width - 1);
            for f in rec.iter().take(width - 1) {
                xs.push(f.parse::<f64>().map_err(|_| Error::MalformedRow {
                    row,
                    expected: width,
                    found: rec.len(),
                })?);
            }
            y.push(parse_label(row, &rec[width - 1])?);
            rows.push(xs);
        }
        let x = DMatrix::from_fn(rows.len(), width - 1, |i, j| rows[i][j]);
        Dataset::new(x, y)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        for j in 0..self.d() {
            s.push_str(&format!("x{},", j + 1));
        }
        s.push_str("y\n");
        for i in 0..self.n() {
            for j in 0..self.d() {
                s.push_str(&format!("{:?},", self.x[(i, j)]));
            }
            s.push_str(&format!("{}\n", self.y[i] as i64));
        }
        s
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: JsonDataset = serde_json::from_str(s)?;
        if j.x.len() != j.n || j.y.len() != j.n {
            return Err(Error::DimensionMismatch(format!("n = {} disagrees with data", j.n)));
        }
        for (i, r) in j.x.iter().enumerate() {
            if r.len() != j.d {
                return Err(Error::MalformedRow { row: i + 1, expected: j.d, found: r.len() });
            }
        }
        for (i, &v) in j.y.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(Error::BadLabel { row: i + 1, value: v.to_string() });
            }
        }
        let x = DMatrix::from_fn(j.n, j.d, |i, k| j.x[i][k]);
        Dataset::new(x, j.y)
    }

    pub fn to_json_string(&self) -> String {
        let j = JsonDataset {
            n: self.n(),
            d: self.d(),
            x: (0..self.n()).map(|i| self.x.row(i).iter().copied().collect()).collect(),
            y: self.y.clone(),
        };
        serde_json::to_string(&j).expect("dataset serializes")
    }
}

pub fn load_dataset(path: &Path, format: Format) -> Result<Dataset> {
    match format {
        Format::Csv => Dataset::from_csv_reader(std::fs::File::open(path)?),
        Format::Json => Dataset::from_json_str(&std::fs::read_to_string(path)?),
    }
}

pub fn save_dataset(ds: &Dataset, path: &Path, format: Format) -> Result<()> {
    let s = match format {
        Format::Csv => ds.to_csv_string(),
        Format::Json => ds.to_json_string(),
    };
    std::fs::write(path, s)?;
    Ok(())
}

pub fn classify_dataset(ds: &Dataset, tol: f64) -> DatasetClass {
    let n = ds.n();
    let mut same_violation = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let g = ds.x.row(i).dot(&ds.x.row(j));
            if ds.y[i] != ds.y[j] {
                if g > tol {
                    return DatasetClass { tag: ClassTag::General, witness: Some((i + 1, j + 1)) };
                }
            } else if g < -tol && same_violation.is_none() {
                same_violation = Some((i + 1, j + 1));
            }
        }
    }
    match same_violation {
        None => DatasetClass { tag: ClassTag::OrthogonalSeparable, witness: None },
        Some(w) => DatasetClass { tag: ClassTag::NegativeCorrelation, witness: Some(w) },
    }
}

const MAX_REJECTIONS: usize = 10_000;

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Uniform direction at angle at most `half_angle` from `axis` (unit).
fn cone_sample(rng: &mut ChaCha8Rng, axis: &DVector<f64>, half_angle: f64) -> DVector<f64> {
    let d = axis.len();
    let phi = rng.random::<f64>() * half_angle;
    let mut perp = gaussian_vec(rng, d);
    perp -= axis * axis.dot(&perp);
    let pn = perp.norm();
    if pn < 1e-12 {
        return axis.clone();
    }
    axis * phi.cos() + perp * (phi.sin() / pn)
}

pub fn generate_synthetic(kind: ClassTag, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("n and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pos = n.div_ceil(2);
    for _ in 0..MAX_REJECTIONS {
        let mut labels: Vec<f64> = (0..n).map(|i| if i < n_pos { 1.0 } else { -1.0 }).collect();
        labels.shuffle(&mut rng);
        let mut rows = Vec::with_capacity(n);
        match kind {
            ClassTag::OrthogonalSeparable => {
                for &l in &labels {
                    let mut v = gaussian_vec(&mut rng, d).map(|a| a.abs() * l);
                    let nv = v.norm();
                    if nv < 1e-6 {
                        v = DVector::from_element(d, l);
                    }
                    let nv = v.norm();
                    rows.push(v / nv);
                }
            }
            ClassTag::NegativeCorrelation => {
                if d < 2 || n_pos < 2 {
                    return Err(Error::GenerationFailed(
                        "negative correlation without orthogonal separability needs d ≥ 2 and two positive samples".into(),
                    ));
                }
                let theta = 0.42 * PI;
                let theta_m = 0.9 * (0.5 * PI - theta);
                let mut axis = gaussian_vec(&mut rng, d);
                axis /= axis.norm();
                for &l in &labels {
                    let scale = 0.5 + rng.random::<f64>();
                    let v = if l > 0.0 {
                        cone_sample(&mut rng, &axis, theta)
                    } else {
                        cone_sample(&mut rng, &(-&axis), theta_m)
                    };
                    rows.push(v * scale);
                }
            }
            ClassTag::General => {
                labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
                for _ in 0..n {
                    rows.push(gaussian_vec(&mut rng, d));
                }
            }
        }
        if rows.iter().any(|r| r.norm() == 0.0) {
            continue;
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let ds = Dataset::new(x, labels)?;
        if classify_dataset(&ds, 0.0).tag == kind {
            return Ok(ds);
        }
    }
    Err(Error::GenerationFailed(format!("no {kind:?} sample after {MAX_REJECTIONS} draws")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_two_point_line() {
        let ds = Dataset::from_csv_reader("x1,y\n1,1\n-1,-1".as_bytes()).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 1));
        assert_eq!(ds.x_pos()[(0, 0)], 1.0);
        assert_eq!(ds.x_neg()[(0, 0)], -1.0);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            Dataset::from_csv_reader("x1,y\n1,0".as_bytes()),
            Err(Error::BadLabel { .. })
        ));
        assert!(matches!(
            Dataset::from_csv_reader("x1,x2,y\n1,1".as_bytes()),
            Err(Error::MalformedRow { .. })
        ));
        assert!(matches!(
            Dataset::from_csv_reader("x1,x2,y\n0,0,1".as_bytes()),
            Err(Error::ZeroSample(1))
        ));
    }

    #[test]
    fn json_round_trip() {
        let ds = generate_synthetic(ClassTag::General, 7, 3, 4).unwrap();
        let back = Dataset::from_json_str(&ds.to_json_string()).unwrap();
        assert_eq!(ds, back);
        let back = Dataset::from_csv_reader(ds.to_csv_string().as_bytes()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn classify_examples() {
        let ds = Dataset::from_rows(&[vec![1.0], vec![-1.0]], &[1.0, -1.0]).unwrap();
        assert_eq!(classify_dataset(&ds, 0.0).tag, ClassTag::OrthogonalSeparable);
        let ds = Dataset::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.866]], &[1.0, -1.0]).unwrap();
        let c = classify_dataset(&ds, 0.0);
        assert_eq!(c.tag, ClassTag::General);
        assert_eq!(c.witness, Some((1, 2)));
        let ds = Dataset::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![-1.0, 0.2]], &[1.0, 1.0, -1.0])
            .unwrap();
        assert_eq!(classify_dataset(&ds, 0.0).tag, ClassTag::OrthogonalSeparable);
    }

    #[test]
    fn generation_kinds_and_determinism() {
        for kind in [ClassTag::OrthogonalSeparable, ClassTag::NegativeCorrelation, ClassTag::General] {
            let a = generate_synthetic(kind, 8, 3, 7).unwrap();
            let b = generate_synthetic(kind, 8, 3, 7).unwrap();
            assert_eq!(a, b);
            assert_eq!(classify_dataset(&a, 0.0).tag, kind);
        }
        assert_eq!(
            classify_dataset(&generate_synthetic(ClassTag::General, 6, 2, 1).unwrap(), 0.0).tag,
            ClassTag::General
        );
        assert!(matches!(
            generate_synthetic(ClassTag::NegativeCorrelation, 6, 1, 0),
            Err(Error::GenerationFailed(_))
        ));
    }
}
