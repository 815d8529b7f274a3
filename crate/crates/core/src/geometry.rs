//! Zonotopes `{Ab : b ∈ [0,1]^m}` and exact evaluation of the dual constraint
//! as a Hausdorff distance between two of them.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::conic::box_constrained_least_squares;
use crate::dataset::{classify_dataset, ClassTag, Dataset};
use crate::error::{Error, Result};

pub const VERTEX_CAP: usize = 20;

#[derive(Clone, Debug)]
pub struct Zonotope {
    /// d×m, columns are generators.
    pub generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(generators: DMatrix<f64>) -> Self {
        Zonotope { generators }
    }

    /// `Xᵀ diag(λ)` for the given rows and (nonnegative) weights.
    pub fn from_data(x: &DMatrix<f64>, weights: &[f64]) -> Self {
        let mut g = x.transpose();
        for (j, &w) in weights.iter().enumerate() {
            g.column_mut(j).scale_mut(w);
        }
        Zonotope { generators: g }
    }

    pub fn dim(&self) -> usize {
        self.generators.nrows()
    }

    pub fn len(&self) -> usize {
        self.generators.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, b: &[f64]) -> DVector<f64> {
        &self.generators * DVector::from_column_slice(b)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MaximinReport {
    pub forward: f64,
    pub backward: f64,
    /// Maximizing vertex on the side that attains the larger value.
    pub b_star: Vec<bool>,
    /// True when `b_star` indexes the second zonotope.
    pub backward_side: bool,
}

impl MaximinReport {
    pub fn value(&self) -> f64 {
        self.forward.max(self.backward)
    }
}

pub fn project_onto_zonotope(a: &DMatrix<f64>, p: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let s = box_constrained_least_squares(a, p, 1.0)?;
    Ok((s.residual, s.b))
}

fn check_cap(m: usize) -> Result<()> {
    if m > VERTEX_CAP {
        return Err(Error::TooLarge { what: "generators", size: m, cap: VERTEX_CAP });
    }
    Ok(())
}

fn mask_of(bits: u64, m: usize) -> Vec<bool> {
    (0..m).map(|j| bits >> j & 1 == 1).collect()
}

fn dfs(
    cols: &[DVector<f64>],
    tails: &[f64],
    k: usize,
    s: &mut DVector<f64>,
    bits: u64,
    best: &mut (f64, u64),
) {
    let sn = s.norm();
    if sn > best.0 {
        *best = (sn, bits);
    }
    if k == cols.len() || sn + tails[k] <= best.0 {
        return;
    }
    *s += &cols[k];
    dfs(cols, tails, k + 1, s, bits | 1 << k, best);
    *s -= &cols[k];
    dfs(cols, tails, k + 1, s, bits, best);
}

/// `max_{b ∈ {0,1}^m} ‖Ab‖₂` by branch and bound over vertices.
pub fn zonotope_vertex_max(a: &DMatrix<f64>) -> Result<(f64, Vec<bool>)> {
    let m = a.ncols();
    check_cap(m)?;
    if m == 0 {
        return Ok((0.0, vec![]));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| a.column(j).norm().total_cmp(&a.column(i).norm()).then(i.cmp(&j)));
    let cols: Vec<DVector<f64>> = order.iter().map(|&j| a.column(j).into_owned()).collect();
    let mut tails = vec![0.0; m + 1];
    for k in (0..m).rev() {
        tails[k] = tails[k + 1] + cols[k].norm();
    }
    // greedy lower bound
    let mut s = DVector::zeros(a.nrows());
    let mut gbits = 0u64;
    for (k, c) in cols.iter().enumerate() {
        if (&s + c).norm() > s.norm() {
            s += c;
            gbits |= 1 << k;
        }
    }
    let lower = (s.norm(), gbits);
    let depth = m.min(6);
    let results: Vec<(f64, u64)> = (0..1u64 << depth)
        .into_par_iter()
        .map(|prefix| {
            let mut s = DVector::zeros(a.nrows());
            for k in 0..depth {
                if prefix >> k & 1 == 1 {
                    s += &cols[k];
                }
            }
            let mut best = lower;
            dfs(&cols, &tails, depth, &mut s, prefix, &mut best);
            best
        })
        .collect();
    let mut best = lower;
    for r in results {
        if r.0 > best.0 {
            best = r;
        }
    }
    let mut b = vec![false; m];
    for (k, &j) in order.iter().enumerate() {
        b[j] = best.1 >> k & 1 == 1;
    }
    let bf: Vec<f64> = b.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let value = (a * DVector::from_vec(bf)).norm();
    Ok((value, b))
}

/// `max_{b ∈ {0,1}^m} dist(A b, K)`, the one-sided Hausdorff distance.
fn one_sided(a: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<(f64, Vec<bool>)> {
    let m = a.ncols();
    check_cap(m)?;
    if k.ncols() == 0 {
        return zonotope_vertex_max(a);
    }
    let chunk = 64u64;
    let total = 1u64 << m;
    let blocks: Vec<Result<(f64, u64)>> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|blk| {
            let mut best = (-1.0f64, 0u64);
            for bits in blk * chunk..((blk + 1) * chunk).min(total) {
                let mut p = DVector::zeros(a.nrows());
                for j in 0..m {
                    if bits >> j & 1 == 1 {
                        p += a.column(j);
                    }
                }
                if p.norm() <= best.0 {
                    continue;
                }
                let (dist, _) = project_onto_zonotope(k, &p)?;
                if dist > best.0 {
                    best = (dist, bits);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (0.0f64, 0u64);
    for b in blocks {
        let b = b?;
        if b.0 > best.0 {
            best = b;
        }
    }
    Ok((best.0, mask_of(best.1, m)))
}

pub fn hausdorff_distance(kp: &Zonotope, km: &Zonotope) -> Result<(f64, MaximinReport)> {
    if kp.dim() != km.dim() {
        return Err(Error::DimensionMismatch("zonotope dimensions".into()));
    }
    let (forward, bf) = one_sided(&kp.generators, &km.generators)?;
    let (backward, bb) = one_sided(&km.generators, &kp.generators)?;
    let report = if backward > forward {
        MaximinReport { forward, backward, b_star: bb, backward_side: true }
    } else {
        MaximinReport { forward, backward, b_star: bf, backward_side: false }
    };
    Ok((report.value(), report))
}

pub(crate) fn check_signs(ds: &Dataset, lambda: &[f64]) -> Result<()> {
    if lambda.len() != ds.n() {
        return Err(Error::DimensionMismatch("λ length".into()));
    }
    for i in 0..ds.n() {
        if ds.y[i] * lambda[i] < -1e-10 {
            return Err(Error::SignViolation(i + 1));
        }
    }
    Ok(())
}

/// The two zonotopes `K₊ = X₊ᵀdiag(λ₊)[0,1]^{n₊}` and `K₋ = X₋ᵀdiag(λ₋)[0,1]^{n₋}`.
pub fn dual_zonotopes(ds: &Dataset, lambda: &[f64]) -> (Zonotope, Zonotope) {
    let (lp, lm) = ds.split_dual(lambda);
    let lp: Vec<f64> = lp.iter().map(|v| v.max(0.0)).collect();
    let lm: Vec<f64> = lm.iter().map(|v| v.max(0.0)).collect();
    (Zonotope::from_data(&ds.x_pos(), &lp), Zonotope::from_data(&ds.x_neg(), &lm))
}

/// `max_{‖u‖≤1} |λᵀ(Xu)₊|` evaluated as `H(K₊, K₋)`.
pub fn dual_constraint_maximin(ds: &Dataset, lambda: &[f64]) -> Result<MaximinReport> {
    check_signs(ds, lambda)?;
    let (kp, km) = dual_zonotopes(ds, lambda);
    Ok(hausdorff_distance(&kp, &km)?.1)
}

pub fn ortho_closed_form(ds: &Dataset, lambda: &[f64]) -> Result<(f64, f64)> {
    if classify_dataset(ds, 0.0).tag != ClassTag::OrthogonalSeparable {
        return Err(Error::WrongRegime("closed form needs orthogonal-separable data".into()));
    }
    check_signs(ds, lambda)?;
    let (lp, lm) = ds.split_dual(lambda);
    let a = ds.x_pos().tr_mul(&DVector::from_vec(lp)).norm();
    let b = ds.x_neg().tr_mul(&DVector::from_vec(lm)).norm();
    Ok((a, b))
}
