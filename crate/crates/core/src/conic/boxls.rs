use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const BOXLS_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct BoxLsSolution {
    pub b: DVector<f64>,
    /// `‖Ab - p‖₂` at the returned point.
    pub residual: f64,
    /// Scaled projected-gradient norm at the returned point.
    pub kkt: f64,
    pub iterations: usize,
}

fn project(b: &mut DVector<f64>, hi: f64) {
    for v in b.iter_mut() {
        *v = v.clamp(0.0, hi);
    }
}

fn kkt_residual(b: &DVector<f64>, g: &DVector<f64>, hi: f64) -> f64 {
    let mut r: f64 = 0.0;
    for i in 0..b.len() {
        let step = (b[i] - g[i]).clamp(0.0, hi);
        r = r.max((b[i] - step).abs());
    }
    r
}

/// Minimize `‖Ab - p‖₂` over `0 ≤ b ≤ hi` (componentwise; `hi` may be `∞`).
///
/// Projected gradient with exact line search, alternated with a least-squares
/// solve on the currently free coordinates.
pub fn box_constrained_least_squares(
    a: &DMatrix<f64>,
    p: &DVector<f64>,
    hi: f64,
) -> Result<BoxLsSolution> {
    let m = a.ncols();
    if a.nrows() != p.len() {
        return Err(Error::DimensionMismatch("A and p".into()));
    }
    if m == 0 {
        return Ok(BoxLsSolution { b: DVector::zeros(0), residual: p.norm(), kkt: 0.0, iterations: 0 });
    }
    let scale = 1.0 + (a.transpose() * p).amax() + a.norm_squared();
    let mut b = DVector::zeros(m);
    let max_iter = 50 * m + 500;
    for it in 0..max_iter {
        let r = a * &b - p;
        let g = a.transpose() * &r;
        let kkt = kkt_residual(&b, &g, hi) / scale;
        if kkt <= BOXLS_TOL {
            let residual = (a * &b - p).norm();
            return Ok(BoxLsSolution { b, residual, kkt, iterations: it });
        }
        // projected gradient step, exact along the projected direction
        let lip = a.norm_squared().max(1e-300);
        let mut trial = &b - &g / lip;
        project(&mut trial, hi);
        let dir = &trial - &b;
        let ad = a * &dir;
        let den = ad.norm_squared();
        if den > 0.0 {
            let alpha = (-(g.dot(&dir)) / den).clamp(0.0, 1.0);
            b += &dir * alpha;
            project(&mut b, hi);
        }
        // subspace minimization on coordinates strictly inside the box
        let free: Vec<usize> = (0..m).filter(|&i| b[i] > 0.0 && b[i] < hi).collect();
        if free.is_empty() {
            continue;
        }
        let af = a.select_columns(free.iter());
        let r = a * &b - p;
        let svd = af.svd(true, true);
        let delta = match svd.solve(&(-&r), 1e-13 * svd.singular_values.max().max(1e-300)) {
            Ok(dl) => dl,
            Err(_) => continue,
        };
        let mut step: f64 = 1.0;
        for (k, &i) in free.iter().enumerate() {
            if delta[k] < 0.0 {
                step = step.min(-b[i] / delta[k]);
            } else if delta[k] > 0.0 && hi.is_finite() {
                step = step.min((hi - b[i]) / delta[k]);
            }
        }
        for (k, &i) in free.iter().enumerate() {
            b[i] += step * delta[k];
        }
        project(&mut b, hi);
        for (k, &i) in free.iter().enumerate() {
            if step < 1.0 {
                if delta[k] < 0.0 && (b[i] + 0.0) <= 1e-15 * (1.0 + delta[k].abs()) {
                    b[i] = 0.0;
                } else if hi.is_finite() && delta[k] > 0.0 && hi - b[i] <= 1e-15 * (1.0 + hi) {
                    b[i] = hi;
                }
            }
        }
    }
    Err(Error::NonConvergence(format!("box least squares after {max_iter} iterations")))
}

/// Nonnegative least squares by the Lawson-Hanson active-set method.
pub fn nnls(a: &DMatrix<f64>, p: &DVector<f64>) -> Result<BoxLsSolution> {
    let m = a.ncols();
    if a.nrows() != p.len() {
        return Err(Error::DimensionMismatch("A and p".into()));
    }
    let scale = 1.0 + (a.transpose() * p).amax() + a.norm_squared();
    let mut x = DVector::zeros(m);
    let mut passive = vec![false; m];
    let solve_on = |set: &[usize]| -> Option<DVector<f64>> {
        let ap = a.select_columns(set.iter());
        let svd = ap.svd(true, true);
        let cut = 1e-13 * svd.singular_values.max().max(1e-300);
        svd.solve(p, cut).ok()
    };
    let mut iterations = 0;
    for _ in 0..(3 * m + 10) {
        let w = a.transpose() * (p - a * &x);
        let cand = (0..m).filter(|&j| !passive[j]).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let t = match cand {
            Some(t) if w[t] > BOXLS_TOL * scale => t,
            _ => break,
        };
        passive[t] = true;
        for _ in 0..(3 * m + 10) {
            iterations += 1;
            let set: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
            let sp = match solve_on(&set) {
                Some(v) => v,
                None => break,
            };
            if sp.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in set.iter().enumerate() {
                    x[j] = sp[k];
                }
                break;
            }
            let mut alpha: f64 = 1.0;
            for (k, &j) in set.iter().enumerate() {
                if sp[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - sp[k]));
                }
            }
            for (k, &j) in set.iter().enumerate() {
                x[j] += alpha * (sp[k] - x[j]);
                if x[j] <= 1e-15 * (1.0 + sp[k].abs()) {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    let g = a.transpose() * (a * &x - p);
    let kkt = kkt_residual(&x, &g, f64::INFINITY) / scale;
    let residual = (a * &x - p).norm();
    Ok(BoxLsSolution { b: x, residual, kkt, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corner_and_interior() {
        let a = DMatrix::identity(2, 2);
        let s = box_constrained_least_squares(&a, &DVector::from_vec(vec![2.0, 2.0]), 1.0).unwrap();
        assert!((s.b - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-12);
        assert!((s.residual - 2f64.sqrt()).abs() < 1e-12);
        let s = box_constrained_least_squares(&a, &DVector::from_vec(vec![0.3, 0.7]), 1.0).unwrap();
        assert!((s.b - DVector::from_vec(vec![0.3, 0.7])).norm() < 1e-12);
        assert!(s.residual < 1e-12);
    }

    fn grid_distance(a: &DMatrix<f64>, p: &DVector<f64>, steps: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=steps {
                let b = DVector::from_vec(vec![i as f64 / steps as f64, j as f64 / steps as f64]);
                best = best.min((a * b - p).norm());
            }
        }
        best
    }

    #[test]
    fn sheared_box_against_grid() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let p = DVector::from_vec(vec![3.0, 0.0]);
        let s = box_constrained_least_squares(&a, &p, 1.0).unwrap();
        assert!((s.residual - grid_distance(&a, &p, 50)).abs() < 1e-3);
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let p = &a * DVector::from_vec(vec![2.0, 5.0]);
        let s = nnls(&a, &p).unwrap();
        assert!((s.b - DVector::from_vec(vec![2.0, 5.0])).norm() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_2x3_box_beats_grid(v in proptest::collection::vec(-2.0f64..2.0, 8)) {
            let a = DMatrix::from_row_slice(2, 3, &v[..6]);
            let p = DVector::from_vec(vec![v[6] * 2.0, v[7] * 2.0]);
            let s = box_constrained_least_squares(&a, &p, 1.0).unwrap();
            // never worse than any grid point, and KKT holds
            let steps = 20;
            let mut best = f64::INFINITY;
            for i in 0..=steps { for j in 0..=steps { for k in 0..=steps {
                let b = DVector::from_vec(vec![i as f64, j as f64, k as f64]) / steps as f64;
                best = best.min((&a * b - &p).norm());
            }}}
            prop_assert!(s.residual <= best + 1e-9);
            prop_assert!(s.b.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
