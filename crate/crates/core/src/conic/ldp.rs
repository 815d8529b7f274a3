use nalgebra::{DMatrix, DVector};

use super::boxls::nnls;
use crate::error::Result;

/// Least-distance programming: the minimum-norm `w` with `Gw ≥ h`, or `None`
/// when the system is infeasible. Reduced to nonnegative least squares on
/// `[Gᵀ; hᵀ]` (Lawson and Hanson).
pub fn least_distance(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let (m, d) = g.shape();
    if m == 0 {
        return Ok(Some(DVector::zeros(d)));
    }
    let mut e = DMatrix::zeros(d + 1, m);
    e.view_mut((0, 0), (d, m)).copy_from(&g.transpose());
    for j in 0..m {
        e[(d, j)] = h[j];
    }
    let mut f = DVector::zeros(d + 1);
    f[d] = 1.0;
    let sol = nnls(&e, &f)?;
    let r = &e * &sol.b - &f;
    if r[d].abs() < 1e-12 || r.norm() < 1e-12 {
        return Ok(None);
    }
    let w = DVector::from_fn(d, |i, _| -r[i] / r[d]);
    // guard against a numerically spurious answer
    let slack = (g * &w - h).min();
    if slack < -1e-7 * (1.0 + h.amax()) {
        return Ok(None);
    }
    Ok(Some(w))
}

/// Find `w` with `xᵢᵀw ≥ η` where `mask[i]` and `xᵢᵀw ≤ -η` elsewhere.
pub fn strict_realization(x: &DMatrix<f64>, mask: &[bool], eta: f64) -> Result<Option<DVector<f64>>> {
    let mut g = x.clone();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            g.row_mut(i).neg_mut();
        }
    }
    let h = DVector::from_element(x.nrows(), eta);
    least_distance(&g, &h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halfplane_projection() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let w = least_distance(&g, &DVector::from_vec(vec![2.0])).unwrap().unwrap();
        assert!((w - DVector::from_vec(vec![1.0, 1.0])).norm() < 1e-10);
    }

    #[test]
    fn detects_infeasible() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert!(least_distance(&g, &DVector::from_vec(vec![1.0, 1.0])).unwrap().is_none());
    }

    #[test]
    fn one_dimensional_masks() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let w = strict_realization(&x, &[true, false], 1e-6).unwrap().unwrap();
        assert!(w[0] > 0.0);
        assert!(strict_realization(&x, &[true, true], 1e-6).unwrap().is_none());
    }
}
