use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// The body lies in `{x : normalᵀx ≤ offset}`.
#[derive(Clone, Debug)]
pub struct Cut {
    pub normal: DVector<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug)]
pub enum OracleAnswer {
    Inside,
    Cut(Cut),
}

#[derive(Clone, Debug)]
pub struct EllipsoidConfig {
    pub center: DVector<f64>,
    pub radius: f64,
    pub eps: f64,
    pub max_iter: usize,
}

impl EllipsoidConfig {
    /// Ball of radius `radius` about `center`; the iteration budget is a
    /// multiple of the classical `2n(n+1) ln(R/ε)`.
    pub fn new(center: DVector<f64>, radius: f64, eps: f64) -> Self {
        let n = center.len().max(1) as f64;
        let logr = ((radius * n.sqrt() / eps).ln()).max(1.0);
        let max_iter = (6.0 * n * (n + 1.0) * logr).ceil() as usize + 200;
        EllipsoidConfig { center, radius, eps, max_iter }
    }
}

#[derive(Clone, Debug)]
pub struct EllipsoidResult {
    pub x: DVector<f64>,
    pub value: f64,
    /// Certified upper bound on the supremum over the body.
    pub upper_bound: f64,
    pub iterations: usize,
    /// `log det L` (with `P = LLᵀ`) after each cut: the log-volume up to a constant.
    pub log_volume: Vec<f64>,
}

fn coordinate_cut(x: &DVector<f64>, nonneg: bool, upper: f64) -> Option<Cut> {
    let n = x.len();
    let mut worst = 0.0;
    let mut cut = None;
    for i in 0..n {
        if nonneg && -x[i] > worst {
            worst = -x[i];
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            cut = Some(Cut { normal: a, offset: 0.0 });
        }
        if upper.is_finite() && x[i] - upper > worst {
            worst = x[i] - upper;
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            cut = Some(Cut { normal: a, offset: upper });
        }
    }
    cut
}

/// Maximize a concave objective (value and gradient supplied by `objective`)
/// over a convex body described by a separation oracle, intersected with
/// `x ≥ 0` (when `nonneg`) and `x ≤ upper`.
pub fn ellipsoid_maximize<F, O>(
    mut objective: F,
    mut oracle: O,
    nonneg: bool,
    upper: f64,
    cfg: &EllipsoidConfig,
) -> Result<EllipsoidResult>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    O: FnMut(&DVector<f64>) -> Result<OracleAnswer>,
{
    let n = cfg.center.len();
    let nf = n as f64;
    let mut x = cfg.center.clone();
    // E = {x + Lz : ‖z‖ ≤ 1}; keeping the factor avoids losing thin directions
    let mut l = DMatrix::identity(n, n) * cfg.radius;
    let mut logvol = nf * cfg.radius.ln();
    let mut trace = vec![logvol];
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut min_ub = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let (fx, gx) = objective(&x);
        let ub = fx + l.tr_mul(&gx).norm();
        min_ub = min_ub.min(ub);
        if let Some((bx, bv)) = &best {
            if min_ub - bv <= cfg.eps {
                return Ok(EllipsoidResult {
                    x: bx.clone(),
                    value: *bv,
                    upper_bound: min_ub.max(*bv),
                    iterations: it,
                    log_volume: trace,
                });
            }
        }
        let cut = match coordinate_cut(&x, nonneg, upper) {
            Some(c) => c,
            None => match oracle(&x)? {
                OracleAnswer::Cut(c) => c,
                OracleAnswer::Inside => {
                    if best.as_ref().is_none_or(|(_, bv)| fx > *bv) {
                        best = Some((x.clone(), fx));
                    }
                    let bv = best.as_ref().unwrap().1;
                    if gx.norm() == 0.0 {
                        return Ok(EllipsoidResult {
                            x: x.clone(),
                            value: fx,
                            upper_bound: fx,
                            iterations: it,
                            log_volume: trace,
                        });
                    }
                    Cut { normal: -&gx, offset: -gx.dot(&x) - (bv - fx) }
                }
            },
        };
        let a = &cut.normal;
        let lta = l.tr_mul(a);
        let sq = lta.norm();
        if sq <= 0.0 || !sq.is_finite() {
            break;
        }
        let alpha = ((a.dot(&x) - cut.offset) / sq).max(0.0);
        if alpha >= 1.0 {
            break;
        }
        if n == 1 {
            let h = sq / a[0].abs();
            let (mut lo, mut hi) = (x[0] - h, x[0] + h);
            let bound = cut.offset / a[0];
            if a[0] > 0.0 {
                hi = hi.min(bound);
            } else {
                lo = lo.max(bound);
            }
            x[0] = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            l[(0, 0)] = half;
            logvol = half.ln();
        } else {
            let ghat = &lta / sq;
            let gt = &l * &ghat;
            x -= &gt * ((1.0 + nf * alpha) / (nf + 1.0));
            let sigma = 2.0 * (1.0 + nf * alpha) / ((nf + 1.0) * (1.0 + alpha));
            let delta = nf * nf * (1.0 - alpha * alpha) / (nf * nf - 1.0);
            l.ger(-(1.0 - (1.0 - sigma).sqrt()), &gt, &ghat, 1.0);
            l *= delta.sqrt();
            logvol += 0.5 * (nf * delta.ln() + (1.0 - sigma).ln());
        }
        trace.push(logvol);
    }
    match best {
        Some((bx, bv)) if min_ub - bv <= cfg.eps => Ok(EllipsoidResult {
            x: bx,
            value: bv,
            upper_bound: min_ub.max(bv),
            iterations: cfg.max_iter,
            log_volume: trace,
        }),
        _ => Err(Error::IterationExhausted(cfg.max_iter)),
    }
}
