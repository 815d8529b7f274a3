//! Dual solvers for the orthogonal-separable, negative-correlation and general
//! regimes, plus an exact feasibility check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::conic::{
    ellipsoid_maximize, least_distance, solve_min_sum_norms, Cut, EllipsoidConfig, MinSumNormsProblem,
    OracleAnswer,
};
use crate::dataset::{classify_dataset, ClassTag, Dataset};
use crate::error::{Error, Result};
use crate::geometry::{check_signs, dual_constraint_maximin, zonotope_vertex_max};
use crate::loss::LossModel;
use crate::maxcut::{c2_value_and_gradient, sdp_relaxation, q_matrix};

pub const CLASSIFY_TOL: f64 = 1e-12;
pub const SIGN_TOL: f64 = 1e-8;
/// Accuracy of the SDP solves inside the separation oracle.
pub const C2_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Ortho,
    Negcorr,
    Geo,
}

/// The solution of one label block `max Σ g(λ)` s.t. `c₂(λ) ≤ r²`.
#[derive(Clone, Debug, Serialize)]
pub struct BlockDual {
    /// Indices of the block rows in the dataset.
    pub rows: Vec<usize>,
    /// Nonnegative block multipliers.
    pub lambda: Vec<f64>,
    pub radius: f64,
    pub objective: f64,
    /// Certified upper bound on the block optimum of the relaxed problem.
    pub upper_bound: f64,
    /// Certified upper bound on `c₂(λ)` after the final rescale.
    pub c2_upper: f64,
    #[serde(skip)]
    pub z: DMatrix<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DualCertificate {
    pub lambda: Vec<f64>,
    pub objective: f64,
    pub constraint_value: f64,
    pub regime: Regime,
    /// `objective ≥ ρ·D`.
    pub rho: f64,
    /// Upper bound on the optimum of the (relaxed) problem actually solved.
    pub upper_bound: f64,
    pub blocks: Vec<BlockDual>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeoRatio {
    pub c_star: f64,
    pub numerator: f64,
    pub denominator: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityReport {
    pub max_violation: f64,
    pub constraint_value: f64,
    pub bound: f64,
    pub feasible: bool,
}

fn gain_value(loss: &LossModel, lambda: &[f64]) -> f64 {
    loss.total_gain(&lambda.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

/// Exact check of `diag(y)λ ≥ 0` and `max_{‖u‖≤1}|λᵀ(Xu)₊| ≤ bound`.
pub fn check_dual_feasibility(ds: &Dataset, lambda: &[f64], bound: f64) -> Result<FeasibilityReport> {
    if lambda.len() != ds.n() {
        return Err(Error::DimensionMismatch("λ length".into()));
    }
    let max_violation = (0..ds.n()).map(|i| (-ds.y[i] * lambda[i]).max(0.0)).fold(0.0, f64::max);
    let clipped: Vec<f64> = (0..ds.n()).map(|i| if ds.y[i] * lambda[i] < 0.0 { 0.0 } else { lambda[i] }).collect();
    let constraint_value = dual_constraint_maximin(ds, &clipped)?.value();
    let feasible = max_violation <= SIGN_TOL && constraint_value <= bound * (1.0 + 1e-8);
    Ok(FeasibilityReport { max_violation, constraint_value, bound, feasible })
}

/// Separated cone programs `max g(λ₊) + g(λ₋)` s.t. `‖X₊ᵀλ₊‖ ≤ β`, `‖X₋ᵀλ₋‖ ≤ β`.
/// Also returns the primal directions `(u₊, u₋)`.
pub fn solve_dual_ortho_with_primal(
    ds: &Dataset,
    loss: &LossModel,
    tol: f64,
) -> Result<(DualCertificate, Option<DVector<f64>>, Option<DVector<f64>>)> {
    if classify_dataset(ds, CLASSIFY_TOL).tag != ClassTag::OrthogonalSeparable {
        return Err(Error::WrongRegime("data is not orthogonal separable".into()));
    }
    let pos: Vec<bool> = ds.y.iter().map(|&v| v > 0.0).collect();
    let neg: Vec<bool> = pos.iter().map(|&p| !p).collect();
    let mut specs = Vec::new();
    let has_pos = pos.iter().any(|&p| p);
    let has_neg = neg.iter().any(|&p| p);
    if has_pos {
        specs.push((pos, 1.0, false));
    }
    if has_neg {
        specs.push((neg, -1.0, false));
    }
    let prob = MinSumNormsProblem::from_masks(&ds.x, &ds.y, &specs, loss.clone());
    let sol = solve_min_sum_norms(&prob, tol)?;
    let lambda: Vec<f64> = sol.lambda.iter().copied().collect();
    let (lp, lm) = ds.split_dual(&lambda);
    let a = ds.x_pos().tr_mul(&DVector::from_vec(lp)).norm();
    let b = ds.x_neg().tr_mul(&DVector::from_vec(lm)).norm();
    let mut it = sol.u.into_iter();
    let up = if has_pos { it.next() } else { None };
    let um = if has_neg { it.next() } else { None };
    let cert = DualCertificate {
        objective: sol.dual_value,
        lambda,
        constraint_value: a.max(b),
        regime: Regime::Ortho,
        rho: 1.0,
        upper_bound: sol.value,
        blocks: vec![],
    };
    Ok((cert, up, um))
}

pub fn solve_dual_ortho(ds: &Dataset, loss: &LossModel, tol: f64) -> Result<DualCertificate> {
    Ok(solve_dual_ortho_with_primal(ds, loss, tol)?.0)
}

/// `max Σ g(λ)` over `λ ≥ 0`, `λ ≤ upper`, `c₂(X_b, λ) ≤ r²`, by the ellipsoid
/// method with the SDP separation oracle, then rescaled onto the certified
/// side of the constraint.
pub fn solve_block(x: &DMatrix<f64>, rows: Vec<usize>, radius: f64, loss: &LossModel, eps: Option<f64>) -> Result<BlockDual> {
    let m = x.nrows();
    if m == 0 {
        return Ok(BlockDual {
            rows,
            lambda: vec![],
            radius,
            objective: 0.0,
            upper_bound: 0.0,
            c2_upper: 0.0,
            z: DMatrix::identity(1, 1),
            iterations: 0,
        });
    }
    let upper = loss.upper();
    let r2 = radius * radius;
    // c₁(λ) ≥ ‖xᵢ‖²λᵢ², so the body sits inside this box
    let top: Vec<f64> = (0..m).map(|i| (radius / x.row(i).norm()).min(upper)).collect();
    let bound = loss.total_gain(&top);
    let eps = eps.unwrap_or(1e-4 * bound.max(1e-300));
    let center = DVector::from_iterator(m, top.iter().map(|t| 0.5 * t));
    let half_diag = 0.5 * top.iter().map(|t| t * t).sum::<f64>().sqrt();
    let cfg = EllipsoidConfig::new(center, half_diag * 1.001 + 1e-12, eps);

    let mut warm: Option<DMatrix<f64>> = None;
    let objective = |l: &DVector<f64>| {
        let g = DVector::from_fn(m, |i, _| loss.gain_d1(l[i].max(0.0)));
        (loss.total_gain(&l.iter().map(|v| v.max(0.0)).collect::<Vec<_>>()), g)
    };
    let oracle = |l: &DVector<f64>| -> Result<OracleAnswer> {
        for i in 0..m {
            if l[i] > top[i] {
                let mut a = DVector::zeros(m);
                a[i] = 1.0;
                return Ok(OracleAnswer::Cut(Cut { normal: a, offset: top[i] }));
            }
        }
        let ev = c2_value_and_gradient(x, l.as_slice(), C2_TOL, warm.as_ref())?;
        warm = Some(ev.sdp.factor.clone());
        if ev.value <= r2 {
            return Ok(OracleAnswer::Inside);
        }
        // √q is convex and 1-homogeneous, so √q(λ) ≥ ∇√q(λ₀)ᵀλ
        let s = ev.value.sqrt();
        Ok(OracleAnswer::Cut(Cut { normal: ev.gradient / (2.0 * s), offset: radius }))
    };
    let res = ellipsoid_maximize(objective, oracle, true, upper, &cfg)?;
    let mut lambda: Vec<f64> = res.x.iter().map(|v| v.max(0.0)).collect();
    let q = q_matrix(x, &lambda);
    let sdp = sdp_relaxation(&q, C2_TOL)?;
    let mut c2_upper = 0.25 * sdp.upper_bound;
    if c2_upper > r2 {
        let f = radius / c2_upper.sqrt();
        for l in lambda.iter_mut() {
            *l *= f;
        }
        c2_upper = r2;
    }
    Ok(BlockDual {
        rows,
        objective: loss.total_gain(&lambda),
        lambda,
        radius,
        upper_bound: res.upper_bound,
        c2_upper,
        z: sdp.z,
        iterations: res.iterations,
    })
}

fn check_loss(ds: &Dataset, loss: &LossModel) -> Result<()> {
    if ds.n() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if loss.is_penalized() && loss.beta() <= 0.0 {
        return Err(Error::InvalidArgument("β must be positive".into()));
    }
    Ok(())
}

fn assemble(ds: &Dataset, loss: &LossModel, bp: BlockDual, bm: BlockDual, regime: Regime, rho: f64) -> DualCertificate {
    let mut lambda = vec![0.0; ds.n()];
    for (t, &i) in bp.rows.iter().enumerate() {
        lambda[i] = bp.lambda[t];
    }
    for (t, &i) in bm.rows.iter().enumerate() {
        lambda[i] = -bm.lambda[t];
    }
    DualCertificate {
        objective: gain_value(loss, &lambda),
        lambda,
        constraint_value: bp.c2_upper.sqrt().max(bm.c2_upper.sqrt()),
        regime,
        rho,
        upper_bound: bp.upper_bound + bm.upper_bound,
        blocks: vec![bp, bm],
    }
}

fn blocks_at(ds: &Dataset, loss: &LossModel, rp: f64, rm: f64, eps: Option<f64>) -> Result<(BlockDual, BlockDual)> {
    let (ip, im) = (ds.pos_idx(), ds.neg_idx());
    let (xp, xm) = (ds.x_pos(), ds.x_neg());
    let (a, b) = rayon::join(
        || solve_block(&xp, ip.clone(), rp, loss, eps),
        || solve_block(&xm, im.clone(), rm, loss, eps),
    );
    Ok((a?, b?))
}

/// Negative-correlation dual: the constraint splits into one Max-Cut type
/// constraint per label block, each replaced by its SDP relaxation.
pub fn solve_dual_negcorr(ds: &Dataset, loss: &LossModel, eps: Option<f64>) -> Result<DualCertificate> {
    check_loss(ds, loss)?;
    if !classify_dataset(ds, CLASSIFY_TOL).tag.implies(ClassTag::NegativeCorrelation) {
        return Err(Error::WrongRegime("data does not have negative correlation".into()));
    }
    let r = loss.beta();
    let (bp, bm) = blocks_at(ds, loss, r, r, eps)?;
    let rho = (2.0 / PI).sqrt() * loss.c_const();
    Ok(assemble(ds, loss, bp, bm, Regime::Negcorr, rho))
}

/// `c* = max_b ‖X₊ᵀdiag(λ₊)b‖ / max_b ‖X₋ᵀdiag(λ₋)b‖`.
pub fn geometric_ratio(ds: &Dataset, lambda: &[f64]) -> Result<GeoRatio> {
    check_signs(ds, lambda)?;
    let (lp, lm) = ds.split_dual(lambda);
    let gen = |x: DMatrix<f64>, l: &[f64]| {
        let mut g = x.transpose();
        for (j, &w) in l.iter().enumerate() {
            g.column_mut(j).scale_mut(w.max(0.0));
        }
        g
    };
    let numerator = zonotope_vertex_max(&gen(ds.x_pos(), &lp))?.0;
    let denominator = zonotope_vertex_max(&gen(ds.x_neg(), &lm))?.0;
    if denominator == 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(GeoRatio { c_star: numerator / denominator, numerator, denominator })
}

/// General data with a user-supplied `c ≤ min(c*, 1/c*)`: solve the block
/// problems with radii `(1, c)` and `(c, 1)` and keep the better.
pub fn solve_dual_geo(ds: &Dataset, c: f64, loss: &LossModel, eps: Option<f64>) -> Result<DualCertificate> {
    check_loss(ds, loss)?;
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidArgument(format!("c must lie in (0, 1), got {c}")));
    }
    let r = loss.beta();
    let rho = (2.0 / PI).sqrt() * (1.0 - c) * loss.c_const();
    let (one, two) = if matches!(loss, LossModel::MaxMargin) {
        // the max-margin blocks are homogeneous in the radius
        let (bp, bm) = blocks_at(ds, loss, r, r, eps)?;
        let scaled = |b: &BlockDual, f: f64| {
            let mut s = b.clone();
            s.lambda.iter_mut().for_each(|v| *v *= f);
            s.radius *= f;
            s.objective *= f;
            s.upper_bound *= f;
            s.c2_upper *= f * f;
            s
        };
        (
            assemble(ds, loss, bp.clone(), scaled(&bm, c), Regime::Geo, rho),
            assemble(ds, loss, scaled(&bp, c), bm, Regime::Geo, rho),
        )
    } else {
        let (a, b) = blocks_at(ds, loss, r, c * r, eps)?;
        let (p, q) = blocks_at(ds, loss, c * r, r, eps)?;
        (assemble(ds, loss, a, b, Regime::Geo, rho), assemble(ds, loss, p, q, Regime::Geo, rho))
    };
    Ok(if two.objective > one.objective { two } else { one })
}

/// `max 𝟏ᵀλ` s.t. `¼ tr(Z̃ Q(λ)) ≤ r²`, `λ ≥ 0`, returned with
/// `C₁ = min_{λ ≥ 0, 𝟏ᵀλ = 1} tr(Z̃ Q(λ))`. The optimum is `2r/√C₁`.
pub fn sdp_sub_value(x: &DMatrix<f64>, z: &DMatrix<f64>, radius: f64) -> Result<(f64, f64)> {
    let n = x.nrows();
    let d = x.ncols();
    // tr(Z̃Q(λ)) = ‖Σ λⱼ xⱼ ⊗ cⱼ‖² with Z̃ = VᵀV and cⱼ = vⱼ + v_{n+1}
    let e = ((z + z.transpose()) * 0.5).symmetric_eigen();
    let v = DMatrix::from_diagonal(&e.eigenvalues.map(|s| s.max(0.0).sqrt())) * e.eigenvectors.transpose();
    let k = v.nrows();
    let mut a = DMatrix::zeros(d * k, n);
    for j in 0..n {
        let c = v.column(j) + v.column(n);
        for p in 0..d {
            for q in 0..k {
                a[(p * k + q, j)] = x[(j, p)] * c[q];
            }
        }
    }
    // min-norm point of conv{aⱼ} is w/‖w‖² for the least-distance w with aⱼᵀw ≥ 1
    match least_distance(&a.transpose(), &DVector::from_element(n, 1.0))? {
        Some(w) => {
            let c1 = 1.0 / w.norm_squared();
            Ok((2.0 * radius / c1.sqrt(), c1))
        }
        None => Ok((f64::INFINITY, 0.0)),
    }
}
