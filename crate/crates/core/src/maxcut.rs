//! Max-Cut view of the dual constraint: brute force, the diagonal-constrained
//! SDP relaxation, Goemans-Williamson rounding and hyperplane realization of
//! rounded masks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::conic::strict_realization;
use crate::error::{Error, Result};

pub const BRUTE_CAP: usize = 22;
pub const GATE_MARGIN: f64 = 1e-6;

/// `max_{z ∈ {-1,1}^m} zᵀQz` by Gray-code enumeration with `z₁ = 1`.
pub fn maxcut_bruteforce(q: &DMatrix<f64>) -> Result<(f64, Vec<i8>)> {
    let m = q.nrows();
    if m > BRUTE_CAP {
        return Err(Error::TooLarge { what: "Max-Cut size", size: m, cap: BRUTE_CAP });
    }
    if m == 0 {
        return Ok((0.0, vec![]));
    }
    let q = (q + q.transpose()) * 0.5;
    let mut z = vec![1.0f64; m];
    let mut s = DVector::from_fn(m, |i, _| q.row(i).sum());
    let mut val = s.sum();
    let mut best = (val, z.clone());
    for g in 1u64..(1u64 << (m - 1)) {
        let k = g.trailing_zeros() as usize + 1;
        // flipping z_k changes zᵀQz by -4 z_k (s_k - Q_kk z_k)
        val += -4.0 * z[k] * (s[k] - q[(k, k)] * z[k]);
        let old = z[k];
        z[k] = -old;
        for i in 0..m {
            s[i] -= 2.0 * old * q[(i, k)];
        }
        if val > best.0 {
            best = (val, z.clone());
        }
    }
    let zb = DVector::from_vec(best.1.clone());
    let exact = zb.dot(&(&q * &zb));
    Ok((exact, best.1.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect()))
}

#[derive(Clone, Debug, Serialize)]
pub struct SdpSolution {
    #[serde(serialize_with = "ser_mat")]
    pub z: DMatrix<f64>,
    /// `tr(QZ)` at the returned feasible `Z`.
    pub objective: f64,
    /// Certified upper bound on the SDP optimum.
    pub upper_bound: f64,
    #[serde(serialize_with = "ser_vec")]
    pub zeta: DVector<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    #[serde(skip)]
    pub factor: DMatrix<f64>,
}

fn ser_mat<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.as_slice().serialize(s)
}

fn psd_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = a.clone().symmetric_eigen();
    let mut d = e.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(0.0);
    }
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

/// Columns of the returned `r×m` matrix are unit vectors with `VᵀV ≈ Z`.
fn factor_of(z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = z.nrows();
    let e = z.clone().symmetric_eigen();
    let mut v = DMatrix::zeros(m, m);
    for k in 0..m {
        let s = e.eigenvalues[k].max(0.0).sqrt();
        for j in 0..m {
            v[(k, j)] = s * e.eigenvectors[(j, k)];
        }
    }
    for j in 0..m {
        let nrm = v.column(j).norm();
        if nrm > 1e-12 {
            v.column_mut(j).unscale_mut(nrm);
        } else {
            v.column_mut(j).fill(0.0);
            v[(j, j)] = 1.0;
        }
    }
    v
}

fn admm(q: &DMatrix<f64>, tol: f64, max_iter: usize) -> DMatrix<f64> {
    let m = q.nrows();
    let scale = q.norm().max(1e-300);
    let qs = q / scale;
    let rho = 1.0 / (m as f64).sqrt();
    let mut w = DMatrix::identity(m, m);
    let mut u = DMatrix::zeros(m, m);
    for _ in 0..max_iter {
        let mut z = &w - &u + &qs / rho;
        z.fill_diagonal(1.0);
        let w_old = w.clone();
        w = psd_part(&(&z + &u));
        u += &z - &w;
        let pr = (&z - &w).norm();
        let dr = rho * (&w - &w_old).norm();
        if pr <= tol && dr <= tol {
            break;
        }
    }
    w
}

/// Coordinate ascent on unit columns: `vᵢ ← normalize(Σ_{j≠i} Qᵢⱼ vⱼ)`.
fn mixing(q: &DMatrix<f64>, v: &mut DMatrix<f64>, max_sweeps: usize) {
    let m = q.nrows();
    let mut prev = f64::NEG_INFINITY;
    let scale = q.norm().max(1e-300);
    for _ in 0..max_sweeps {
        let mut delta: f64 = 0.0;
        for i in 0..m {
            let mut g = DVector::zeros(v.nrows());
            for j in 0..m {
                if j != i && q[(i, j)] != 0.0 {
                    g.axpy(q[(i, j)], &v.column(j), 1.0);
                }
            }
            let gn = g.norm();
            if gn > 1e-300 {
                g /= gn;
                delta = delta.max((&g - v.column(i)).norm());
                v.set_column(i, &g);
            }
        }
        let z = v.tr_mul(v);
        let obj = q.component_mul(&z).sum();
        if delta < 1e-13 || (obj - prev).abs() <= 1e-16 * scale {
            break;
        }
        prev = obj;
    }
}

fn finish(q: &DMatrix<f64>, v: DMatrix<f64>) -> SdpSolution {
    let m = q.nrows();
    let z = v.tr_mul(&v);
    let qz = q * &z;
    let zeta = DVector::from_fn(m, |i, _| qz[(i, i)]);
    let s = DMatrix::from_diagonal(&zeta) - q;
    let lmin = s.clone().symmetric_eigen().eigenvalues.min();
    let dual_residual = (-lmin).max(0.0);
    let objective = q.component_mul(&z).sum();
    let upper_bound = zeta.sum() + m as f64 * dual_residual;
    let diag_err = (0..m).map(|i| (z[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
    let zmin = z.clone().symmetric_eigen().eigenvalues.min();
    SdpSolution {
        complementarity: (&s * &z).norm(),
        z,
        objective,
        upper_bound: upper_bound.max(objective),
        zeta,
        primal_residual: diag_err.max((-zmin).max(0.0)),
        dual_residual,
        factor: v,
    }
}

fn check_psd(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qs = (q + q.transpose()) * 0.5;
    if qs.nrows() == 0 {
        return Ok(qs);
    }
    let lmin = qs.clone().symmetric_eigen().eigenvalues.min();
    if lmin < -1e-6 * (1.0 + qs.norm()) {
        return Err(Error::NotPsd(lmin));
    }
    Ok(qs)
}

/// `max tr(QZ)` s.t. `diag(Z) = 1`, `Z ⪰ 0`.
pub fn sdp_relaxation(q: &DMatrix<f64>, tol: f64) -> Result<SdpSolution> {
    let q = check_psd(q)?;
    let w = admm(&q, 1e-7, 20_000);
    sdp_polish(&q, factor_of(&w), tol)
}

/// Mixing-method solve from a given factor (columns need not be normalized).
pub fn sdp_polish(q: &DMatrix<f64>, mut v: DMatrix<f64>, tol: f64) -> Result<SdpSolution> {
    let m = q.nrows();
    if m == 0 {
        return Ok(finish(q, DMatrix::zeros(0, 0)));
    }
    for j in 0..m {
        let nrm = v.column(j).norm();
        if nrm > 1e-12 {
            v.column_mut(j).unscale_mut(nrm);
        } else {
            v.column_mut(j).fill(0.0);
            let r = j % v.nrows();
            v[(r, j)] = 1.0;
        }
    }
    let mut sol = None;
    for _ in 0..20 {
        mixing(q, &mut v, 2000);
        let s = finish(q, v.clone());
        let ok = s.upper_bound - s.objective <= tol * (1.0 + s.objective.abs());
        sol = Some(s);
        if ok {
            break;
        }
    }
    let s = sol.unwrap();
    if s.upper_bound - s.objective > 1e3 * tol * (1.0 + s.objective.abs()) {
        return Err(Error::NonConvergence(format!(
            "SDP gap {:e} at objective {:e}",
            s.upper_bound - s.objective,
            s.objective
        )));
    }
    Ok(s)
}

/// `Q(λ) = [I 𝟏]ᵀ diag(λ) X Xᵀ diag(λ) [I 𝟏]`, of size `(n+1)×(n+1)`.
pub fn q_matrix(x: &DMatrix<f64>, lambda: &[f64]) -> DMatrix<f64> {
    let n = x.nrows();
    let mut a = x.transpose();
    for (j, &l) in lambda.iter().enumerate() {
        a.column_mut(j).scale_mut(l);
    }
    let mut ab = DMatrix::zeros(x.ncols(), n + 1);
    ab.view_mut((0, 0), (x.ncols(), n)).copy_from(&a);
    let s = a.column_sum();
    ab.set_column(n, &s);
    ab.tr_mul(&ab)
}

/// `c₁(λ) = ¼ max_z zᵀQ(λ)z = max_{b ∈ {0,1}ⁿ} ‖Xᵀdiag(λ)b‖²`.
pub fn c1_value(x: &DMatrix<f64>, lambda: &[f64]) -> Result<f64> {
    let q = q_matrix(x, lambda);
    Ok(0.25 * maxcut_bruteforce(&q)?.0)
}

#[derive(Clone, Debug)]
pub struct C2Eval {
    /// `¼ tr(Q(λ) Z)` at the returned `Z` (attained value).
    pub value: f64,
    /// Certified upper bound on `c₂(λ)`.
    pub upper: f64,
    pub sdp: SdpSolution,
    /// `½ (G ∘ BZBᵀ) λ`, the derivative of the fixed-`Z` quadratic model.
    pub gradient: DVector<f64>,
}

/// Gradient `½(XXᵀ ∘ BZBᵀ)λ` of the quadratic model at a fixed `Z`.
pub fn c2_model(x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: &[f64]) -> (f64, DVector<f64>) {
    let n = x.nrows();
    let g = x * x.transpose();
    let mut hm = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let m = z[(i, j)] + z[(i, n)] + z[(n, j)] + z[(n, n)];
            hm[(i, j)] = g[(i, j)] * m;
        }
    }
    let l = DVector::from_column_slice(lambda);
    let hl = &hm * &l;
    (0.25 * l.dot(&hl), hl * 0.5)
}

pub fn c2_value_and_gradient(
    x: &DMatrix<f64>,
    lambda: &[f64],
    tol: f64,
    warm: Option<&DMatrix<f64>>,
) -> Result<C2Eval> {
    if lambda.iter().any(|&l| l < 0.0) {
        return Err(Error::SignViolation(lambda.iter().position(|&l| l < 0.0).unwrap() + 1));
    }
    let q = q_matrix(x, lambda);
    let sdp = match warm {
        // a warm factor can stall at a saddle; restart cold when it does
        Some(v) if v.ncols() == q.nrows() => match sdp_polish(&q, v.clone(), tol) {
            Ok(s) => s,
            Err(Error::NonConvergence(_)) => sdp_relaxation(&q, tol)?,
            Err(e) => return Err(e),
        },
        _ => sdp_relaxation(&q, tol)?,
    };
    let (value, gradient) = c2_model(x, &sdp.z, lambda);
    Ok(C2Eval { value, upper: 0.25 * sdp.upper_bound, sdp, gradient })
}

/// Gaussian draws `r ~ N(0, Z)` through a symmetric factor of `Z`, one
/// counter-based stream per sample index.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    seed: u64,
}

impl GaussianSampler {
    pub fn new(z: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let zs = (z + z.transpose()) * 0.5;
        let e = zs.symmetric_eigen();
        let lmin = e.eigenvalues.min();
        if !lmin.is_finite() || lmin < -1e-6 {
            return Err(Error::FactorizationFailure(format!("min eigenvalue {lmin:e}")));
        }
        let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(GaussianSampler { factor: &e.eigenvectors * DMatrix::from_diagonal(&d), seed })
    }

    pub fn draw(&self, i: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i);
        let g = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.factor * g
    }
}

pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// `bⱼ = (zⱼ z_{n+1} + 1) / 2` for a sign vector of length `n + 1`.
pub fn mask_from_signs(z: &[i8]) -> Vec<bool> {
    let last = z[z.len() - 1];
    z[..z.len() - 1].iter().map(|&v| v == last).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundingBatch {
    pub seed: u64,
    pub k: usize,
    pub samples: Vec<Vec<i8>>,
    pub masks: Vec<Vec<bool>>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

pub fn gw_round(z: &DMatrix<f64>, q: &DMatrix<f64>, k: usize, seed: u64) -> Result<RoundingBatch> {
    let sampler = GaussianSampler::new(z, seed)?;
    let q = (q + q.transpose()) * 0.5;
    let drawn: Vec<(Vec<i8>, f64)> = (0..k as u64)
        .into_par_iter()
        .map(|i| {
            let r = sampler.draw(i);
            let s: Vec<i8> = r.iter().map(|&v| sign(v)).collect();
            let zf = DVector::from_fn(s.len(), |j, _| s[j] as f64);
            (s, zf.dot(&(&q * &zf)))
        })
        .collect();
    let values: Vec<f64> = drawn.iter().map(|d| d.1).collect();
    let kf = k.max(1) as f64;
    let mean = values.iter().sum::<f64>() / kf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (kf - 1.0).max(1.0);
    let samples: Vec<Vec<i8>> = drawn.into_iter().map(|d| d.0).collect();
    let masks = samples.iter().map(|s| mask_from_signs(s)).collect();
    Ok(RoundingBatch { seed, k, samples, masks, values, mean, stderr: (var / kf).sqrt() })
}

#[derive(Clone, Debug)]
pub struct Realization {
    /// Rounded mask from the sign formula.
    pub mask: Vec<bool>,
    /// `𝕀(Xw ≥ 0)`, equal to `mask` wherever `λ̃ⱼ > 0`.
    pub realized: Vec<bool>,
    pub w: DVector<f64>,
    pub fallback: bool,
}

/// Realize the rounded mask of a draw `r` by a hyperplane `w`, first by the
/// algebraic formula `w = Xᵀdiag(s·λ̃)[I 𝟏]Z̃Z̃⁺r`, otherwise by a strict
/// feasibility solve with margin [`GATE_MARGIN`].
pub fn realize_pattern(
    x: &DMatrix<f64>,
    lambda: &[f64],
    z: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<Realization> {
    let n = x.nrows();
    let signs: Vec<i8> = r.iter().map(|&v| sign(v)).collect();
    let mask = mask_from_signs(&signs);
    let active: Vec<usize> = (0..n).filter(|&j| lambda[j] > 0.0).collect();
    let pinv = z.clone().pseudo_inverse(1e-10).map_err(|e| Error::FactorizationFailure(e.to_string()))?;
    let zr = z * (pinv * r);
    let s = signs[n] as f64;
    let coef = DVector::from_fn(n, |j, _| s * lambda[j] * (zr[j] + zr[n]));
    let w = x.tr_mul(&coef);
    let realized: Vec<bool> = (x * &w).iter().map(|&v| v >= 0.0).collect();
    if active.iter().all(|&j| realized[j] == mask[j]) && w.norm() > 0.0 {
        return Ok(Realization { mask, realized, w, fallback: false });
    }
    let xs = x.select_rows(active.iter());
    let ms: Vec<bool> = active.iter().map(|&j| mask[j]).collect();
    match strict_realization(&xs, &ms, GATE_MARGIN)? {
        Some(w) => {
            let realized = (x * &w).iter().map(|&v| v >= 0.0).collect();
            Ok(Realization { mask, realized, w, fallback: true })
        }
        None if ms.iter().all(|&b| b) => {
            // only the degenerate gate w = 0 realizes this mask
            let w = DVector::zeros(x.ncols());
            Ok(Realization { mask, realized: vec![true; n], w, fallback: true })
        }
        None => Err(Error::Unrealizable),
    }
}
