use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use super::ldp::least_distance;
use crate::error::{Error, Result};
use crate::loss::LossModel;

/// One group `uₖ` of the objective, entering the constraints through `Cₖuₖ`
/// and optionally restricted to the cone `Gₖuₖ ≥ 0`.
#[derive(Clone, Debug)]
pub struct NormBlock {
    pub c: DMatrix<f64>,
    pub g: Option<DMatrix<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    MarginConstrained,
    Penalized,
}

/// `min Σ‖uₖ‖` s.t. `Σ Cₖuₖ ≥ 1` (margin mode), or
/// `min Σ ℓ((ΣCₖuₖ)ⱼ) + β Σ‖uₖ‖` (penalized mode).
#[derive(Clone, Debug)]
pub struct MinSumNormsProblem {
    pub blocks: Vec<NormBlock>,
    pub loss: LossModel,
    /// Labels used to sign the returned dual vector; all ones when absent.
    pub y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MinSumNormsSolution {
    pub value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub u: Vec<DVector<f64>>,
    /// Nonnegative dual multipliers on the rows of `ΣCₖuₖ`.
    pub mu: DVector<f64>,
    /// `λ = diag(y) μ`.
    pub lambda: DVector<f64>,
    /// `ΣCₖuₖ` at the returned primal point.
    pub z: DVector<f64>,
    pub cone_violation: f64,
    pub newton_steps: usize,
}

impl MinSumNormsProblem {
    /// Blocks `s·diag(y)·diag(mask)·X`, with the cone `(2M - I)X ≥ 0` when
    /// requested, stated by its facet rows only.
    pub fn from_masks(
        x: &DMatrix<f64>,
        y: &[f64],
        masks: &[(Vec<bool>, f64, bool)],
        loss: LossModel,
    ) -> Self {
        let mut cones: BTreeMap<&[bool], Option<DMatrix<f64>>> = BTreeMap::new();
        for (mask, _, cone) in masks {
            if *cone {
                cones.insert(mask, None);
            }
        }
        let keys: Vec<&[bool]> = cones.keys().copied().collect();
        let facets: Vec<DMatrix<f64>> = keys
            .par_iter()
            .map(|mask| {
                let mut g = x.clone();
                for i in 0..x.nrows() {
                    if !mask[i] {
                        g.row_mut(i).neg_mut();
                    }
                }
                facet_rows(&g)
            })
            .collect();
        for (k, f) in keys.into_iter().zip(facets) {
            cones.insert(k, Some(f));
        }
        let blocks = masks
            .iter()
            .map(|(mask, sign, cone)| {
                let mut c = x.clone();
                for i in 0..x.nrows() {
                    let f = if mask[i] { sign * y[i] } else { 0.0 };
                    c.row_mut(i).scale_mut(f);
                }
                let g = if *cone { cones[mask.as_slice()].clone() } else { None };
                NormBlock { c, g }
            })
            .collect();
        MinSumNormsProblem { blocks, loss, y: y.to_vec() }
    }

    pub fn mode(&self) -> Mode {
        if self.loss.is_penalized() {
            Mode::Penalized
        } else {
            Mode::MarginConstrained
        }
    }

    fn n(&self) -> usize {
        self.y.len()
    }
}

/// Unit-normalized rows of `g` that define facets of `{u : gu ≥ 0}`; a row is
/// dropped when the remaining rows already imply it.
pub fn facet_rows(g: &DMatrix<f64>) -> DMatrix<f64> {
    let rows: Vec<usize> = (0..g.nrows()).filter(|&i| g.row(i).norm() > 0.0).collect();
    let mut g = g.select_rows(rows.iter());
    for i in 0..g.nrows() {
        let r = g.row(i).norm();
        g.row_mut(i).unscale_mut(r);
    }
    let mut keep: Vec<usize> = (0..g.nrows()).collect();
    let mut i = 0;
    while i < keep.len() {
        let mut t = DMatrix::zeros(keep.len(), g.ncols());
        let mut h = DVector::zeros(keep.len());
        for (r, &j) in keep.iter().enumerate() {
            if r == i {
                t.row_mut(r).copy_from(&(-g.row(j)));
                h[r] = 1.0;
            } else {
                t.row_mut(r).copy_from(&g.row(j));
            }
        }
        match least_distance(&t, &h) {
            Ok(None) => {
                keep.remove(i);
            }
            _ => i += 1,
        }
    }
    g.select_rows(keep.iter())
}

/// Feasibility of `Σ Cₖuₖ ≥ 1`, ignoring cone restrictions.
pub fn masked_phase1(blocks: &[NormBlock], n: usize) -> Result<bool> {
    let d: usize = blocks.iter().map(|b| b.c.ncols()).sum();
    let mut g = DMatrix::zeros(n, d);
    let mut off = 0;
    for b in blocks {
        g.view_mut((0, off), (n, b.c.ncols())).copy_from(&b.c);
        off += b.c.ncols();
    }
    Ok(least_distance(&g, &DVector::from_element(n, 1.0))?.is_some())
}

struct State {
    mu: DVector<f64>,
    nu: Vec<Option<DVector<f64>>>,
}

struct Ctx<'a> {
    p: &'a MinSumNormsProblem,
    r2: f64,
    upper: f64,
}

impl Ctx<'_> {
    fn w(&self, st: &State, k: usize) -> DVector<f64> {
        let b = &self.p.blocks[k];
        let mut w = b.c.tr_mul(&st.mu);
        if let (Some(g), Some(nu)) = (&b.g, &st.nu[k]) {
            w += g.tr_mul(nu);
        }
        w
    }

    fn phi(&self, mu: &DVector<f64>) -> f64 {
        self.p.loss.total_gain(mu.as_slice())
    }

    fn barrier(&self, st: &State, t: f64) -> f64 {
        let mut f = t * self.phi(&st.mu);
        for &m in st.mu.iter() {
            if m <= 0.0 || m >= self.upper {
                return f64::NEG_INFINITY;
            }
            f += m.ln();
            if self.upper.is_finite() {
                f += (self.upper - m).ln();
            }
        }
        for k in 0..self.p.blocks.len() {
            let s = self.r2 - self.w(st, k).norm_squared();
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            f += s.ln();
            if let Some(nu) = &st.nu[k] {
                for &v in nu.iter() {
                    if v <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    f += v.ln();
                }
            }
        }
        f
    }

    /// One Newton step for the barrier problem at parameter `t`; returns the
    /// squared Newton decrement.
    fn newton_step(&self, st: &mut State, t: f64) -> Result<f64> {
        let n = self.p.n();
        let loss = &self.p.loss;
        let mut hess = DMatrix::<f64>::zeros(n, n);
        let mut grad = DVector::<f64>::zeros(n);
        for j in 0..n {
            let m = st.mu[j];
            grad[j] = t * loss.gain_d1(m) + 1.0 / m;
            hess[(j, j)] = -t * loss.gain_d2(m) + 1.0 / (m * m);
            if self.upper.is_finite() {
                let q = self.upper - m;
                grad[j] -= 1.0 / q;
                hess[(j, j)] += 1.0 / (q * q);
            }
        }
        let mut rhs = grad.clone();
        // cone multipliers are eliminated through M = (P⁻¹ + Gᵀdiag(ν²)G)⁻¹,
        // which avoids the cancellation of the plain Schur complement
        type Elim = (DMatrix<f64>, DVector<f64>, DVector<f64>);
        let mut elims: Vec<Option<Elim>> = Vec::with_capacity(self.p.blocks.len());
        for (k, b) in self.p.blocks.iter().enumerate() {
            let w = self.w(st, k);
            let wn2 = w.norm_squared();
            let s = self.r2 - wn2;
            let a = &w * (-2.0 / s);
            grad.gemv(1.0, &b.c, &a, 1.0);
            rhs.gemv(1.0, &b.c, &a, 1.0);
            match (&b.g, &st.nu[k]) {
                (Some(g), Some(nu)) => {
                    let nu2 = nu.map(|v| v * v);
                    let gnu = g * &a + nu.map(|v| 1.0 / v);
                    let mut pinv = DMatrix::<f64>::identity(w.len(), w.len()) * (0.5 * s);
                    pinv.ger(-s / (s + 2.0 * wn2), &w, &w, 1.0);
                    let mut gs = g.clone();
                    for i in 0..nu.len() {
                        gs.row_mut(i).scale_mut(nu2[i]);
                    }
                    let mi = pinv + g.tr_mul(&gs);
                    let ch = Cholesky::new(mi)
                        .ok_or_else(|| Error::NonConvergence("cone block factorization".into()))?;
                    let m = ch.inverse();
                    let h = gs.tr_mul(&gnu);
                    let cm = &b.c * &m;
                    hess.gemm(1.0, &cm, &b.c.transpose(), 1.0);
                    rhs.gemv(-1.0, &cm, &h, 1.0);
                    elims.push(Some((m, h, gnu)));
                }
                _ => {
                    let mut pm = DMatrix::<f64>::identity(w.len(), w.len()) * (2.0 / s);
                    pm.ger(4.0 / (s * s), &w, &w, 1.0);
                    let cp = &b.c * &pm;
                    hess.gemm(1.0, &cp, &b.c.transpose(), 1.0);
                    elims.push(None);
                }
            }
        }
        let dmu = match Cholesky::new(hess.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => {
                let mut reg = hess.clone();
                let shift = 1e-14 * hess.diagonal().amax().max(1e-300);
                for j in 0..n {
                    reg[(j, j)] += shift;
                }
                match reg.lu().solve(&rhs) {
                    Some(v) if v.iter().all(|x| x.is_finite()) => v,
                    // numerically centred: let the outer loop decide
                    _ => return Ok(0.0),
                }
            }
        };
        let mut dnu: Vec<Option<DVector<f64>>> = Vec::with_capacity(elims.len());
        let mut dec = grad.dot(&dmu);
        for (k, e) in elims.iter().enumerate() {
            match (e, &self.p.blocks[k].g, &st.nu[k]) {
                (Some((m, h, gnu)), Some(g), Some(nu)) => {
                    let q = m * (self.p.blocks[k].c.tr_mul(&dmu) + h);
                    let dv = (gnu - g * q).component_mul(&nu.map(|v| v * v));
                    dec += gnu.dot(&dv);
                    dnu.push(Some(dv));
                }
                _ => dnu.push(None),
            }
        }
        if !(dec > 0.0) {
            return Ok(0.0);
        }
        // fraction to the boundary
        let mut step: f64 = 1.0;
        for j in 0..n {
            if dmu[j] < 0.0 {
                step = step.min(-0.99 * st.mu[j] / dmu[j]);
            }
            if self.upper.is_finite() && dmu[j] > 0.0 {
                step = step.min(0.99 * (self.upper - st.mu[j]) / dmu[j]);
            }
        }
        for (k, dv) in dnu.iter().enumerate() {
            if let (Some(dv), Some(nu)) = (dv, &st.nu[k]) {
                for i in 0..nu.len() {
                    if dv[i] < 0.0 {
                        step = step.min(-0.99 * nu[i] / dv[i]);
                    }
                }
            }
        }
        let f0 = self.barrier(st, t);
        let base_mu = st.mu.clone();
        let base_nu = st.nu.clone();
        for _ in 0..60 {
            st.mu = &base_mu + &dmu * step;
            for k in 0..st.nu.len() {
                if let (Some(nu), Some(dv)) = (&base_nu[k], &dnu[k]) {
                    st.nu[k] = Some(nu + dv * step);
                }
            }
            let f1 = self.barrier(st, t);
            if f1.is_finite() && f1 >= f0 + 0.01 * step * dec {
                return Ok(dec);
            }
            step *= 0.5;
        }
        st.mu = base_mu;
        st.nu = base_nu;
        Ok(0.0)
    }
}

/// Solve a group-norm program by a log-barrier method on its dual
/// `max Σ g(μⱼ)` s.t. `‖Cₖᵀμ + Gₖᵀνₖ‖ ≤ r`, `μ, ν ≥ 0`, recovering the primal
/// groups from the central path.
pub fn solve_min_sum_norms(p: &MinSumNormsProblem, tol: f64) -> Result<MinSumNormsSolution> {
    let n = p.n();
    if p.blocks.is_empty() {
        return Err(Error::InvalidArgument("no blocks".into()));
    }
    for b in &p.blocks {
        if b.c.nrows() != n || b.g.as_ref().is_some_and(|g| g.ncols() != b.c.ncols()) {
            return Err(Error::DimensionMismatch("block shapes".into()));
        }
    }
    let mode = p.mode();
    if mode == Mode::MarginConstrained && !masked_phase1(&p.blocks, n)? {
        return Err(Error::Infeasible("margin constraints admit no solution".into()));
    }
    let r = p.loss.beta();
    let ctx = Ctx { p, r2: r * r, upper: p.loss.upper() };

    let mut worst: f64 = 1e-12;
    for b in &p.blocks {
        let mut v = b.c.tr_mul(&DVector::from_element(n, 1.0));
        if let Some(g) = &b.g {
            v += g.tr_mul(&DVector::from_element(g.nrows(), 1.0));
        }
        worst = worst.max(v.norm());
    }
    let mut alpha = 0.5 * r / worst;
    if ctx.upper.is_finite() {
        alpha = alpha.min(0.5 * ctx.upper);
    }
    let mut st = State {
        mu: DVector::from_element(n, alpha),
        nu: p.blocks.iter().map(|b| b.g.as_ref().map(|g| DVector::from_element(g.nrows(), alpha))).collect(),
    };
    let terms = n
        + p.blocks.iter().map(|b| 1 + b.g.as_ref().map_or(0, |g| g.nrows())).sum::<usize>()
        + if ctx.upper.is_finite() { n } else { 0 };

    let mut t = 1.0;
    let mut newton_steps = 0;
    let mut best: Option<MinSumNormsSolution> = None;
    for _outer in 0..40 {
        for _ in 0..200 {
            let dec = ctx.newton_step(&mut st, t)?;
            newton_steps += 1;
            if dec <= 1e-10 {
                break;
            }
        }
        if mode == Mode::MarginConstrained && st.mu.amax() > 1e12 {
            return Err(Error::Infeasible("dual multipliers diverge".into()));
        }
        let sol = recover(&ctx, &st, t, newton_steps);
        // every recovered primal point is feasible and every iterate strictly
        // dual feasible, so the best of each side certifies the gap
        let merged = match best.take() {
            None => sol.clone(),
            Some(b) => {
                let (mut prim, dual) = if sol.value < b.value { (sol.clone(), b) } else { (b, sol.clone()) };
                if dual.dual_value > prim.dual_value {
                    prim.dual_value = dual.dual_value;
                    prim.mu = dual.mu;
                    prim.lambda = dual.lambda;
                }
                prim.gap = prim.value - prim.dual_value;
                prim.newton_steps = newton_steps;
                prim
            }
        };
        let target = tol * (1.0 + merged.value.abs());
        let done = merged.gap.abs() <= target;
        best = Some(merged);
        if done || (terms as f64) / t < 1e-3 * target {
            break;
        }
        t *= 10.0;
    }
    let b = best.unwrap();
    if b.gap.abs() <= tol * (1.0 + b.value.abs()) {
        Ok(b)
    } else {
        Err(Error::NonConvergence(format!("duality gap {:e} after {newton_steps} Newton steps", b.gap)))
    }
}

fn cone_gap(p: &MinSumNormsProblem, u: &[DVector<f64>]) -> f64 {
    let mut v: f64 = 0.0;
    for (k, b) in p.blocks.iter().enumerate() {
        if let Some(g) = &b.g {
            v = v.max((-(g * &u[k]).min()).max(0.0));
        }
    }
    v
}

/// At the optimum each `uₖ` is a nonnegative multiple of `wₖ` and the rows
/// with positive multipliers are tight; fit those multiples by NNLS.
fn polish_margin(ctx: &Ctx, st: &State) -> Option<(Vec<DVector<f64>>, DVector<f64>, f64)> {
    let p = ctx.p;
    let n = p.n();
    let r = ctx.r2.sqrt();
    let mmax = st.mu.max();
    let rows: Vec<usize> = (0..n).filter(|&j| st.mu[j] > 1e-7 * mmax).collect();
    let mut dirs = Vec::new();
    let mut cand = Vec::new();
    for k in 0..p.blocks.len() {
        let w = ctx.w(st, k);
        let wn = w.norm();
        if wn >= r * (1.0 - 1e-3) && wn > 0.0 {
            dirs.push(w / wn);
            cand.push(k);
        }
    }
    if rows.is_empty() || cand.is_empty() {
        return None;
    }
    let full = DMatrix::from_fn(n, cand.len(), |j, c| p.blocks[cand[c]].c.row(j).dot(&dirs[c].transpose()));
    let a = full.select_rows(rows.iter());
    let sol = super::boxls::nnls(&a, &DVector::from_element(rows.len(), 1.0)).ok()?;
    let z = &full * &sol.b;
    let zmin = z.min();
    if !(zmin > 0.0) {
        return None;
    }
    let f = 1.0 / zmin;
    let mut u: Vec<DVector<f64>> = p.blocks.iter().map(|b| DVector::zeros(b.c.ncols())).collect();
    for (c, &k) in cand.iter().enumerate() {
        u[k] = &dirs[c] * (sol.b[c] * f);
    }
    Some((u, z * f, sol.b.sum() * f))
}

fn recover(ctx: &Ctx, st: &State, t: f64, newton_steps: usize) -> MinSumNormsSolution {
    let p = ctx.p;
    let n = p.n();
    let mut u = Vec::with_capacity(p.blocks.len());
    let mut z = DVector::zeros(n);
    for (k, b) in p.blocks.iter().enumerate() {
        let w = ctx.w(st, k);
        let s = ctx.r2 - w.norm_squared();
        let uk = &w * (2.0 / (t * s));
        z.gemv(1.0, &b.c, &uk, 1.0);
        u.push(uk);
    }
    let norms: f64 = u.iter().map(|v| v.norm()).sum();
    let value = match p.mode() {
        Mode::MarginConstrained => {
            let zmin = z.min();
            if zmin < 1.0 && zmin > 0.0 {
                let f = 1.0 / zmin;
                for v in u.iter_mut() {
                    *v *= f;
                }
                z *= f;
                norms * f
            } else {
                norms
            }
        }
        Mode::Penalized => z.iter().map(|&zj| p.loss.loss(zj)).sum::<f64>() + p.loss.beta() * norms,
    };
    let mut cone_violation = cone_gap(p, &u);
    let mut value = value;
    if p.mode() == Mode::MarginConstrained {
        if let Some((pu, pz, pv)) = polish_margin(ctx, st) {
            let pc = cone_gap(p, &pu);
            if pv < value && pc <= cone_violation.max(1e-10 * (1.0 + pv)) {
                u = pu;
                z = pz;
                value = pv;
                cone_violation = pc;
            }
        }
    }
    let dual_value = ctx.phi(&st.mu);
    let lambda = DVector::from_fn(n, |j, _| p.y[j] * st.mu[j]);
    MinSumNormsSolution {
        value,
        dual_value,
        gap: value - dual_value,
        u,
        mu: st.mu.clone(),
        lambda,
        z,
        cone_violation,
        newton_steps,
    }
}
