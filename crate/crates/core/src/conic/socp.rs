//! Primal-dual interior-point method for cone-restricted group-norm programs
//! `min c_ξ Σξⱼ + c_τ Στₖ` s.t. `‖uₖ‖ ≤ τₖ`, `Gₖuₖ ≥ 0`, `ξ ≥ 0`,
//! `ξ + ΣCₖuₖ ≥ 1`, posed as `Gx + s = h`, `s ∈ K` and solved with
//! Nesterov-Todd scaling and Mehrotra's predictor-corrector.
//!
//! The reduced KKT matrix `GᵀW⁻²G` is block diagonal plus the margin rows,
//! so it is inverted through an `n × n` Woodbury system.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::ldp::least_distance;
use super::msn::{masked_phase1, MinSumNormsProblem, MinSumNormsSolution, Mode, NormBlock};
use crate::error::{Error, Result};
use crate::loss::LossModel;

const FEAS_TOL: f64 = 1e-8;
/// Relative gap at which a stalled run still returns its best iterate.
const FALLBACK_GAP: f64 = 1e-6;
const MAX_ITERS: usize = 200;

struct Program<'a> {
    blocks: &'a [NormBlock],
    n: usize,
    c_xi: f64,
    c_tau: f64,
    /// offset of `(τₖ, uₖ)` in `x`
    xoff: Vec<usize>,
    /// offset of the cone rows of block `k` in the linear part of `s`
    goff: Vec<usize>,
    /// offset of the Lorentz cone of block `k` in `s`
    soff: Vec<usize>,
    nx: usize,
    l: usize,
    ns: usize,
}

fn cone_rows(b: &NormBlock) -> usize {
    b.g.as_ref().map_or(0, |g| g.nrows())
}

impl<'a> Program<'a> {
    fn new(blocks: &'a [NormBlock], n: usize, c_xi: f64, c_tau: f64) -> Self {
        let (mut xoff, mut goff, mut soff) = (Vec::new(), Vec::new(), Vec::new());
        let (mut nx, mut l) = (n, 2 * n);
        for b in blocks {
            xoff.push(nx);
            nx += b.c.ncols() + 1;
            goff.push(l);
            l += cone_rows(b);
        }
        let mut ns = l;
        for b in blocks {
            soff.push(ns);
            ns += b.c.ncols() + 1;
        }
        Program { blocks, n, c_xi, c_tau, xoff, goff, soff, nx, l, ns }
    }

    fn degree(&self) -> f64 {
        (self.l + self.blocks.len()) as f64
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut s = DVector::zeros(self.ns);
        for j in 0..n {
            s[j] = -x[j];
            s[n + j] = -x[j];
        }
        for (k, b) in self.blocks.iter().enumerate() {
            let d = b.c.ncols();
            let tu = x.rows(self.xoff[k], d + 1);
            let u = tu.rows(1, d);
            s.rows_mut(n, n).gemv(-1.0, &b.c, &u, 1.0);
            if let Some(g) = &b.g {
                s.rows_mut(self.goff[k], g.nrows()).gemv(-1.0, g, &u, 0.0);
            }
            s.rows_mut(self.soff[k], d + 1).copy_from(&(-tu));
        }
        s
    }

    fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut x = DVector::zeros(self.nx);
        for j in 0..n {
            x[j] = -z[j] - z[n + j];
        }
        let ze = z.rows(n, n);
        for (k, b) in self.blocks.iter().enumerate() {
            let d = b.c.ncols();
            let mut v = -z.rows(self.soff[k], d + 1).clone_owned();
            v.rows_mut(1, d).gemv_tr(-1.0, &b.c, &ze, 1.0);
            if let Some(g) = &b.g {
                v.rows_mut(1, d).gemv_tr(-1.0, g, &z.rows(self.goff[k], g.nrows()), 1.0);
            }
            x.rows_mut(self.xoff[k], d + 1).copy_from(&v);
        }
        x
    }

    fn cost(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.nx);
        c.rows_mut(0, self.n).fill(self.c_xi);
        for &o in &self.xoff {
            c[o] = self.c_tau;
        }
        c
    }

    fn rhs(&self) -> DVector<f64> {
        let mut h = DVector::zeros(self.ns);
        h.rows_mut(self.n, self.n).fill(-1.0);
        h
    }

    fn socs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.blocks.iter().zip(&self.soff).map(|(b, &o)| (o, b.c.ncols() + 1))
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.ns);
        e.rows_mut(0, self.l).fill(1.0);
        for (o, _) in self.socs() {
            e[o] = 1.0;
        }
        e
    }

    /// Jordan product `a ∘ b`.
    fn jprod(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut r = DVector::zeros(self.ns);
        for i in 0..self.l {
            r[i] = a[i] * b[i];
        }
        for (o, m) in self.socs() {
            let (a0, b0) = (a[o], b[o]);
            r[o] = a.rows(o, m).dot(&b.rows(o, m));
            for i in 1..m {
                r[o + i] = a0 * b[o + i] + b0 * a[o + i];
            }
        }
        r
    }

    /// Solve `λ ∘ w = v` for `w`.
    fn jdiv(&self, lam: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.ns);
        for i in 0..self.l {
            w[i] = v[i] / lam[i];
        }
        for (o, m) in self.socs() {
            let l0 = lam[o];
            let l1 = lam.rows(o + 1, m - 1);
            let v1 = v.rows(o + 1, m - 1);
            let ln = l1.norm();
            let det = (l0 - ln) * (l0 + ln);
            let w0 = (l0 * v[o] - l1.dot(&v1)) / det;
            w[o] = w0;
            for i in 1..m {
                w[o + i] = (v[o + i] - w0 * lam[o + i]) / l0;
            }
        }
        w
    }

    /// Largest `α` with `x + α dx` in the cone.
    fn max_step(&self, x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
        let mut a = f64::INFINITY;
        for i in 0..self.l {
            if dx[i] < 0.0 {
                a = a.min(-x[i] / dx[i]);
            }
        }
        for (o, m) in self.socs() {
            let (x0, d0) = (x[o], dx[o]);
            let x1 = x.rows(o + 1, m - 1);
            let d1 = dx.rows(o + 1, m - 1);
            let xn = x1.norm();
            let c = (x0 - xn) * (x0 + xn);
            let b = x0 * d0 - x1.dot(&d1);
            let qa = d0 * d0 - d1.norm_squared();
            let disc = b * b - qa * c;
            let root = if qa < 0.0 {
                c / (-b + disc.max(0.0).sqrt())
            } else if b < 0.0 && disc >= 0.0 {
                c / (-b + disc.sqrt())
            } else {
                f64::INFINITY
            };
            a = a.min(root);
        }
        a
    }
}

/// Nesterov-Todd scaling: `sqrt(s/z)` on the linear rows and `(β, w̄)` with
/// `W = β(2vvᵀ - J)` on each Lorentz cone.
struct Scaling {
    wl: DVector<f64>,
    soc: Vec<(f64, DVector<f64>)>,
}

fn lorentz_det(v: &DVector<f64>) -> f64 {
    let n1 = v.rows(1, v.len() - 1).norm();
    (v[0] - n1) * (v[0] + n1)
}

impl Scaling {
    fn new(p: &Program, s: &DVector<f64>, z: &DVector<f64>) -> Option<Self> {
        let wl = DVector::from_fn(p.l, |i, _| (s[i] / z[i]).sqrt());
        let mut soc = Vec::with_capacity(p.blocks.len());
        for (o, m) in p.socs() {
            let sk = s.rows(o, m).clone_owned();
            let zk = z.rows(o, m).clone_owned();
            let (ds, dz) = (lorentz_det(&sk), lorentz_det(&zk));
            if !(ds > 0.0 && dz > 0.0) {
                return None;
            }
            let sb = sk / ds.sqrt();
            let zb = zk / dz.sqrt();
            let gamma = ((1.0 + sb.dot(&zb)) / 2.0).sqrt();
            let mut w = sb + jflip(&zb);
            w /= 2.0 * gamma;
            // square root of 2w̄w̄ᵀ - J as a hyperbolic reflection
            let scale = (2.0 * (w[0] + 1.0)).sqrt();
            w[0] += 1.0;
            w /= scale;
            soc.push(((ds / dz).sqrt().sqrt(), w));
        }
        Some(Scaling { wl, soc })
    }

    fn dense(&self, k: usize) -> DMatrix<f64> {
        let (beta, w) = &self.soc[k];
        let mut m = w * w.transpose() * 2.0;
        m[(0, 0)] -= 1.0;
        for i in 1..w.len() {
            m[(i, i)] += 1.0;
        }
        m * *beta
    }

    fn dense_inverse(&self, k: usize) -> DMatrix<f64> {
        let (beta, w) = &self.soc[k];
        let jw = jflip(w);
        let mut m = &jw * jw.transpose() * 2.0;
        m[(0, 0)] -= 1.0;
        for i in 1..w.len() {
            m[(i, i)] += 1.0;
        }
        m / *beta
    }

    /// `W v` or `W⁻¹ v`.
    fn apply(&self, p: &Program, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut r = DVector::zeros(p.ns);
        for i in 0..p.l {
            r[i] = if inverse { v[i] / self.wl[i] } else { v[i] * self.wl[i] };
        }
        for (k, (o, m)) in p.socs().enumerate() {
            let (beta, w) = &self.soc[k];
            let vk = v.rows(o, m).clone_owned();
            let out = if inverse {
                let jw = jflip(w);
                (jw.clone() * (2.0 * jw.dot(&vk)) - jflip(&vk)) / *beta
            } else {
                (w * (2.0 * w.dot(&vk)) - jflip(&vk)) * *beta
            };
            r.rows_mut(o, m).copy_from(&out);
        }
        r
    }
}

fn jflip(v: &DVector<f64>) -> DVector<f64> {
    let mut r = -v;
    r[0] = v[0];
    r
}

/// Factorization of `GᵀW⁻²G = B + AᵀDA`.
///
/// Variables whose block inverse `Bₖ⁻¹` is small are eliminated through the
/// `n × n` matrix `S = D⁻¹ + A_I B_I⁻¹ A_Iᵀ`; the rest, mostly blocks on the
/// boundary of their cone, go into a dense system `B_A + A_AᵀS⁻¹A_A`, since
/// a Woodbury step through a nearly singular `Bₖ` loses all accuracy.
/// Eliminated block inverses are kept as `Wₖ Mₖ⁻¹ Wₖ` with
/// `Mₖ = I + WₖĜₖᵀDĜₖWₖ`.
struct Factor {
    /// `s/z` on the `ξ ≥ 0` rows
    xi: DVector<f64>,
    xi_pos: Vec<Option<usize>>,
    blocks: Vec<BlockFactor>,
    s_inv: Cholesky<f64, Dyn>,
    dense: Option<Cholesky<f64, Dyn>>,
    na: usize,
}

enum BlockFactor {
    Eliminated { w: DMatrix<f64>, m: Cholesky<f64, Dyn> },
    Dense(usize),
}

const DENSE_SCALE: f64 = 1e3;

fn chol_ridge(mut a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let ridge = 1e-14 * a.trace().abs().max(1e-300) / a.nrows() as f64;
    for j in 0..a.nrows() {
        a[(j, j)] += ridge;
    }
    Cholesky::new(a).ok_or_else(|| Error::FactorizationFailure(what.into()))
}

impl Factor {
    fn new(p: &Program, sc: &Scaling) -> Result<Self> {
        let n = p.n;
        let wl2 = sc.wl.map(|v| v * v);
        let xi = wl2.rows(0, n).clone_owned();
        let mut na = 0;
        let mut xi_pos = vec![None; n];
        for j in 0..n {
            if xi[j] > DENSE_SCALE {
                xi_pos[j] = Some(na);
                na += 1;
            }
        }
        let mut s = DMatrix::from_diagonal(&wl2.rows(n, n).clone_owned());
        for j in 0..n {
            if xi_pos[j].is_none() {
                s[(j, j)] += xi[j];
            }
        }
        let mut blocks = Vec::with_capacity(p.blocks.len());
        let mut dense_w = Vec::new();
        for (k, b) in p.blocks.iter().enumerate() {
            let d = b.c.ncols();
            let w = sc.dense(k);
            if w.norm_squared() > DENSE_SCALE {
                blocks.push(BlockFactor::Dense(na));
                dense_w.push(k);
                na += d + 1;
                continue;
            }
            let mut m = DMatrix::identity(d + 1, d + 1);
            if let Some(g) = &b.g {
                let mut f = g * w.rows(1, d);
                for i in 0..g.nrows() {
                    f.row_mut(i).unscale_mut(sc.wl[p.goff[k] + i]);
                }
                m.gemm(1.0, &f.transpose(), &f, 1.0);
            }
            let mc = Cholesky::new(m).ok_or_else(|| Error::FactorizationFailure("cone block".into()))?;
            let cw = &b.c * w.rows(1, d);
            let x = mc.l().solve_lower_triangular(&cw.transpose()).ok_or_else(|| Error::FactorizationFailure("cone block".into()))?;
            s.gemm(1.0, &x.transpose(), &x, 1.0);
            blocks.push(BlockFactor::Eliminated { w, m: mc });
        }
        let s_inv = chol_ridge(s, "margin Schur complement")?;
        let dense = if na > 0 {
            let mut h = DMatrix::zeros(na, na);
            let mut aa = DMatrix::zeros(n, na);
            for j in 0..n {
                if let Some(o) = xi_pos[j] {
                    h[(o, o)] = 1.0 / xi[j];
                    aa[(j, o)] = 1.0;
                }
            }
            for &k in &dense_w {
                let BlockFactor::Dense(o) = blocks[k] else { unreachable!() };
                let b = &p.blocks[k];
                let d = b.c.ncols();
                let winv = sc.dense_inverse(k);
                let mut hk = &winv * &winv;
                if let Some(g) = &b.g {
                    let mut gs = g.clone();
                    for i in 0..g.nrows() {
                        gs.row_mut(i).unscale_mut(sc.wl[p.goff[k] + i]);
                    }
                    hk.view_mut((1, 1), (d, d)).gemm(1.0, &gs.transpose(), &gs, 1.0);
                }
                h.view_mut((o, o), (d + 1, d + 1)).copy_from(&hk);
                aa.view_mut((0, o + 1), (n, d)).copy_from(&b.c);
            }
            let y = s_inv.l().solve_lower_triangular(&aa).ok_or_else(|| Error::FactorizationFailure("dense coupling".into()))?;
            h.gemm(1.0, &y.transpose(), &y, 1.0);
            Some(chol_ridge(h, "dense block system")?)
        } else {
            None
        };
        Ok(Factor { xi, xi_pos, blocks, s_inv, dense, na })
    }

    fn solve(&self, p: &Program, r: &DVector<f64>) -> DVector<f64> {
        let n = p.n;
        let mut t = DVector::zeros(n);
        for j in 0..n {
            if self.xi_pos[j].is_none() {
                t[j] = self.xi[j] * r[j];
            }
        }
        for (k, b) in p.blocks.iter().enumerate() {
            if let BlockFactor::Eliminated { w, m } = &self.blocks[k] {
                let d = b.c.ncols();
                let wk = w * m.solve(&(w * r.rows(p.xoff[k], d + 1)));
                t.gemv(1.0, &b.c, &wk.rows(1, d), 1.0);
            }
        }
        let st = self.s_inv.solve(&t);
        let mut out = DVector::zeros(p.nx);
        let mut a = DVector::zeros(n);
        if let Some(dense) = &self.dense {
            let mut ra = DVector::zeros(self.na);
            for j in 0..n {
                if let Some(o) = self.xi_pos[j] {
                    ra[o] = r[j] - st[j];
                }
            }
            for (k, b) in p.blocks.iter().enumerate() {
                if let BlockFactor::Dense(o) = self.blocks[k] {
                    let d = b.c.ncols();
                    let mut rk = r.rows(p.xoff[k], d + 1).clone_owned();
                    rk.rows_mut(1, d).gemv_tr(-1.0, &b.c, &st, 1.0);
                    ra.rows_mut(o, d + 1).copy_from(&rk);
                }
            }
            let xa = dense.solve(&ra);
            for j in 0..n {
                if let Some(o) = self.xi_pos[j] {
                    out[j] = xa[o];
                    a[j] += xa[o];
                }
            }
            for (k, b) in p.blocks.iter().enumerate() {
                if let BlockFactor::Dense(o) = self.blocks[k] {
                    let d = b.c.ncols();
                    let xk = xa.rows(o, d + 1);
                    a.gemv(1.0, &b.c, &xk.rows(1, d), 1.0);
                    out.rows_mut(p.xoff[k], d + 1).copy_from(&xk);
                }
            }
        }
        let wv = self.s_inv.solve(&(t + a));
        for j in 0..n {
            if self.xi_pos[j].is_none() {
                out[j] = self.xi[j] * (r[j] - wv[j]);
            }
        }
        for (k, b) in p.blocks.iter().enumerate() {
            if let BlockFactor::Eliminated { w, m } = &self.blocks[k] {
                let d = b.c.ncols();
                let mut rk = r.rows(p.xoff[k], d + 1).clone_owned();
                rk.rows_mut(1, d).gemv_tr(-1.0, &b.c, &wv, 1.0);
                out.rows_mut(p.xoff[k], d + 1).copy_from(&(w * m.solve(&(w * rk))));
            }
        }
        out
    }
}

struct ConePrimal {
    u: Vec<DVector<f64>>,
    /// Multipliers of the margin rows.
    mu: DVector<f64>,
    iterations: usize,
}

/// A point with `Gw > 0`: least distance to `Gw ≥ 1`, or for thin cells
/// where that is numerically lost, the pseudo-inverse solution of `Gw = 1`.
fn cone_interior(g: &DMatrix<f64>) -> Result<DVector<f64>> {
    let ones = DVector::from_element(g.nrows(), 1.0);
    if let Some(w) = least_distance(g, &ones)? {
        return Ok(w);
    }
    if let Ok(w) = g.clone().svd(true, true).solve(&ones, 1e-12) {
        if (g * &w).min() > 0.0 {
            return Ok(w);
        }
    }
    Err(Error::InvalidArgument("cone without interior".into()))
}

fn interior_start(p: &Program) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(p.nx);
    let mut z = DVector::zeros(p.n);
    for (k, b) in p.blocks.iter().enumerate() {
        let d = b.c.ncols();
        let dir = match &b.g {
            Some(g) if g.nrows() > 0 => cone_interior(g)?,
            _ => DVector::zeros(d),
        };
        let dn = dir.norm();
        let u = if dn > 0.0 { dir * (1e-2 / dn) } else { dir };
        z.gemv(1.0, &b.c, &u, 1.0);
        x[p.xoff[k]] = 2.0 * u.norm() + 1.0;
        x.rows_mut(p.xoff[k] + 1, d).copy_from(&u);
    }
    for j in 0..p.n {
        x[j] = (1.0 - z[j]).max(0.0) + 1.0;
    }
    Ok(x)
}

/// Strictly dual feasible start: small equal multipliers on the margin and
/// cone rows, the rest fixed by `Gᵀz + c = 0`.
fn dual_start(p: &Program) -> DVector<f64> {
    let n = p.n;
    let mut worst: f64 = 0.0;
    for b in p.blocks {
        let mut v = b.c.row_sum().transpose().norm();
        if let Some(g) = &b.g {
            v += g.row_sum().transpose().norm();
        }
        worst = worst.max(v);
    }
    let gamma = (0.5 * p.c_tau / worst.max(1e-300)).min(0.5 * p.c_xi);
    let mut z = DVector::zeros(p.ns);
    z.rows_mut(0, p.l).fill(gamma);
    z.rows_mut(0, n).fill(p.c_xi - gamma);
    let mut part = z.clone();
    part.rows_mut(p.l, p.ns - p.l).fill(0.0);
    let rx = p.gt_mul(&part) + p.cost();
    for (k, b) in p.blocks.iter().enumerate() {
        let d = b.c.ncols();
        z.rows_mut(p.soff[k], d + 1).copy_from(&rx.rows(p.xoff[k], d + 1));
    }
    z
}

/// Recompute the multipliers of `ξ ≥ 0` and of the Lorentz cones from the
/// margin and cone-row multipliers, so `Gᵀz + c = 0` holds to rounding.
/// Entries that would leave the cone keep their stepped values.
fn repair_dual(p: &Program, z: &mut DVector<f64>) {
    let n = p.n;
    for j in 0..n {
        let v = p.c_xi - z[n + j];
        if v > 0.0 {
            z[j] = v;
        }
    }
    let ze = z.rows(n, n).clone_owned();
    for (k, b) in p.blocks.iter().enumerate() {
        let d = b.c.ncols();
        let mut v = DVector::zeros(d + 1);
        v[0] = p.c_tau;
        v.rows_mut(1, d).gemv_tr(-1.0, &b.c, &ze, 0.0);
        if let Some(g) = &b.g {
            v.rows_mut(1, d).gemv_tr(-1.0, g, &z.rows(p.goff[k], g.nrows()), 1.0);
        }
        if lorentz_det(&v) > 0.0 {
            z.rows_mut(p.soff[k], d + 1).copy_from(&v);
        }
    }
}

/// Reset the slacks to `h - Gx` cone by cone where that stays interior.
fn repair_primal(p: &Program, x: &DVector<f64>, h: &DVector<f64>, s: &mut DVector<f64>) {
    let exact = h - p.g_mul(x);
    for i in 0..p.l {
        if exact[i] > 0.0 {
            s[i] = exact[i];
        }
    }
    for (o, m) in p.socs() {
        let v = exact.rows(o, m).clone_owned();
        if v[0] > 0.0 && lorentz_det(&v) > 0.0 {
            s.rows_mut(o, m).copy_from(&v);
        }
    }
}

fn interior_point(p: &Program, tol: f64) -> Result<ConePrimal> {
    let c = p.cost();
    let h = p.rhs();
    let e = p.identity();
    let nu = p.degree();
    let mut x = interior_start(p)?;
    let mut s = &h - p.g_mul(&x);
    let mut z = dual_start(p);
    let (hn, cn) = (h.norm().max(1.0), c.norm().max(1.0));
    let mut iterations = 0;
    // last iterate with small residuals, as (relative gap, x, z)
    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let outcome = loop {
        let rx = p.gt_mul(&z) + &c;
        let rz = p.g_mul(&x) + &s - &h;
        let gap = s.dot(&z);
        let pcost = c.dot(&x);
        let rel = gap / (1.0 + pcost.abs());
        let feasible = rz.norm() / hn <= FEAS_TOL && rx.norm() / cn <= FEAS_TOL;
        if feasible {
            if rel <= tol {
                best = Some((rel, x.clone(), z.clone()));
                break Ok(());
            }
            if best.as_ref().map_or(true, |b| rel < b.0) {
                best = Some((rel, x.clone(), z.clone()));
            }
        } else if best.is_some() && (rz.norm() / hn > 1e3 * FEAS_TOL || rx.norm() / cn > 1e3 * FEAS_TOL) {
            break Err(Error::NonConvergence(format!("residuals grew to {:e}", (rx.norm() / cn).max(rz.norm() / hn))));
        }
        if iterations >= MAX_ITERS {
            break Err(Error::NonConvergence(format!("interior point: gap {gap:e} after {iterations} iterations")));
        }
        iterations += 1;
        let Some(sc) = Scaling::new(p, &s, &z) else {
            break Err(Error::NonConvergence("iterate left the cone".into()));
        };
        let fac = match Factor::new(p, &sc) {
            Ok(f) => f,
            Err(err) => break Err(err),
        };
        let lam = sc.apply(p, &z, false);
        let kkt = |bx: &DVector<f64>, bz: &DVector<f64>, bs: &DVector<f64>| {
            let ls = p.jdiv(&lam, bs);
            let q = bz - sc.apply(p, &ls, false);
            let wq = sc.apply(p, &sc.apply(p, &q, true), true);
            let dx = fac.solve(p, &(bx + p.gt_mul(&wq)));
            let gdx = p.g_mul(&dx);
            let dz = sc.apply(p, &sc.apply(p, &(&gdx - &q), true), true);
            let ds = bz - gdx;
            (dx, ds, dz)
        };
        let ll = p.jprod(&lam, &lam);
        let (bx, bz) = (-rx, -rz);
        let (_, ds_a, dz_a) = kkt(&bx, &bz, &(-&ll));
        let alpha_a = 1f64.min(p.max_step(&s, &ds_a)).min(p.max_step(&z, &dz_a));
        let mu = gap / nu;
        let gap_a = (&s + &ds_a * alpha_a).dot(&(&z + &dz_a * alpha_a));
        let sigma = (gap_a / gap).clamp(0.0, 1.0).powi(3);
        let corr = p.jprod(&sc.apply(p, &ds_a, true), &sc.apply(p, &dz_a, false));
        let bs = -&ll - corr + &e * (sigma * mu);
        let (dx, ds, dz) = kkt(&bx, &bz, &bs);
        let alpha = 1f64.min(0.99 * p.max_step(&s, &ds).min(p.max_step(&z, &dz)));
        if !(alpha > 1e-14) {
            break Err(Error::NonConvergence(format!("interior point stalled at gap {gap:e}")));
        }
        x.axpy(alpha, &dx, 1.0);
        s.axpy(alpha, &ds, 1.0);
        z.axpy(alpha, &dz, 1.0);
        repair_dual(p, &mut z);
        repair_primal(p, &x, &h, &mut s);
    };
    let (x, z) = match (outcome, best) {
        (Ok(()), Some((_, x, z))) => (x, z),
        (Err(_), Some((rel, x, z))) if rel <= FALLBACK_GAP => (x, z),
        (Err(err), _) => return Err(err),
        (Ok(()), None) => unreachable!(),
    };
    let u = p
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| x.rows(p.xoff[k] + 1, b.c.ncols()).clone_owned())
        .collect();
    Ok(ConePrimal {
        u,
        mu: z.rows(p.n, p.n).clone_owned(),
        iterations,
    })
}

/// Solve a max-margin or hinge program with cone-restricted blocks. The
/// max-margin case runs the elastic program with weight `M` on `ξ`, raising
/// `M` until the margin multipliers stay below it.
pub fn solve_cone_program(p: &MinSumNormsProblem, tol: f64) -> Result<MinSumNormsSolution> {
    let n = p.y.len();
    let finish = |sol: ConePrimal, scale: f64| -> MinSumNormsSolution {
        let u: Vec<DVector<f64>> = sol.u.iter().map(|v| v * scale).collect();
        let mut z = DVector::zeros(n);
        for (b, v) in p.blocks.iter().zip(&u) {
            z.gemv(1.0, &b.c, v, 1.0);
        }
        let norms: f64 = u.iter().map(|v| v.norm()).sum();
        let value = match p.mode() {
            Mode::MarginConstrained => norms,
            Mode::Penalized => z.iter().map(|&v| p.loss.loss(v)).sum::<f64>() + p.loss.beta() * norms,
        };
        let mu = sol.mu.map(|v| v.max(0.0));
        let dual_value = p.loss.total_gain(mu.as_slice());
        let lambda = DVector::from_fn(n, |j, _| p.y[j] * mu[j]);
        let mut cone_violation: f64 = 0.0;
        for (b, v) in p.blocks.iter().zip(&u) {
            if let Some(g) = &b.g {
                cone_violation = cone_violation.max((-(g * v).min()).max(0.0));
            }
        }
        MinSumNormsSolution {
            value,
            dual_value,
            gap: value - dual_value,
            u,
            mu,
            lambda,
            z,
            cone_violation,
            newton_steps: sol.iterations,
        }
    };
    match &p.loss {
        LossModel::Hinge { beta } => {
            let prog = Program::new(&p.blocks, n, 1.0, *beta);
            Ok(finish(interior_point(&prog, tol)?, 1.0))
        }
        LossModel::MaxMargin => {
            if !masked_phase1(&p.blocks, n)? {
                return Err(Error::Infeasible("margin constraints admit no solution".into()));
            }
            let mut big_m = 100.0;
            loop {
                let prog = Program::new(&p.blocks, n, big_m, 1.0);
                let sol = interior_point(&prog, tol)?;
                if sol.mu.max() < 0.5 * big_m {
                    let mut z = DVector::zeros(n);
                    for (b, v) in p.blocks.iter().zip(&sol.u) {
                        z.gemv(1.0, &b.c, v, 1.0);
                    }
                    let zmin = z.min();
                    if zmin > 0.0 {
                        return Ok(finish(sol, 1.0 / zmin));
                    }
                }
                big_m *= 100.0;
                if big_m > 1e9 {
                    return Err(Error::NonConvergence("margin multipliers unbounded".into()));
                }
            }
        }
        LossModel::General { .. } => Err(Error::InvalidArgument("cone solver handles max-margin and hinge only".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0])
    }

    fn relu_line(loss: LossModel) -> MinSumNormsProblem {
        let mut masks = Vec::new();
        for m in [vec![true, false], vec![false, true]] {
            masks.push((m.clone(), 1.0, true));
            masks.push((m, -1.0, true));
        }
        MinSumNormsProblem::from_masks(&line(), &[1.0, -1.0], &masks, loss)
    }

    #[test]
    fn relu_line_max_margin() {
        let s = solve_cone_program(&relu_line(LossModel::MaxMargin), 1e-9).unwrap();
        assert!((s.value - 2.0).abs() < 1e-8, "{}", s.value);
        assert!((s.dual_value - 2.0).abs() < 1e-7, "{}", s.dual_value);
        assert!(s.z.iter().all(|&v| v >= 1.0 - 1e-12));
    }

    #[test]
    fn relu_line_hinge() {
        // β ≥ 1 makes the zero network optimal with value 2
        let s = solve_cone_program(&relu_line(LossModel::Hinge { beta: 3.0 }), 1e-9).unwrap();
        assert!((s.value - 2.0).abs() < 1e-8, "{}", s.value);
        // β < 1: each point is fit exactly at cost β
        let s = solve_cone_program(&relu_line(LossModel::Hinge { beta: 0.5 }), 1e-9).unwrap();
        assert!((s.value - 1.0).abs() < 1e-8, "{}", s.value);
    }

    #[test]
    fn infeasible_cones() {
        // only the cell where the positive point is off: cannot fit it
        let masks = vec![(vec![false, true], 1.0, true), (vec![false, true], -1.0, true)];
        let p = MinSumNormsProblem::from_masks(&line(), &[1.0, -1.0], &masks, LossModel::MaxMargin);
        let r = solve_cone_program(&p, 1e-8);
        assert!(matches!(r, Err(Error::Infeasible(_))), "{:?}", r.map(|s| s.value));
    }
}
