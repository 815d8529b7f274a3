//! Exact ground truth for small instances: activation-pattern enumeration and
//! the enumerated convex programs for the primal and dual.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use rayon::prelude::*;

use crate::conic::{
    least_distance, masked_phase1, nnls, solve_cone_program, solve_min_sum_norms, MinSumNormsProblem, MinSumNormsSolution, Mode,
};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::network::{balanced_columns, GatedReluNetwork, Network, ReluNetwork};

pub const PATTERN_CAP: usize = 10_000;
/// Relative threshold under which `xᵢᵀw` counts as zero when checking tie masks.
pub const TIE_TOL: f64 = 1e-12;
pub const ORACLE_TOL: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct PatternSet {
    pub masks: Vec<Vec<bool>>,
    pub w: Vec<DVector<f64>>,
    /// True when the pattern is attained on an open cell (no ties).
    pub strict: Vec<bool>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn strict_masks(&self) -> Vec<Vec<bool>> {
        (0..self.len()).filter(|&i| self.strict[i]).map(|i| self.masks[i].clone()).collect()
    }
}

/// Count bound `2 Σ_{k<r} C(n-1, k)` on the open cells of a central arrangement
/// of `n` hyperplanes in rank `r`.
pub fn cell_bound(n: usize, r: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for k in 0..r {
        if k > 0 {
            if k > n.saturating_sub(1) {
                break;
            }
            c = c * (n - k) / k;
        }
        total += c;
    }
    2 * total
}

/// Check `𝕀(Xw ≥ 0) = mask`, treating `|xᵢᵀw| ≤ TIE_TOL‖xᵢ‖‖w‖` as zero when
/// `tie_tolerant`.
pub fn realizes(x: &DMatrix<f64>, w: &DVector<f64>, mask: &[bool], tie_tolerant: bool) -> bool {
    let wn = w.norm();
    (0..x.nrows()).all(|i| {
        let v = x.row(i).dot(&w.transpose());
        let on = if tie_tolerant { v >= -TIE_TOL * x.row(i).norm() * wn } else { v >= 0.0 };
        on == mask[i]
    })
}

fn row_space_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let keep: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1e-300)).collect();
    vt.select_rows(keep.iter()).transpose()
}

fn null_basis(a: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(dim, dim);
    }
    let mut full = DMatrix::zeros(dim.max(a.nrows()), dim);
    full.view_mut((0, 0), (a.nrows(), dim)).copy_from(a);
    let svd = full.svd(false, true);
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values.max();
    let idx: Vec<usize> =
        (0..dim).filter(|&i| svd.singular_values[i] <= 1e-10 * smax.max(1e-300)).collect();
    vt.select_rows(idx.iter()).transpose()
}

fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let s = a.clone().svd(false, false).singular_values;
    let smax = s.max();
    s.iter().filter(|&&v| v > 1e-10 * smax.max(1e-300)).count()
}

/// Open cells of the central arrangement with normals the rows of `a`,
/// each with an interior point; built by adding one hyperplane at a time.
fn cells(a: &DMatrix<f64>) -> Result<Vec<(Vec<bool>, DVector<f64>)>> {
    let (m, l) = a.shape();
    let mut out: Vec<(Vec<bool>, DVector<f64>)> = vec![(vec![], DVector::from_element(l, 0.0))];
    for j in 0..m {
        let mut next = Vec::with_capacity(out.len() * 2);
        for (sig, p) in out {
            let v = a.row(j).dot(&p.transpose());
            let scale = a.row(j).norm() * p.norm();
            let mut sides = [None, None];
            if v > 1e-9 * scale {
                sides[1] = Some(p.clone());
            } else if v < -1e-9 * scale {
                sides[0] = Some(p.clone());
            }
            for (side, slot) in sides.iter_mut().enumerate() {
                if slot.is_some() {
                    continue;
                }
                let mut g = DMatrix::zeros(j + 1, l);
                for (i, &s) in sig.iter().enumerate() {
                    let f = if s { 1.0 } else { -1.0 };
                    g.row_mut(i).copy_from(&(a.row(i) * f));
                }
                let f = if side == 1 { 1.0 } else { -1.0 };
                g.row_mut(j).copy_from(&(a.row(j) * f));
                if let Some(q) = least_distance(&g, &DVector::from_element(j + 1, 1.0))? {
                    if (&g * &q).min() > 0.0 {
                        *slot = Some(q);
                    }
                }
            }
            for (side, slot) in sides.into_iter().enumerate() {
                if let Some(q) = slot {
                    let mut s = sig.clone();
                    s.push(side == 1);
                    next.push((s, q));
                }
            }
        }
        out = next;
        if out.len() > 4 * PATTERN_CAP {
            return Err(Error::CapExceeded(PATTERN_CAP));
        }
    }
    Ok(out)
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, f)?;
            cur.pop();
        }
        Ok(())
    }
    rec(0, n, k, &mut Vec::new(), f)
}

/// All distinct masks `𝕀(Xw ≥ 0)` over `w ∈ ℝᵈ`, including tie masks attained
/// only on lower-dimensional faces, in lexicographic order.
pub fn enumerate_patterns(x: &DMatrix<f64>, cap: usize) -> Result<PatternSet> {
    let n = x.nrows();
    let basis = row_space_basis(x);
    let k = basis.ncols();
    let y = x * &basis;
    let mut found: BTreeMap<Vec<bool>, (DVector<f64>, bool)> = BTreeMap::new();
    let mut seen_flats: BTreeMap<Vec<bool>, ()> = BTreeMap::new();
    // the zero face
    found.insert(vec![true; n], (DVector::zeros(x.ncols()), k == 0));
    for r in 0..k {
        let mut visit = |subset: &[usize]| -> Result<()> {
            let ys = y.select_rows(subset.iter());
            if rank(&ys) != r {
                return Ok(());
            }
            let nb = null_basis(&ys, k);
            let zero: Vec<bool> =
                (0..n).map(|i| (y.row(i) * &nb).norm() <= 1e-10 * y.row(i).norm()).collect();
            if seen_flats.insert(zero.clone(), ()).is_some() {
                return Ok(());
            }
            let rest: Vec<usize> = (0..n).filter(|&i| !zero[i]).collect();
            let a = y.select_rows(rest.iter()) * &nb;
            for (sig, p) in cells(&a)? {
                let mut mask = zero.clone();
                for (t, &i) in rest.iter().enumerate() {
                    mask[i] = sig[t];
                }
                let w = &basis * (&nb * &p);
                let strict = r == 0;
                let entry = found.entry(mask).or_insert((w.clone(), strict));
                if strict && !entry.1 {
                    *entry = (w, true);
                }
                if found.len() > cap {
                    return Err(Error::CapExceeded(cap));
                }
            }
            Ok(())
        };
        combinations(n, r, &mut visit)?;
    }
    let mut ps = PatternSet { masks: vec![], w: vec![], strict: vec![] };
    for (mask, (w, strict)) in found {
        ps.masks.push(mask);
        ps.w.push(w);
        ps.strict.push(strict);
    }
    Ok(ps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Arch {
    Relu,
    GatedRelu,
}

#[derive(Clone, Debug)]
pub struct ExactPrimal {
    pub p: f64,
    pub dual_value: f64,
    pub lambda: DVector<f64>,
    /// `(mask, sign, uᵢ)` for every block of the enumerated program.
    pub blocks: Vec<(Vec<bool>, f64, DVector<f64>)>,
    pub network: Network,
    pub patterns: usize,
    pub cone_violation: f64,
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

/// Optimal value of the training problem with enough neurons, via the
/// enumerated convex program (cone constrained for ReLU).
pub fn exact_primal(ds: &Dataset, loss: &LossModel, arch: Arch) -> Result<ExactPrimal> {
    check_loss(ds, loss)?;
    let ps = enumerate_patterns(&ds.x, PATTERN_CAP)?;
    exact_primal_with(ds, loss, arch, &ps)
}

/// Dual constraint value of one block at `λ`: `‖Π_K(s·XᵀMλ)‖` with the cell
/// cone `K` when `cone`, else `‖XᵀMλ‖`.
fn block_value(ds: &Dataset, spec: &(Vec<bool>, f64, bool), lambda: &DVector<f64>) -> Result<f64> {
    let (mask, s, cone) = spec;
    let ml = DVector::from_fn(ds.n(), |i, _| if mask[i] { lambda[i] } else { 0.0 });
    let c = ds.x.tr_mul(&ml) * *s;
    if !cone {
        return Ok(c.norm());
    }
    let mut gt = ds.x.transpose();
    for i in 0..ds.n() {
        if !mask[i] {
            gt.column_mut(i).neg_mut();
        }
    }
    Ok(nnls(&gt, &(-c))?.residual)
}

fn block_values(ds: &Dataset, specs: &[(Vec<bool>, f64, bool)], lambda: &DVector<f64>) -> Result<Vec<f64>> {
    specs.par_iter().map(|sp| block_value(ds, sp, lambda)).collect()
}

/// Indices of the `count` largest values not yet in `chosen`.
fn top_new(vals: &[f64], chosen: &[bool], count: usize, above: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).filter(|&k| !chosen[k] && vals[k] > above).collect();
    idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    idx.truncate(count);
    idx
}

/// Solves the enumerated program by pattern generation: restricted solves on a
/// working set of blocks, adding the blocks whose dual constraint the
/// restricted multipliers violate. The full-problem gap is certified by
/// rescaling the multipliers into the full dual feasible set.
pub fn exact_primal_with(ds: &Dataset, loss: &LossModel, arch: Arch, ps: &PatternSet) -> Result<ExactPrimal> {
    let mut specs: Vec<(Vec<bool>, f64, bool)> = Vec::new();
    let mut gates: Vec<DVector<f64>> = Vec::new();
    match arch {
        Arch::Relu => {
            for m in ps.strict_masks() {
                specs.push((m.clone(), 1.0, true));
                specs.push((m, -1.0, true));
            }
        }
        Arch::GatedRelu => {
            for i in 0..ps.len() {
                specs.push((ps.masks[i].clone(), 1.0, false));
                gates.push(ps.w[i].clone());
            }
        }
    }
    let n = ds.n();
    let r = loss.beta();
    let batch = (2 * n).max(8);
    let full = MinSumNormsProblem::from_masks(&ds.x, &ds.y, &specs, loss.clone());
    if full.mode() == Mode::MarginConstrained && !masked_phase1(&full.blocks, n)? {
        return Err(Error::Infeasible("margin constraints admit no solution".into()));
    }
    let mut chosen = vec![false; specs.len()];
    let seed = block_values(ds, &specs, &ds.y_vec())?;
    for k in top_new(&seed, &chosen, 4 * batch, -1.0) {
        chosen[k] = true;
    }
    let (sol, work, lower) = loop {
        let work: Vec<usize> = (0..specs.len()).filter(|&k| chosen[k]).collect();
        let sub: Vec<(Vec<bool>, f64, bool)> = work.iter().map(|&k| specs[k].clone()).collect();
        let prob = MinSumNormsProblem::from_masks(&ds.x, &ds.y, &sub, loss.clone());
        let cones = arch == Arch::Relu && !matches!(loss, LossModel::General { .. });
        let solved = if cones {
            solve_cone_program(&prob, 0.25 * ORACLE_TOL)
        } else {
            solve_min_sum_norms(&prob, 0.25 * ORACLE_TOL)
        };
        let sol = match solved {
            Err(Error::Infeasible(_) | Error::NonConvergence(_)) if work.len() < specs.len() => {
                // the working set alone cannot meet the margins
                let add = top_new(&seed, &chosen, 4 * batch, -1.0);
                for k in add {
                    chosen[k] = true;
                }
                continue;
            }
            other => other?,
        };
        let certify = |mu: &DVector<f64>| -> Result<(Vec<f64>, f64)> {
            let lambda = DVector::from_iterator(n, mu.iter().zip(&ds.y).map(|(m, y)| m * y));
            let vals = block_values(ds, &specs, &lambda)?;
            let a = vals.iter().copied().fold(0.0, f64::max) / r;
            let scale = if full.mode() == Mode::MarginConstrained { a } else { a.max(1.0) };
            let mu: Vec<f64> = mu.iter().map(|&m| if scale > 0.0 { m / scale } else { m }).collect();
            Ok((vals, loss.total_gain(&mu)))
        };
        let (vals, lower) = certify(&sol.mu)?;
        if sol.value - lower <= ORACLE_TOL * (1.0 + sol.value.abs()) {
            break (sol, work, lower);
        }
        let add = top_new(&vals, &chosen, batch, r * (1.0 + 1e-12));
        if add.is_empty() {
            return Err(Error::NonConvergence(format!(
                "pattern generation stalled with gap {:e}",
                sol.value - lower
            )));
        }
        for k in add {
            chosen[k] = true;
        }
    };
    let mut u_all: Vec<DVector<f64>> = vec![DVector::zeros(ds.d()); specs.len()];
    for (i, &k) in work.iter().enumerate() {
        u_all[k] = sol.u[i].clone();
    }
    let sol = MinSumNormsSolution { u: u_all, dual_value: lower, gap: sol.value - lower, ..sol };
    let blocks: Vec<(Vec<bool>, f64, DVector<f64>)> =
        specs.iter().zip(&sol.u).map(|((m, s, _), u)| (m.clone(), *s, u.clone())).collect();
    let d = ds.d();
    let network = match arch {
        Arch::Relu => {
            let us: Vec<(DVector<f64>, f64)> = blocks.iter().map(|(_, s, u)| (u.clone(), *s)).collect();
            let (w1, w2, _) = balanced_columns(&us, d);
            Network::Relu(ReluNetwork { w1, w2 })
        }
        Arch::GatedRelu => {
            // output sign absorbed by the labels: the block constraint is yᵢ(Σ...) ≥ 1
            let us: Vec<(DVector<f64>, f64)> = blocks.iter().map(|(_, _, u)| (u.clone(), 1.0)).collect();
            let (w1, w2, keep) = balanced_columns(&us, d);
            let mut h = DMatrix::zeros(d, keep.len());
            for (c, &k) in keep.iter().enumerate() {
                h.set_column(c, &gates[k]);
            }
            Network::Gated(GatedReluNetwork { h, w1, w2 })
        }
    };
    Ok(ExactPrimal {
        p: sol.value,
        dual_value: sol.dual_value,
        lambda: sol.lambda,
        blocks,
        network,
        patterns: ps.len(),
        cone_violation: sol.cone_violation,
    })
}

/// `max_{‖u‖≤1} |λᵀ(Xu)₊|` as the largest cone-projected norm
/// `‖Π_{Kᵢ}(±XᵀMᵢλ)‖` over the open cells `Kᵢ = {u : (2Mᵢ - I)Xu ≥ 0}`.
pub fn pattern_constraint_value(ds: &Dataset, ps: &PatternSet, lambda: &[f64]) -> Result<f64> {
    let l = DVector::from_column_slice(lambda);
    let mut best: f64 = 0.0;
    for mask in ps.strict_masks() {
        let ml = DVector::from_fn(ds.n(), |i, _| if mask[i] { l[i] } else { 0.0 });
        let c = ds.x.tr_mul(&ml);
        let mut gt = ds.x.transpose();
        for i in 0..ds.n() {
            if !mask[i] {
                gt.column_mut(i).neg_mut();
            }
        }
        for s in [1.0, -1.0] {
            // ‖Π_K(sc)‖ = min_{ν ≥ 0} ‖sc + Gᵀν‖
            let r = nnls(&gt, &(-&c * s))?;
            best = best.max(r.residual);
        }
    }
    Ok(best)
}

/// Gated-ReLU counterpart: `max_i ‖(MᵢX)ᵀλ‖` over all realizable masks.
pub fn gated_constraint_value(ds: &Dataset, ps: &PatternSet, lambda: &[f64]) -> f64 {
    ps.masks
        .iter()
        .map(|mask| {
            let ml = DVector::from_fn(ds.n(), |i, _| if mask[i] { lambda[i] } else { 0.0 });
            ds.x.tr_mul(&ml).norm()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug)]
pub struct ExactDual {
    pub d: f64,
    pub lambda: Vec<f64>,
    /// Dual objective as returned by the cone solve, before rescaling.
    pub solver_value: f64,
}

/// Exact max-margin dual `max λᵀy` s.t. `diag(y)λ ≥ 0`, `max_{‖u‖≤1}|λᵀ(Xu)₊| ≤ 1`.
pub fn exact_dual(ds: &Dataset) -> Result<ExactDual> {
    exact_dual_with(ds, &LossModel::MaxMargin)
}

/// Exact dual for any loss: `max Σ g(yᵢλᵢ)` s.t. `diag(y)λ ∈ [0, ub]`,
/// constraint value `≤ β`.
pub fn exact_dual_with(ds: &Dataset, loss: &LossModel) -> Result<ExactDual> {
    check_loss(ds, loss)?;
    let ps = enumerate_patterns(&ds.x, PATTERN_CAP)?;
    let ex = exact_primal_with(ds, loss, Arch::Relu, &ps).map_err(|e| match e {
        Error::Infeasible(_) => Error::Unbounded,
        other => other,
    })?;
    let mut lambda: Vec<f64> = ex.lambda.iter().copied().collect();
    let v = pattern_constraint_value(ds, &ps, &lambda)?;
    if v > loss.beta() {
        for l in lambda.iter_mut() {
            *l *= loss.beta() / v;
        }
    } else if !loss.is_penalized() && v > 0.0 {
        // the max-margin dual is homogeneous, so the constraint can be made active
        for l in lambda.iter_mut() {
            *l /= v;
        }
    }
    let mu: Vec<f64> = (0..ds.n()).map(|i| (ds.y[i] * lambda[i]).max(0.0)).collect();
    let d = loss.total_gain(&mu);
    Ok(ExactDual { d, lambda, solver_value: ex.dual_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, ClassTag};
    use crate::network::evaluate_network;

    fn line() -> Dataset {
        Dataset::from_rows(&[vec![1.0], vec![-1.0]], &[1.0, -1.0]).unwrap()
    }

    fn brute_masks(x: &DMatrix<f64>, samples: usize) -> std::collections::BTreeSet<Vec<bool>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        (0..samples)
            .map(|_| {
                let w = DVector::from_fn(x.ncols(), |_, _| rng.random_range(-1.0..1.0));
                (x * w).iter().map(|&v| v >= 0.0).collect()
            })
            .collect()
    }

    #[test]
    fn line_patterns() {
        let ps = enumerate_patterns(&line().x, PATTERN_CAP).unwrap();
        assert_eq!(ps.masks, vec![vec![false, true], vec![true, false], vec![true, true]]);
        assert_eq!(ps.strict, vec![true, true, false]);
    }

    #[test]
    fn two_generic_lines_give_four_cells() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, -0.3, 1.0]);
        let ps = enumerate_patterns(&x, PATTERN_CAP).unwrap();
        assert_eq!(ps.strict.iter().filter(|&&s| s).count(), 4);
        for i in 0..ps.len() {
            assert!(realizes(&x, &ps.w[i], &ps.masks[i], !ps.strict[i]));
            if ps.strict[i] {
                assert!(realizes(&x, &ps.w[i], &ps.masks[i], false));
            }
        }
    }

    #[test]
    fn random_arrangements_match_sampling_and_bound() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        for (n, d, seed) in [(6, 2, 1u64), (7, 3, 2), (9, 3, 3)] {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
            let ps = enumerate_patterns(&x, PATTERN_CAP).unwrap();
            let strict: std::collections::BTreeSet<Vec<bool>> = ps.strict_masks().into_iter().collect();
            assert_eq!(strict.len(), cell_bound(n, d));
            let sampled = brute_masks(&x, 20_000);
            assert!(sampled.is_subset(&strict));
            // every one of the 2ⁿ sign vectors, tested directly for a strict solution
            let feasible: std::collections::BTreeSet<Vec<bool>> = (0..1u32 << n)
                .map(|b| (0..n).map(|i| b >> i & 1 == 1).collect::<Vec<bool>>())
                .filter(|m| crate::conic::strict_realization(&x, m, 1.0).unwrap().is_some())
                .collect();
            assert_eq!(feasible, strict);
        }
    }

    #[test]
    fn degenerate_rows() {
        // parallel and antiparallel rows, rank-deficient
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ps = enumerate_patterns(&x, PATTERN_CAP).unwrap();
        for i in 0..ps.len() {
            assert!(realizes(&x, &ps.w[i], &ps.masks[i], !ps.strict[i]));
        }
        assert_eq!(ps.strict.iter().filter(|&&s| s).count(), 4);
        assert!(ps.masks.contains(&vec![true; 4]));
    }

    #[test]
    fn exact_values_on_the_line() {
        let ds = line();
        let relu = exact_primal(&ds, &LossModel::MaxMargin, Arch::Relu).unwrap();
        assert!((relu.p - 2.0).abs() < 1e-8);
        let e = evaluate_network(&relu.network, &ds, &LossModel::MaxMargin).unwrap();
        assert!(e.feasible);
        assert!((e.weight_decay - 2.0).abs() < 1e-7);
        let gated = exact_primal(&ds, &LossModel::MaxMargin, Arch::GatedRelu).unwrap();
        // the all-ones gate lets one neuron fit both points
        assert!((gated.p - 1.0).abs() < 1e-8);
        let dual = exact_dual(&ds).unwrap();
        assert!((dual.d - 2.0).abs() < 1e-8);
        assert!((dual.lambda[0] - 1.0).abs() < 1e-6 && (dual.lambda[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_point() {
        let ds = Dataset::from_rows(&[vec![0.6, 0.8]], &[1.0]).unwrap();
        let r = exact_primal(&ds, &LossModel::MaxMargin, Arch::Relu).unwrap();
        assert!((r.p - 1.0).abs() < 1e-8);
    }

    #[test]
    fn strong_duality_and_relaxation_order() {
        for seed in 0..3 {
            let ds = generate_synthetic(ClassTag::General, 6, 2, seed).unwrap();
            let ps = enumerate_patterns(&ds.x, PATTERN_CAP).unwrap();
            let relu = exact_primal_with(&ds, &LossModel::MaxMargin, Arch::Relu, &ps);
            let gated = exact_primal_with(&ds, &LossModel::MaxMargin, Arch::GatedRelu, &ps);
            let (relu, gated) = match (relu, gated) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            assert!(relu.p >= gated.p - 1e-9 * (1.0 + gated.p));
            let dual = exact_dual(&ds).unwrap();
            assert!((dual.d - relu.p).abs() <= 1e-6 * (1.0 + relu.p));
            let v = pattern_constraint_value(&ds, &ps, &dual.lambda).unwrap();
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn infeasible_max_margin_is_unbounded_dual() {
        let ds = Dataset::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]], &[1.0, -1.0]).unwrap();
        assert!(matches!(exact_primal(&ds, &LossModel::MaxMargin, Arch::Relu), Err(Error::Infeasible(_))));
        assert!(matches!(exact_dual(&ds), Err(Error::Unbounded)));
    }
}
