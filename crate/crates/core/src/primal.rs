//! Explicit networks that achieve the primal values, and the approximation
//! certificate that ties them to a dual lower bound.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::conic::{solve_min_sum_norms, strict_realization, MinSumNormsProblem};
use crate::dataset::{classify_dataset, ClassTag, Dataset};
use crate::dual::{
    sdp_sub_value, solve_dual_geo, solve_dual_negcorr, solve_dual_ortho_with_primal, BlockDual, DualCertificate,
    Regime, CLASSIFY_TOL,
};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::maxcut::{realize_pattern, sign, GaussianSampler, GATE_MARGIN};
use crate::network::{balanced_columns, evaluate_network, Evaluation, GatedReluNetwork, Network, ReluNetwork};

/// Best polynomial-time factor for negatively correlated data; the relative
/// error is `√(π/2) − 1 ≈ 0.253`.
pub fn gw_factor() -> f64 {
    (PI / 2.0).sqrt()
}

/// Relative error below which approximating the training problem is NP-hard:
/// `√(84/83) − 1 ≈ 0.006`. Only a documented constant; no experiment here
/// can exhibit it.
pub fn hardness_gap() -> f64 {
    (84.0f64 / 83.0).sqrt() - 1.0
}

/// Largest sample count drawn per block unless overridden.
pub const K_CAP: usize = 100_000;
pub const PRIMAL_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct Certificate {
    pub accepted: bool,
    pub p: f64,
    pub lower: f64,
    pub rho: f64,
    pub reason: Option<String>,
}

/// Accept iff `lower ≤ p ≤ lower/ρ·(1 + 1e-8)`.
pub fn certify(p: f64, lower: f64, rho: f64) -> Certificate {
    let reason = if !(p.is_finite() && lower.is_finite()) {
        Some("non-finite value".to_string())
    } else if p < lower {
        Some(format!("p = {p} is below the dual lower bound {lower}"))
    } else if !(rho > 0.0 && rho <= 1.0) {
        Some(format!("ratio {rho} outside (0, 1]"))
    } else if p > lower / rho * (1.0 + 1e-8) {
        Some(format!("p/lower = {} exceeds 1/ρ = {}", p / lower, 1.0 / rho))
    } else {
        None
    };
    Certificate { accepted: reason.is_none(), p, lower, rho, reason }
}

/// Two-neuron network `W₁ = [u₊/√‖u₊‖, u₋/√‖u₋‖]`, `w₂ = (√‖u₊‖, −√‖u₋‖)`;
/// a missing side contributes no neuron.
pub fn build_network_ortho(up: Option<&DVector<f64>>, um: Option<&DVector<f64>>) -> Result<ReluNetwork> {
    let mut us = Vec::new();
    for (u, s) in [(up, 1.0), (um, -1.0)] {
        if let Some(u) = u {
            if u.norm() == 0.0 {
                return Err(Error::ZeroDirection);
            }
            us.push((u.clone(), s));
        }
    }
    let d = match us.first() {
        Some((u, _)) => u.len(),
        None => return Err(Error::ZeroDirection),
    };
    if us.iter().any(|(u, _)| u.len() != d) {
        return Err(Error::DimensionMismatch("u₊ and u₋ lengths differ".into()));
    }
    let (w1, w2, _) = balanced_columns(&us, d);
    Ok(ReluNetwork { w1, w2 })
}

fn ser_network<S: serde::Serializer>(n: &Option<Network>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match n {
        Some(n) => n.to_json().serialize(s),
        None => s.serialize_none(),
    }
}

/// Sampling and realization statistics for one label block.
#[derive(Clone, Debug, Serialize)]
pub struct BlockSampling {
    pub rows: usize,
    /// Samples drawn.
    pub k: usize,
    /// Sample count from the concentration bound before capping.
    pub k_bound: f64,
    pub c1: f64,
    pub c2: f64,
    pub eps0_scaled: f64,
    pub distinct_masks: usize,
    pub fallback_gates: usize,
    /// Gates of this block that still fire on some row of the other block.
    pub cross_gates: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ApproxResult {
    pub regime: Regime,
    pub p: f64,
    pub lower: f64,
    pub factor: f64,
    /// Bound the factor is certified against (`1/ρ`).
    pub ratio_bound: f64,
    pub certificate: Certificate,
    #[serde(serialize_with = "ser_network")]
    pub network: Option<Network>,
    pub evaluation: Option<Evaluation>,
    pub dual: DualCertificate,
    pub seed: u64,
    pub delta: f64,
    pub eps0: f64,
    pub blocks: Vec<BlockSampling>,
    /// Factor the margins were rescaled by after assembly (1 when untouched).
    pub margin_rescale: f64,
}

/// Exact network on orthogonal-separable data.
pub fn solve_primal_ortho(ds: &Dataset, loss: &LossModel, tol: f64) -> Result<ApproxResult> {
    let (dual, up, um) = solve_dual_ortho_with_primal(ds, loss, tol)?;
    let nz = |u: Option<DVector<f64>>| u.filter(|v| v.norm() > 0.0);
    let (up, um) = (nz(up), nz(um));
    let net = if up.is_none() && um.is_none() {
        ReluNetwork { w1: DMatrix::zeros(ds.d(), 0), w2: DVector::zeros(0) }
    } else {
        build_network_ortho(up.as_ref(), um.as_ref())?
    };
    let net = Network::Relu(net);
    let ev = evaluate_network(&net, ds, loss)?;
    let p = ev.objective;
    let lower = dual.objective;
    let certificate = certify(p, lower.min(p), 1.0 / (1.0 + tol));
    Ok(ApproxResult {
        regime: Regime::Ortho,
        p,
        lower,
        factor: p / lower,
        ratio_bound: 1.0,
        certificate,
        network: Some(net),
        evaluation: Some(ev),
        dual,
        seed: 0,
        delta: 0.0,
        eps0: 0.0,
        blocks: vec![],
        margin_rescale: 1.0,
    })
}

#[derive(Clone, Debug)]
pub struct NegcorrConfig {
    pub eps0: f64,
    pub delta: f64,
    pub seed: u64,
    /// Fixed sample count per block, overriding the concentration bound.
    pub k: Option<usize>,
    pub k_cap: usize,
    pub tol: f64,
    /// Ellipsoid accuracy for the dual; `None` picks a relative default.
    pub eps: Option<f64>,
}

impl Default for NegcorrConfig {
    fn default() -> Self {
        NegcorrConfig { eps0: 0.1, delta: 0.05, seed: 0, k: None, k_cap: K_CAP, tol: PRIMAL_TOL, eps: None }
    }
}

/// `k = ⌈ln((n+1)²/δ) / (2ε')²⌉` with `ε' = C₁ε₀/(4C₂)`.
pub fn sample_count(n: usize, c1: f64, c2: f64, eps0: f64, delta: f64) -> (f64, f64) {
    let e = c1 * eps0 / (4.0 * c2);
    let k = (((n as f64 + 1.0).powi(2) / delta).ln() / (2.0 * e * e)).ceil();
    (k, e)
}

struct Gate {
    mask: Vec<bool>,
    h: DVector<f64>,
    fallback: bool,
    cross: bool,
}

/// Draw samples `k₀..k₁` and keep the first draw of each new rounded mask.
fn draw_masks(sampler: &GaussianSampler, k0: usize, k1: usize, seen: &mut BTreeMap<Vec<i8>, u64>) {
    let drawn: Vec<(u64, Vec<i8>)> = (k0 as u64..k1 as u64)
        .into_par_iter()
        .map(|i| {
            let r = sampler.draw(i);
            let z: Vec<i8> = r.iter().map(|&v| sign(v)).collect();
            let last = z[z.len() - 1];
            // the mask only depends on z up to a global sign flip
            (i, z.iter().map(|&v| v * last).collect())
        })
        .collect();
    for (i, key) in drawn {
        seen.entry(key).or_insert(i);
    }
}

fn realize_gates(
    xb: &DMatrix<f64>,
    other: &DMatrix<f64>,
    blk: &BlockDual,
    sampler: &GaussianSampler,
    seen: &BTreeMap<Vec<i8>, u64>,
) -> Result<Vec<Gate>> {
    let mut first: Vec<u64> = seen.values().copied().collect();
    first.sort_unstable();
    let mut gates: BTreeMap<Vec<bool>, Gate> = BTreeMap::new();
    for i in first {
        let r = sampler.draw(i);
        let real = realize_pattern(xb, &blk.lambda, &blk.z, &r)?;
        let mask = real.realized.clone();
        if !mask.iter().any(|&b| b) || gates.contains_key(&mask) {
            continue;
        }
        let mut h = real.w;
        let mut fallback = real.fallback;
        let fires = |h: &DVector<f64>| other.nrows() > 0 && (other * h).iter().any(|&v| v >= 0.0);
        let mut cross = fires(&h);
        if cross {
            // ask for a gate that also stays off on the other block
            let stacked = DMatrix::from_fn(xb.nrows() + other.nrows(), xb.ncols(), |i, j| {
                if i < xb.nrows() {
                    xb[(i, j)]
                } else {
                    other[(i - xb.nrows(), j)]
                }
            });
            let mut full = mask.clone();
            full.extend(std::iter::repeat_n(false, other.nrows()));
            if let Some(w) = strict_realization(&stacked, &full, GATE_MARGIN)? {
                h = w;
                fallback = true;
                cross = fires(&h);
            }
        }
        gates.insert(mask.clone(), Gate { mask, h, fallback, cross });
    }
    Ok(gates.into_values().collect())
}

struct BlockPrimal {
    neurons: Vec<(DVector<f64>, DVector<f64>)>,
    stats: BlockSampling,
}

fn solve_block_primal(
    ds: &Dataset,
    blk: &BlockDual,
    loss: &LossModel,
    cfg: &NegcorrConfig,
    stream: u64,
) -> Result<BlockPrimal> {
    let rows = &blk.rows;
    let nb = rows.len();
    let xb = ds.rows(rows);
    let other_idx: Vec<usize> = (0..ds.n()).filter(|i| !rows.contains(i)).collect();
    let other = ds.rows(&other_idx);
    let c2 = (0..nb).map(|i| xb.row(i).norm_squared()).fold(0.0, f64::max);
    let (_, c1) = sdp_sub_value(&xb, &blk.z, blk.radius.max(1e-300))?;
    let (k_bound, eps_scaled) = sample_count(nb, c1, c2, cfg.eps0, cfg.delta);
    let mut k = match cfg.k {
        Some(k) => k.max(1),
        None if k_bound.is_finite() => (k_bound as usize).clamp(1, cfg.k_cap),
        None => cfg.k_cap,
    };
    let sampler = GaussianSampler::new(&blk.z, cfg.seed.wrapping_mul(2).wrapping_add(stream))?;
    let mut seen = BTreeMap::new();
    let mut drawn = 0;
    let ones = vec![1.0; nb];
    for _attempt in 0..8 {
        draw_masks(&sampler, drawn, k, &mut seen);
        drawn = k;
        let gates = realize_gates(&xb, &other, blk, &sampler, &seen)?;
        if gates.is_empty() {
            k *= 2;
            continue;
        }
        let specs: Vec<(Vec<bool>, f64, bool)> = gates.iter().map(|g| (g.mask.clone(), 1.0, false)).collect();
        let prob = MinSumNormsProblem::from_masks(&xb, &ones, &specs, loss.clone());
        match solve_min_sum_norms(&prob, cfg.tol) {
            Ok(sol) => {
                let neurons: Vec<(DVector<f64>, DVector<f64>)> = gates
                    .iter()
                    .zip(sol.u)
                    .filter(|(_, u)| u.norm() > 0.0)
                    .map(|(g, u)| (g.h.clone(), u))
                    .collect();
                let stats = BlockSampling {
                    rows: nb,
                    k,
                    k_bound,
                    c1,
                    c2,
                    eps0_scaled: eps_scaled,
                    distinct_masks: gates.len(),
                    fallback_gates: gates.iter().filter(|g| g.fallback).count(),
                    cross_gates: gates.iter().filter(|g| g.cross).count(),
                    value: sol.value,
                };
                return Ok(BlockPrimal { neurons, stats });
            }
            // some row is never switched on: draw more
            Err(Error::Infeasible(_)) => k *= 2,
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonConvergence(format!("no covering set of masks after {drawn} samples")))
}

fn empty_block(nb: usize) -> BlockPrimal {
    BlockPrimal {
        neurons: vec![],
        stats: BlockSampling {
            rows: nb,
            k: 0,
            k_bound: 0.0,
            c1: 0.0,
            c2: 0.0,
            eps0_scaled: 0.0,
            distinct_masks: 0,
            fallback_gates: 0,
            cross_gates: 0,
            value: 0.0,
        },
    }
}

/// Gated-ReLU network for negatively correlated data from a dual solution:
/// sample rounded masks per block, realize them as gates, solve the block
/// group-norm programs and stack the neurons with output signs `+` / `−`.
pub fn solve_primal_negcorr_with(
    ds: &Dataset,
    loss: &LossModel,
    cfg: &NegcorrConfig,
    dual: &DualCertificate,
) -> Result<ApproxResult> {
    if !(cfg.eps0 > 0.0 && cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidArgument("need ε₀ > 0 and δ ∈ (0, 1)".into()));
    }
    if dual.blocks.len() != 2 {
        return Err(Error::InvalidArgument("dual certificate carries no block solutions".into()));
    }
    let block = |b: &BlockDual, stream: u64| {
        if b.rows.is_empty() {
            Ok(empty_block(0))
        } else {
            solve_block_primal(ds, b, loss, cfg, stream)
        }
    };
    let (bp, bm) = rayon::join(|| block(&dual.blocks[0], 0), || block(&dual.blocks[1], 1));
    let (bp, bm) = (bp?, bm?);

    let d = ds.d();
    let mut hs = Vec::new();
    let mut us = Vec::new();
    for (b, s) in [(&bp, 1.0), (&bm, -1.0)] {
        for (h, u) in &b.neurons {
            hs.push(h.clone());
            us.push((u.clone(), s));
        }
    }
    let (mut w1, mut w2, keep) = balanced_columns(&us, d);
    let h = DMatrix::from_fn(d, keep.len(), |i, c| hs[keep[c]][i]);
    let mut net = Network::Gated(GatedReluNetwork { h: h.clone(), w1: w1.clone(), w2: w2.clone() });
    let mut ev = evaluate_network(&net, ds, loss)?;
    let mut margin_rescale = 1.0;
    if matches!(loss, LossModel::MaxMargin) && !ev.feasible {
        // cross-block gate activity can eat into the margins; scale back up
        let mmin = ev.margins.iter().copied().fold(f64::INFINITY, f64::min);
        if !(mmin > 0.0) {
            return Err(Error::NonConvergence(format!("assembled network has margin {mmin}")));
        }
        margin_rescale = 1.0 / mmin;
        let f = margin_rescale.sqrt();
        w1 *= f;
        w2 *= f;
        net = Network::Gated(GatedReluNetwork { h, w1, w2 });
        ev = evaluate_network(&net, ds, loss)?;
    }
    let p = ev.objective;
    let lower = dual.objective;
    let c = loss.c_const();
    let ratio_bound = ((1.0 + cfg.eps0) * PI / 2.0).sqrt() / (c * dual.rho);
    Ok(ApproxResult {
        regime: dual.regime,
        p,
        lower,
        factor: p / lower,
        ratio_bound,
        certificate: certify(p, lower, 1.0 / ratio_bound),
        network: Some(net),
        evaluation: Some(ev),
        dual: dual.clone(),
        seed: cfg.seed,
        delta: cfg.delta,
        eps0: cfg.eps0,
        blocks: vec![bp.stats, bm.stats],
        margin_rescale,
    })
}

pub fn solve_primal_negcorr(ds: &Dataset, loss: &LossModel, cfg: &NegcorrConfig) -> Result<ApproxResult> {
    if !classify_dataset(ds, CLASSIFY_TOL).tag.implies(ClassTag::NegativeCorrelation) {
        return Err(Error::WrongRegime("data does not have negative correlation".into()));
    }
    let dual = solve_dual_negcorr(ds, loss, cfg.eps)?;
    solve_primal_negcorr_with(ds, loss, cfg, &dual)
}

/// Value-only answer for general data: `p = U / ((1−c)√(2/π)·C)` with `U` the
/// certified upper bound of the block problems, so `P ≤ p ≤ ((1−c)√(2/π)C)⁻¹·P`
/// up to the ellipsoid accuracy.
pub fn solve_primal_geo(ds: &Dataset, c: f64, loss: &LossModel, eps: Option<f64>) -> Result<ApproxResult> {
    let dual = solve_dual_geo(ds, c, loss, eps)?;
    let p = dual.upper_bound / dual.rho;
    let lower = dual.objective;
    let ratio_bound = 1.0 / dual.rho;
    Ok(ApproxResult {
        regime: Regime::Geo,
        p,
        lower,
        factor: p / lower,
        ratio_bound,
        // the ellipsoid gap U - objective widens the bound the pair is checked against
        certificate: certify(p, lower, dual.rho * lower / dual.upper_bound.max(lower)),
        network: None,
        evaluation: None,
        dual,
        seed: 0,
        delta: 0.0,
        eps0: 0.0,
        blocks: vec![],
        margin_rescale: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::oracle::{exact_primal, Arch};

    fn line() -> Dataset {
        Dataset::from_rows(&[vec![1.0], vec![-1.0]], &[1.0, -1.0]).unwrap()
    }

    #[test]
    fn certify_examples() {
        assert!(certify(2.0, 2.0, 1.0).accepted);
        assert!(!certify(2.6, 2.0, (2.0 / PI).sqrt()).accepted);
        assert!(certify(2.5, 2.0, (2.0 / PI).sqrt()).accepted);
        assert!(!certify(1.9, 2.0, 0.5).accepted);
        assert!((gw_factor() - 1.0 - 0.253).abs() < 1e-3);
        assert!((hardness_gap() - 0.006).abs() < 1e-3);
    }

    #[test]
    fn ortho_networks() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let net = Network::Relu(build_network_ortho(Some(&x), None).unwrap());
        let one = Dataset::from_rows(&[vec![1.0, 0.0]], &[1.0]).unwrap();
        let e = evaluate_network(&net, &one, &LossModel::MaxMargin).unwrap();
        assert_eq!(net.width(), 1);
        assert!((e.weight_decay - 1.0).abs() < 1e-15 && (e.margins[0] - 1.0).abs() < 1e-15);
        let net = Network::Relu(
            build_network_ortho(Some(&DVector::from_vec(vec![1.0])), Some(&DVector::from_vec(vec![-1.0]))).unwrap(),
        );
        let e = evaluate_network(&net, &line(), &LossModel::MaxMargin).unwrap();
        assert_eq!(e.weight_decay, 2.0);
        assert_eq!(e.margins, vec![1.0, 1.0]);
        assert!(matches!(build_network_ortho(Some(&DVector::zeros(2)), None), Err(Error::ZeroDirection)));
    }

    #[test]
    fn ortho_pipeline_matches_oracle() {
        for seed in 0..4 {
            let ds = generate_synthetic(ClassTag::OrthogonalSeparable, 7, 3, seed).unwrap();
            let r = solve_primal_ortho(&ds, &LossModel::MaxMargin, 1e-10).unwrap();
            assert!(r.evaluation.as_ref().unwrap().feasible);
            assert!((r.p - r.lower).abs() <= 1e-6 * (1.0 + r.lower));
            let ex = exact_primal(&ds, &LossModel::MaxMargin, Arch::Relu).unwrap();
            assert!((r.p - ex.p).abs() <= 1e-6 * (1.0 + ex.p), "{} vs {}", r.p, ex.p);
            assert!(r.certificate.accepted);
        }
    }

    #[test]
    fn negcorr_on_the_line() {
        let r = solve_primal_negcorr(&line(), &LossModel::MaxMargin, &NegcorrConfig::default()).unwrap();
        assert!((r.p - 2.0).abs() < 1e-6, "{}", r.p);
        assert!(r.evaluation.as_ref().unwrap().feasible);
        assert!(r.certificate.accepted);
    }

    #[test]
    fn negcorr_hinge_large_beta_gives_zero_network() {
        let r = solve_primal_negcorr(&line(), &LossModel::Hinge { beta: 5.0 }, &NegcorrConfig::default()).unwrap();
        assert!((r.p - 2.0).abs() < 1e-6, "{}", r.p);
        assert!(r.network.as_ref().unwrap().weight_decay() < 1e-6);
    }

    #[test]
    fn negcorr_sandwich() {
        let cfg = NegcorrConfig { k: Some(4000), ..NegcorrConfig::default() };
        for seed in 0..3 {
            let ds = generate_synthetic(ClassTag::NegativeCorrelation, 8, 3, seed).unwrap();
            let r = solve_primal_negcorr(&ds, &LossModel::MaxMargin, &cfg).unwrap();
            let ev = r.evaluation.as_ref().unwrap();
            assert!(ev.feasible);
            let net = r.network.as_ref().unwrap();
            assert!((evaluate_network(net, &ds, &LossModel::MaxMargin).unwrap().objective - r.p).abs() < 1e-12);
            let ex = exact_primal(&ds, &LossModel::MaxMargin, Arch::Relu).unwrap();
            assert!(r.lower <= ex.p * (1.0 + 1e-8));
            assert!(r.p >= ex.p * (1.0 - 1e-6), "{} < {}", r.p, ex.p);
            assert!(r.p <= ((1.1) * PI / 2.0).sqrt() * ex.p, "{} vs {}", r.p, ex.p);
        }
    }

    #[test]
    fn sample_count_formula() {
        let (k, e) = sample_count(3, 1.0, 1.0, 0.4, 0.5);
        assert!((e - 0.1).abs() < 1e-15);
        assert_eq!(k, (32f64.ln() / 0.02).ceil());
    }
}
