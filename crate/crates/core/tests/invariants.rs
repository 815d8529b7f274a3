use nalgebra::DVector;
use proptest::prelude::*;
use relu_maxcut::dataset::{classify_dataset, generate_synthetic, ClassTag};
use relu_maxcut::geometry::dual_constraint_maximin;
use relu_maxcut::loss::LossModel;
use relu_maxcut::network::{evaluate_network, Network};
use relu_maxcut::oracle::{enumerate_patterns, exact_dual, exact_primal_with, pattern_constraint_value, Arch};
use relu_maxcut::primal::{solve_primal_negcorr, solve_primal_ortho, NegcorrConfig};

fn kind(i: u8) -> ClassTag {
    match i % 3 {
        0 => ClassTag::OrthogonalSeparable,
        1 => ClassTag::NegativeCorrelation,
        _ => ClassTag::General,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_duality_and_relaxation(k in 0u8..3, n in 2usize..8, d in 1usize..4, seed in 0u64..10_000) {
        let ds = generate_synthetic(kind(k), n, d, seed);
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        let ps = enumerate_patterns(&ds.x, 10_000).unwrap();
        let relu = exact_primal_with(&ds, &LossModel::MaxMargin, Arch::Relu, &ps);
        let gated = exact_primal_with(&ds, &LossModel::MaxMargin, Arch::GatedRelu, &ps);
        prop_assume!(relu.is_ok() && gated.is_ok());
        let (relu, gated) = (relu.unwrap(), gated.unwrap());
        prop_assert!(relu.p >= gated.p - 1e-9 * (1.0 + gated.p), "relu {} < gated {}", relu.p, gated.p);
        let dual = exact_dual(&ds).unwrap();
        prop_assert!((dual.d - relu.p).abs() <= 1e-6 * (1.0 + relu.p), "D {} vs P {}", dual.d, relu.p);
    }

    #[test]
    fn maximin_matches_pattern_value(n in 1usize..7, d in 1usize..4, seed in 0u64..10_000, raw in prop::collection::vec(0.05f64..2.0, 7)) {
        let ds = generate_synthetic(ClassTag::General, n, d, seed);
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        let lambda: Vec<f64> = (0..n).map(|i| raw[i] * ds.y[i]).collect();
        let ps = enumerate_patterns(&ds.x, 10_000).unwrap();
        let a = dual_constraint_maximin(&ds, &lambda).unwrap().value();
        let b = pattern_constraint_value(&ds, &ps, &lambda).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * (1.0 + a), "maximin {a} vs patterns {b}");
    }

    #[test]
    fn ortho_network_reaches_oracle(n in 2usize..8, d in 1usize..4, seed in 0u64..10_000) {
        let ds = generate_synthetic(ClassTag::OrthogonalSeparable, n, d, seed);
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        let r = solve_primal_ortho(&ds, &LossModel::MaxMargin, 1e-10).unwrap();
        let net = r.network.as_ref().unwrap();
        let ev = evaluate_network(net, &ds, &LossModel::MaxMargin).unwrap();
        prop_assert!(ev.feasible);
        prop_assert!((ev.objective - r.p).abs() <= 1e-9 * (1.0 + r.p));
        let ps = enumerate_patterns(&ds.x, 10_000).unwrap();
        let ex = exact_primal_with(&ds, &LossModel::MaxMargin, Arch::Relu, &ps).unwrap();
        prop_assert!((r.p - ex.p).abs() <= 1e-6 * (1.0 + ex.p), "p {} vs P {}", r.p, ex.p);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn negcorr_network_achieves_p(n in 2usize..9, d in 1usize..4, seed in 0u64..10_000) {
        let ds = generate_synthetic(ClassTag::NegativeCorrelation, n, d, seed);
        prop_assume!(ds.is_ok());
        let ds = ds.unwrap();
        prop_assume!(classify_dataset(&ds, 1e-12).tag.implies(ClassTag::NegativeCorrelation));
        let cfg = NegcorrConfig { seed, k: Some(500), ..NegcorrConfig::default() };
        let r = solve_primal_negcorr(&ds, &LossModel::MaxMargin, &cfg).unwrap();
        prop_assert!(r.lower <= r.p * (1.0 + 1e-9));
        let net = r.network.as_ref().unwrap();
        let ev = evaluate_network(net, &ds, &LossModel::MaxMargin).unwrap();
        prop_assert!((ev.objective - r.p).abs() <= 1e-9 * (1.0 + r.p));
        prop_assert!(ev.feasible);
        // positive-output gates stay off on the negative rows
        if let Network::Gated(g) = net {
            if r.blocks[0].cross_gates == 0 {
                for c in 0..g.h.ncols() {
                    if g.w2[c] <= 0.0 {
                        continue;
                    }
                    let h: DVector<f64> = g.h.column(c).into_owned();
                    for i in (0..ds.n()).filter(|&i| ds.y[i] < 0.0) {
                        let v = ds.x.row(i).transpose().dot(&h);
                        prop_assert!(v <= 1e-9 * h.norm() * ds.x.row(i).norm(), "row {i} gate {c}: {v}");
                    }
                }
            }
        }
    }
}
