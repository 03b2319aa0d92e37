use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dcprox::{
    bfgs_metric, make_pair, prox_l1, solve_subproblem, InnerConfig, InnerStatus, MetricConfig,
    ProblemInstance, ProxSubproblem, Regularizer,
};

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_l1_is_nonexpansive(a in vec_strategy(12), b in vec_strategy(12), t in 0.0f64..3.0) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let pa = prox_l1(&a, t).unwrap();
        let pb = prox_l1(&b, t).unwrap();
        prop_assert!((&pa - &pb).norm() <= (&a - &b).norm() * (1.0 + 1e-12));
    }

    #[test]
    fn penalties_match_their_dc_split(x in vec_strategy(10), lambda in 0.0f64..2.0, eps in 0.05f64..2.0) {
        let x = DVector::from_vec(x);
        for reg in [Regularizer::l1_minus_l2(lambda).unwrap(), Regularizer::log_sum(lambda, eps).unwrap()] {
            let h = reg.h_oracle(&x);
            prop_assert!(h.h2 >= -1e-12);
            let pen = reg.penalty(&x);
            prop_assert!((h.h1 - h.h2 - pen).abs() <= 1e-9 * (1.0 + h.h1.abs()));
        }
    }

    #[test]
    fn metric_secant_holds_for_any_pair(x0 in vec_strategy(8), x1 in vec_strategy(8), g0 in vec_strategy(8), g1 in vec_strategy(8)) {
        let cfg = MetricConfig::default();
        let (x0, x1, g0, g1) = (DVector::from_vec(x0), DVector::from_vec(x1), DVector::from_vec(g0), DVector::from_vec(g1));
        if let Some(pair) = make_pair(&x0, &x1, &g0, &g1, &cfg) {
            prop_assert!(pair.sz >= cfg.nu_tilde * pair.ss * (1.0 - 1e-12));
            let m = bfgs_metric(pair, &cfg);
            let bs = m.apply_b(&m.pair.s);
            let gz = &m.pair.z * m.gamma;
            prop_assert!((bs - &gz).norm() <= 1e-8 * gz.norm().max(1.0));
            prop_assert!(m.b_quad(&m.pair.s) > 0.0);
        }
    }

    #[test]
    fn scaled_prox_root_satisfies_optimality(
        s in vec_strategy(6), c in prop::collection::vec(0.1f64..3.0, 6),
        xbar in vec_strategy(6), level in 0.0f64..2.0,
    ) {
        // Curvature from a positive diagonal Hessian.
        let cfg = MetricConfig::default();
        let s = DVector::from_vec(s);
        prop_assume!(s.norm() > 1e-3);
        let hess = DMatrix::from_diagonal(&DVector::from_vec(c));
        let g1 = &hess * &s;
        let m = bfgs_metric(make_pair(&DVector::zeros(6), &s, &DVector::zeros(6), &g1, &cfg).unwrap(), &cfg);
        let sub = ProxSubproblem::from_metric(DVector::from_vec(xbar), &m, level).unwrap();
        let inner = InnerConfig { theta: 1.0, max_newton: 200, ..InnerConfig::default() };
        let res = solve_subproblem(&sub, &DVector::zeros(6), &m, &inner);
        prop_assert_eq!(res.status, InnerStatus::InexactSatisfied);
        // B(x̄ − x⁺) must lie in level·∂‖x⁺‖₁.
        let g = m.apply_b(&(&sub.xbar - &res.x_plus));
        for i in 0..6 {
            if res.x_plus[i] != 0.0 {
                prop_assert!((g[i] - level * res.x_plus[i].signum()).abs() <= 1e-8);
            } else {
                prop_assert!(g[i].abs() <= level + 1e-8);
            }
        }
        prop_assert!(sub.ell(&res.alpha).norm() <= 1e-8 * (1.0 + res.alpha.norm()));
    }

    #[test]
    fn instance_bytes_round_trip(m in 1usize..6, n in 1usize..8, seed in any::<u64>()) {
        let p = 1 + (seed as usize) % n;
        let inst = dcprox::generate_instance(m, n, p, 0.01, seed).unwrap();
        let bytes = inst.to_bytes();
        prop_assert_eq!(bytes.len(), ProblemInstance::encoded_len(m, n));
        let back = ProblemInstance::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.digest(), inst.digest());
    }
}
