mod common;

use nalgebra::SymmetricEigen;
use proptest::prelude::*;
use rand::Rng;

use common::*;
use sepmetric::controller::{
    build_coordinates, min_norm_feedback, simulate_closed_loop, ClfEvaluation, Target,
};
use sepmetric::expr::{Expr, Interval};
use sepmetric::model::Coupling;
use sepmetric::optim::{is_negdef, strict_positive_lp, sym_eigs, LpOutcome, Matrix, MetzlerMatrix};
use sepmetric::positive_lti::{certify_positive_lti, diagonal_lmi};
use sepmetric::separable_metric::{certify_network, pointwise_lmi_audit};
use sepmetric::simulator::IntegratorOptions;
use sepmetric::small_gain::{compose, GainMatrix};
use sepmetric::sprocedure::{
    certify_uncertain, certify_uncertain_matrix, lmi_block, SProcOutcome, UncertainCoupling,
};

fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("t".to_string()),
        (0.1f64..3.0).prop_map(|c| format!("{c:.3}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} * {b}")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{a} / (1 + ({b})^2)")),
            (inner.clone(), 1i32..=4).prop_map(|(a, k)| format!("({a})^{k}")),
            inner.clone().prop_map(|a| format!("-({a})")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.clone().prop_map(|a| format!("exp(tanh({a}))")),
            inner.prop_map(|a| format!("log(1 + ({a})^2)")),
        ]
    })
}

fn metzler_strategy(max_n: usize) -> impl Strategy<Value = (Matrix, bool)> {
    (any::<u64>(), 1..=max_n, any::<bool>())
        .prop_map(|(seed, n, h)| (random_metzler(&mut rng(seed), n, h), h))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn interval_evaluation_encloses_point_values(
        src in expr_source(),
        lo in -3.0f64..3.0,
        width in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let e = Expr::parse(&src).unwrap();
        let xb = Interval::new(lo, lo + width).unwrap();
        let tb = Interval::new(0.0, 1.0).unwrap();
        let Ok(iv) = e.eval_interval(xb, tb) else { return Ok(()) };
        let mut r = rng(seed);
        for _ in 0..100 {
            let x = r.random_range(xb.lo..=xb.hi);
            let t = r.random_range(0.0..=1.0);
            if let Ok(v) = e.eval(x, t) {
                prop_assert!(iv.lo <= v && v <= iv.hi, "{src}: {v} at ({x},{t}) outside [{}, {}]", iv.lo, iv.hi);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn derivative_matches_central_difference(
        src in expr_source(),
        x in -2.0f64..2.0,
        t in 0.0f64..1.0,
    ) {
        let e = Expr::parse(&src).unwrap();
        let h = 1e-6;
        let (Ok(fp), Ok(fm), Ok(d)) = (e.eval(x + h, t), e.eval(x - h, t), e.diff_x().eval(x, t)) else {
            return Ok(());
        };
        prop_assume!(fp.abs().max(fm.abs()) < 1e3);
        let fd = (fp - fm) / (2.0 * h);
        prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{src}: {d} vs {fd}");
    }

    #[test]
    fn printing_round_trips(src in expr_source(), x in -3.0f64..3.0, t in 0.0f64..2.0) {
        let e = Expr::parse(&src).unwrap();
        let printed = e.to_string();
        let back = Expr::parse(&printed).unwrap();
        prop_assert_eq!(back.to_string(), printed.clone());
        match (e.eval(x, t), back.eval(x, t)) {
            (Ok(a), Ok(b)) => prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{printed}: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{printed}: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn jacobians_are_dominated(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=6);
        let m = random_nonlinear(&mut r, n);
        let bound = m.sup_jacobian_bound().unwrap();
        for _ in 0..100 {
            let (x, t) = m.sample_point(&mut r);
            let j = m.jacobian_at(&x, t).unwrap().matrix;
            for i in 0..n {
                for k in 0..n {
                    prop_assert!(j[(i, k)] <= bound.matrix()[(i, k)]);
                }
            }
        }
    }

    #[test]
    fn monotone_models_have_metzler_bounds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=6);
        let base = random_nonlinear(&mut r, n);
        let k = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { r.random_range(-0.3..1.0) });
        let m = base.with_coupling(Coupling::Constant(k)).unwrap();
        if m.check_monotone().is_monotone {
            let a = m.sup_jacobian_bound().unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert!(i == j || a.matrix()[(i, j)] >= 0.0);
                }
            }
        } else {
            prop_assert!(m.sup_jacobian_bound().is_err());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn lp_is_sound_and_complete((a, hurwitz) in metzler_strategy(8)) {
        match strict_positive_lp(&a).unwrap() {
            LpOutcome::Feasible(w) => {
                prop_assert!(hurwitz, "feasible on abscissa {}", abscissa(&a));
                prop_assert!(w.p.iter().all(|v| *v > 0.0));
                prop_assert!(a.tr_matvec(&w.p).iter().all(|v| *v < 0.0));
            }
            LpOutcome::Infeasible { .. } => prop_assert!(!hurwitz, "infeasible on abscissa {}", abscissa(&a)),
        }
    }

    #[test]
    fn jacobi_agrees_with_reference(seed in any::<u64>(), n in 1usize..=12) {
        let mut r = rng(seed);
        let mut s = Matrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        s = s.symmetrized();
        let eig = sym_eigs(&s).unwrap();
        prop_assert!(eig.off_norm < 1e-12, "off-diagonal norm {}", eig.off_norm);
        prop_assert!(eig.residual <= 1e-8 * s.frobenius().max(1.0));
        let mut reference: Vec<f64> = SymmetricEigen::new(to_na(&s)).eigenvalues.iter().copied().collect();
        reference.sort_by(f64::total_cmp);
        for (a, b) in eig.eigenvalues.iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn positive_certificates_hold(a in metzler_strategy(10).prop_filter("hurwitz", |(_, h)| *h).prop_map(|(a, _)| a)) {
        let cert = certify_positive_lti(&MetzlerMatrix::new(a.clone()).unwrap()).unwrap();
        for ((d, p), q) in cert.d.iter().zip(&cert.p).zip(&cert.q) {
            prop_assert_eq!(*d, p * q);
        }
        prop_assert!(a.tr_matvec(&cert.p).iter().all(|v| *v < 0.0));
        prop_assert!(a.matvec(&cert.v).iter().all(|v| *v < 0.0));
        let dmax = cert.d.iter().copied().fold(0.0, f64::max);
        let d: Vec<f64> = cert.d.iter().map(|v| v / dmax).collect();
        prop_assert!(sym_max(&diagonal_lmi(&a, &d, cert.decay)) <= 1e-9);
        prop_assert!(is_negdef(&diagonal_lmi(&a, &cert.d, 0.0), 0.0).unwrap());
    }

    #[test]
    fn decay_scales_with_the_matrix(
        a in metzler_strategy(8).prop_filter("hurwitz", |(_, h)| *h).prop_map(|(a, _)| a),
        c in 0.1f64..10.0,
    ) {
        let base = certify_positive_lti(&MetzlerMatrix::new(a.clone()).unwrap()).unwrap();
        let scaled = certify_positive_lti(&MetzlerMatrix::new(a.scale(c)).unwrap()).unwrap();
        prop_assert!((scaled.decay - c * base.decay).abs() <= 1e-6 * c, "{} vs {}", scaled.decay, c * base.decay);
    }

    #[test]
    fn composite_weights_hold(a in metzler_strategy(8).prop_filter("hurwitz", |(_, h)| *h).prop_map(|(a, _)| a)) {
        let h = GainMatrix::new(a.clone()).unwrap();
        let w = compose(&h).unwrap();
        prop_assert!(w.holds_for(&h));
        prop_assert!(w.p.iter().chain(&w.q).chain(&w.v).all(|v| *v > 0.0));
        prop_assert!(a.tr_matvec(&w.p).iter().all(|v| *v < 0.0));
        prop_assert!(a.matvec(&w.v).iter().all(|v| *v < 0.0));
        let vmax = w.v.iter().copied().fold(0.0, f64::max);
        for (q, v) in w.q.iter().zip(&w.v) {
            prop_assert!((q * v - vmax).abs() <= 1e-12 * vmax);
        }
    }

    #[test]
    fn smaller_gain_bound_keeps_the_certificate(
        seed in any::<u64>(),
        shrink in 0.0f64..1.0,
    ) {
        let mut r = rng(seed);
        let n = r.random_range(1..=5);
        let a = random_metzler(&mut r, n, true);
        let h = Matrix::from_fn(n, n, |_, _| r.random_range(0.0..1.0));
        let psi = r.random_range(0.0..1.0) * -abscissa(&a) / h.frobenius().max(1e-12);
        let u = UncertainCoupling::new(h, psi).unwrap();
        let out = certify_uncertain_matrix(&MetzlerMatrix::new(a.clone()).unwrap(), &u, 0.0).unwrap();
        let SProcOutcome::Certified(cert) = out else { return Ok(()) };
        prop_assume!(cert.psi > 0.0);
        let block = lmi_block(&a, &u.with_psi(psi * shrink).unwrap(), &cert.d, cert.theta, cert.rate);
        prop_assert!(is_negdef(&block, 0.0).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn network_certificates_pass_the_audit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=6);
        let m = random_nonlinear(&mut r, n);
        if let Ok(cert) = certify_network(&m, None) {
            prop_assert!(cert.verify().unwrap());
            let audit = pointwise_lmi_audit(&m, &cert, 10_000, seed).unwrap();
            prop_assert!(audit.max_eig <= 1e-9, "max_eig {}", audit.max_eig);
        }
    }

    #[test]
    fn enlarging_boxes_never_raises_the_rate(seed in any::<u64>(), grow in 0.0f64..2.0) {
        let mut r = rng(seed);
        let n = r.random_range(2..=5);
        let gs: Vec<String> = (0..n)
            .map(|_| format!("-{}*x - {}*x^3", r.random_range(0.2..2.0), r.random_range(0.0..1.0)))
            .collect();
        let boxes: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let lo = r.random_range(0.0..1.5);
                (lo, lo + r.random_range(0.1..1.0))
            })
            .collect();
        let nodes: Vec<(&str, f64, f64)> = gs.iter().zip(&boxes).map(|(g, (lo, hi))| (g.as_str(), *lo, *hi)).collect();
        let k = Matrix::from_fn(n, n, |i, j| if i != j { r.random_range(0.0..0.5) } else { 0.0 });
        let small = model(&nodes, k, None, (0.0, 1.0));
        let wider: Vec<Interval> = small
            .domains()
            .iter()
            .map(|d| Interval::new(d.lo - grow * r.random::<f64>(), d.hi + grow * r.random::<f64>()).unwrap())
            .collect();
        let large = small.with_domains(&wider).unwrap();
        match (certify_network(&small, None), certify_network(&large, None)) {
            (Ok(a), Ok(b)) => prop_assert!(b.rate <= a.rate * (1.0 + 1e-9), "{} > {}", b.rate, a.rate),
            (Err(_), Ok(b)) => prop_assert!(false, "larger box certified at {}", b.rate),
            _ => {}
        }
    }

    #[test]
    fn stronger_coupling_never_raises_the_rate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=6);
        let m = random_nonlinear(&mut r, n);
        let rates: Vec<Option<f64>> = [0.0, 0.5, 1.0, 2.0]
            .iter()
            .map(|s| certify_network(&m.scale_off_diagonal(*s).unwrap(), None).ok().map(|c| c.rate))
            .collect();
        for w in rates.windows(2) {
            match (w[0], w[1]) {
                (Some(a), Some(b)) => prop_assert!(b <= a * (1.0 + 1e-9), "{rates:?}"),
                (None, Some(_)) => prop_assert!(false, "{rates:?}"),
                _ => {}
            }
        }
    }

    #[test]
    fn zero_gain_bound_matches_the_plain_certificate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=6);
        let m = random_nonlinear(&mut r, n);
        let u = UncertainCoupling::new(Matrix::identity(n), 0.0).unwrap();
        let robust = matches!(certify_uncertain(&m, &u, 0.0).unwrap(), SProcOutcome::Certified(_));
        prop_assert_eq!(robust, certify_network(&m, None).is_ok());
    }

    #[test]
    fn metric_coordinates_are_isometric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=6);
        let m = random_nonlinear(&mut r, n).scale_off_diagonal(0.2).unwrap();
        let cert = certify_network(&m, None).unwrap();
        let cc = build_coordinates(&cert).unwrap();
        let (x, _) = m.sample_point(&mut r);
        let delta: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let expected: f64 = cert.weights.iter().zip(&delta).map(|(w, d)| w * d * d).sum();
        prop_assert!((cc.distance_sq(&y, &x) - expected).abs() <= 1e-10 * (1.0 + expected));
    }

    #[test]
    fn min_norm_input_is_the_smallest_admissible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dim = r.random_range(1..=4);
        let e = ClfEvaluation {
            v: r.random_range(0.0..4.0),
            a: r.random_range(-2.0..4.0),
            b: (0..dim).map(|_| r.random_range(-2.0..2.0)).collect(),
            required_decay: r.random_range(0.0..2.0),
            ustar: (0..dim).map(|_| r.random_range(-1.0..1.0)).collect(),
            outside_domain: false,
        };
        let u = min_norm_feedback(&e).unwrap();
        let du: Vec<f64> = u.iter().zip(&e.ustar).map(|(a, b)| a - b).collect();
        let slack = |s: f64| e.a + e.required_decay + s * e.b.iter().zip(&du).map(|(b, d)| b * d).sum::<f64>();
        let excess = e.a + e.required_decay;
        prop_assert!(slack(1.0) <= 1e-12 * (1.0 + excess.abs()));
        if excess <= 0.0 {
            prop_assert!(du.iter().all(|d| *d == 0.0));
        } else {
            let bn = e.b.iter().map(|b| b * b).sum::<f64>().sqrt();
            let dn = du.iter().map(|d| d * d).sum::<f64>().sqrt();
            let cos = -e.b.iter().zip(&du).map(|(b, d)| b * d).sum::<f64>() / (bn * dn);
            prop_assert!((cos - 1.0).abs() < 1e-12);
            for k in 0..1000 {
                prop_assert!(slack(k as f64 / 1000.0) > 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn closed_loop_respects_the_decay_bound(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=5);
        let base = random_nonlinear(&mut r, n);
        let Ok(cert) = certify_network(&base, None) else { return Ok(()) };
        let b = Matrix::from_diag(&(0..n).map(|_| r.random_range(1.0..3.0)).collect::<Vec<_>>());
        let m = base.with_input_matrix(Some(b)).unwrap();
        let cc = build_coordinates(&cert).unwrap().with_rate(cert.rate + r.random_range(0.0..1.0));
        let (x0, _) = m.sample_point(&mut r);
        let opts = IntegratorOptions::for_model(&m).with_horizon(0.0, 2.0).with_step(0.005);
        let target = Target::constant(vec![0.0; n], vec![0.0; n]);
        let cl = simulate_closed_loop(&m, &cc, &target, &x0, &opts).unwrap();
        prop_assert!(cl.worst_bound_ratio <= 1.01, "ratio {}", cl.worst_bound_ratio);
    }
}
