mod common;

use common::*;
use sepmetric::expr::Interval;
use sepmetric::optim::{is_negdef, strict_positive_lp, Matrix, MetzlerMatrix};
use sepmetric::positive_lti::{certify_positive_lti, diagonal_lmi};
use sepmetric::separable_metric::certify_network;
use sepmetric::simulator::{
    check_order_preservation, measure_contraction, measure_contraction_from, virtual_system_certify,
    FactoredSystem, IntegratorOptions, SimError,
};

fn factored(entries: &[&[&str]], r: f64) -> FactoredSystem {
    let rows: Vec<Vec<String>> = entries.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
    let n = rows.len();
    FactoredSystem::parse(&rows, vec![Interval::new(-r, r).unwrap(); n], (0.0, 5.0)).unwrap()
}

#[test]
fn scalar_decay_is_measured_exactly() {
    let m = model(&[("-x", -1.0, 1.0)], Matrix::zeros(1, 1), None, (0.0, 10.0));
    let cert = certify_network(&m, None).unwrap();
    assert_eq!(cert.rate, 1.0);
    let opts = IntegratorOptions::for_model(&m).with_step(0.01);
    let r = measure_contraction(&m, &cert, 5, 1, &opts).unwrap();
    assert!(r.rates.iter().all(|v| (v - 1.0).abs() < 1e-3), "{:?}", r.rates);
    assert!(r.pass);
}

#[test]
fn cubic_pair_decays_at_least_at_the_certified_rate() {
    let (_, m) = corpus().into_iter().find(|(n, _)| *n == "cubic_pair").unwrap();
    let cert = certify_network(&m, None).unwrap();
    let opts = IntegratorOptions::for_model(&m).with_step(0.01).with_horizon(0.0, 20.0);
    let r = measure_contraction(&m, &cert, 10, 2, &opts).unwrap();
    assert!(r.worst_rate >= 0.5 * (1.0 - 1e-6), "{}", r.worst_rate);
}

#[test]
fn identical_starts_are_skipped() {
    let (_, m) = corpus().into_iter().find(|(n, _)| *n == "cubic_pair").unwrap();
    let cert = certify_network(&m, None).unwrap();
    let opts = IntegratorOptions::for_model(&m).with_step(0.01);
    let starts = vec![(vec![0.3, 0.3], vec![0.3, 0.3]), (vec![1.0, 0.0], vec![0.0, 1.0])];
    let r = measure_contraction_from(&m, &cert, &starts, &opts).unwrap();
    assert_eq!(r.skipped, 1);
    assert_eq!(r.rates.len(), 1);
}

#[test]
fn positive_linear_pairs_stay_ordered() {
    let k = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.5, 0.0]]).unwrap();
    let m = model(&[("-2*x", -1.0, 1.0), ("-1.5*x", -1.0, 1.0)], k, None, (0.0, 5.0));
    let r = check_order_preservation(&m, 50, 3, &IntegratorOptions::for_model(&m).with_step(0.01)).unwrap();
    assert!(r.max_violation <= 1e-7);

    let flipped = with_entry(&m, 0, 1, -1.5);
    let r = check_order_preservation(&flipped, 50, 3, &IntegratorOptions::for_model(&flipped).with_step(0.01))
        .unwrap();
    assert!(r.max_violation > 1e-3);
}

#[test]
fn virtual_system_examples() {
    let opts = IntegratorOptions { step: 1e-3, t0: 0.0, tf: 5.0 };

    let fs = factored(&[&["-1", "x1^2/(1 + x1^2)"], &["0.1", "-1"]], 2.0);
    let r = virtual_system_certify(&fs, 10, 4, &opts).unwrap();
    assert!(r.all_verified);
    assert!(r.max_reproduction_error <= 1e-8);

    let fs = factored(&[&["-1", "0"], &["0", "-1"]], 1.0);
    let r = virtual_system_certify(&fs, 3, 5, &opts).unwrap();
    for s in &r.samples {
        assert!(s.weights.iter().all(|w| (w - 1.0).abs() < 1e-12), "{:?}", s.weights);
        assert!(s.reproduction_error <= 1e-12);
    }

    let fs = factored(&[&["-1", "-1"], &["0", "-1"]], 1.0);
    assert!(matches!(
        virtual_system_certify(&fs, 1, 6, &opts),
        Err(SimError::PositivityViolation { row: 1, col: 2, .. })
    ));
}

/// Weights from the two LPs used as `d = p∘v` instead of `d = p∘(1/v)` are
/// not a certificate for this matrix.
#[test]
fn diagonal_weights_combine_sum_and_max_vectors() {
    let a = Matrix::from_rows(&[vec![-1.0, 10.0], vec![0.05, -1.0]]).unwrap();
    let cert = certify_positive_lti(&MetzlerMatrix::new(a.clone()).unwrap()).unwrap();
    assert!(is_negdef(&diagonal_lmi(&a, &cert.d, 0.0), 0.0).unwrap());

    let p = strict_positive_lp(&a).unwrap().weights().unwrap().p.clone();
    let v = strict_positive_lp(&a.transpose()).unwrap().weights().unwrap().p.clone();
    let literal: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a * b).collect();
    assert!(!is_negdef(&diagonal_lmi(&a, &literal, 0.0), 0.0).unwrap());
}
