#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use kron_noma::fixtures;
use kron_noma::general::{detect_general, GeneralDetector};
use kron_noma::patterns::{expand, BinaryMatrix, KroneckerPattern};
use kron_noma::rect::{detect_rect, index_map, Constellation, RectDetector};
use kron_noma::square::{detect_square, overall_gain, SingletonSystem};
use kron_noma::Gain;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn c(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

fn bpsk_vector(k: usize, bits: u64) -> Vec<i64> {
    (0..k).map(|u| if bits >> u & 1 == 1 { 1 } else { -1 }).collect()
}

fn bpsk_index(v: i64) -> usize {
    usize::from(v > 0)
}

/// Every input whose noiseless image equals `y`, found by scanning all of BPSK^K.
fn direct_preimages(g: &BinaryMatrix, y: &[i64]) -> Vec<Vec<i64>> {
    let k = g.cols();
    (0u64..1 << k)
        .map(|b| bpsk_vector(k, b))
        .filter(|x| g.mul_vec(x) == y)
        .collect()
}

#[test]
fn square_detection_is_exact_on_every_bpsk_input() {
    let designs = fixtures::p3_p4_designs();
    let g = expand(&fixtures::p3_p4_pattern()).unwrap();
    for bits in 0u64..1 << 12 {
        let x = bpsk_vector(12, bits);
        let y = g.mul_vec(&x);
        let s: SingletonSystem<i64> = detect_square(&y, &designs).unwrap();
        for i in 0..12 {
            assert_eq!(s.values[i], s.scales[i] * x[i], "user {} input {bits:#x}", i + 1);
        }
        assert_eq!(s.ops.adds, 60);
    }
}

#[test]
fn singleton_noise_factors_are_exact() {
    // the detector is linear, so feeding unit impulses yields its matrix
    let designs = fixtures::p3_p4_designs();
    let cols: Vec<SingletonSystem<i64>> = (0..12)
        .map(|j| {
            let mut e = vec![0i64; 12];
            e[j] = 1;
            detect_square(&e, &designs).unwrap()
        })
        .collect();
    let probe = &cols[0];
    for i in 0..12 {
        let energy: i64 = cols.iter().map(|s| s.values[i] * s.values[i]).sum();
        assert_eq!(energy, probe.noise_factors[i], "user {}", i + 1);
        assert_eq!(
            probe.gain(i),
            overall_gain(i + 1, &designs).unwrap(),
            "user {}",
            i + 1
        );
    }
    let high: Vec<i64> = (0..12)
        .filter(|&i| probe.gain(i) == Gain::new(16, 9))
        .map(|i| probe.noise_factors[i])
        .collect();
    assert_eq!(high, vec![9; 9]);
}

#[test]
fn singleton_noise_matches_monte_carlo() {
    let designs = fixtures::p3_p4_designs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 40_000;
    let sigma = 0.7f64;
    let mut sum2 = [0.0f64; 12];
    let mut cross = 0.0f64;
    let mut nf = vec![0i64; 12];
    for _ in 0..n {
        let y: Vec<f64> = (0..12)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let s = detect_square(&y, &designs).unwrap();
        for i in 0..12 {
            sum2[i] += s.values[i] * s.values[i];
        }
        cross += s.values[0] * s.values[1];
        nf = s.noise_factors;
    }
    for i in 0..12 {
        let want = nf[i] as f64 * sigma * sigma;
        let got = sum2[i] / n as f64;
        // variance of a sample variance is 2σ⁴/n
        assert!(
            (got - want).abs() < 5.0 * want * (2.0 / n as f64).sqrt(),
            "user {}: {got} vs {want}",
            i + 1
        );
    }
    // exact covariance of users 1 and 2 from the impulse responses
    let imp: Vec<SingletonSystem<i64>> = (0..12)
        .map(|j| {
            let mut e = vec![0i64; 12];
            e[j] = 1;
            detect_square(&e, &designs).unwrap()
        })
        .collect();
    let exact: i64 = imp.iter().map(|s| s.values[0] * s.values[1]).sum();
    let cov = cross / n as f64;
    let tol = 5.0 * sigma * sigma * ((nf[0] * nf[1]) as f64 / n as f64).sqrt();
    assert!(
        (cov - exact as f64 * sigma * sigma).abs() < tol,
        "cov {cov} vs {exact}"
    );
}

#[test]
fn chain_auxiliaries_follow_the_trace() {
    let p = fixtures::chain_1x2_2x3_2x3();
    let g = expand(&p).unwrap();
    let base = Constellation::bpsk(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut inputs: Vec<Vec<i64>> = vec![vec![1; 18], vec![-1; 18]];
    inputs.extend((0..200).map(|_| {
        (0..18)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect()
    }));
    let mut exact_first = 0;
    for x in inputs {
        let y: Vec<Complex64> = g.mul_vec(&x).into_iter().map(|v| c(v as f64)).collect();
        let r = detect_rect(&y, p.rect_factors(), &base, 0.0).unwrap();
        let first = r
            .trace
            .iter()
            .find(|t| t.recursion == 1 && t.system == 1)
            .unwrap();
        assert_eq!(first.unknown_users[0], vec![0, 6, 9, 15]);
        if !first.ambiguous {
            exact_first += 1;
            assert_eq!(first.values[0], c((x[0] + x[6] + x[9] + x[15]) as f64));
        }
        let second = r
            .trace
            .iter()
            .find(|t| t.recursion == 2 && t.path == [1] && t.system == 1)
            .unwrap();
        assert_eq!(second.unknown_users[0], vec![0, 9]);

        let preimages = direct_preimages(&g, &g.mul_vec(&x));
        if preimages.len() == 1 {
            let got: Vec<usize> = x.iter().map(|&v| bpsk_index(v)).collect();
            assert_eq!(r.symbols, got);
            assert!(!r.flagged.iter().any(|&f| f));
            assert_eq!(second.values[0], c((x[0] + x[9]) as f64));
        } else {
            assert!(r.ambiguous);
            assert!(r.flagged.iter().any(|&f| f));
        }
    }
    assert!(exact_first >= 2);
}

#[test]
fn chain_index_bookkeeping() {
    let f = fixtures::chain_1x2_2x3_2x3();
    let m = index_map(f.rect_factors(), 3, &[2, 3]).unwrap();
    assert_eq!((m.psi, m.tau, m.kappa), (6, 8, 9));
    let m = index_map(f.rect_factors(), 2, &[1]).unwrap();
    assert_eq!((m.psi, m.tau, m.kappa), (1, 1, 3));
    assert!(index_map(f.rect_factors(), 4, &[1, 1, 1]).is_err());
    assert!(index_map(f.rect_factors(), 2, &[4]).is_err());
}

#[test]
fn leaf_systems_partition_the_users() {
    for p in [fixtures::chain_1x2_2x3_2x3(), fixtures::pair_1x2_2x3()] {
        let g = expand(&p).unwrap();
        let x = vec![1i64; p.k()];
        let y: Vec<Complex64> = g.mul_vec(&x).into_iter().map(|v| c(v as f64)).collect();
        let r = detect_rect(&y, p.rect_factors(), &Constellation::bpsk(1.0), 0.0).unwrap();
        let depth = p.rect_factors().len();
        let mut seen = Vec::new();
        for t in r.trace.iter().filter(|t| t.recursion == depth) {
            for u in &t.unknown_users {
                assert_eq!(u.len(), 1);
                seen.push(u[0]);
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..p.k()).collect::<Vec<_>>());
        // each recursion's systems see every user once per row of the peeled remainder
        for level in 1..depth {
            let users: BTreeSet<usize> = r
                .trace
                .iter()
                .filter(|t| t.recursion == level)
                .flat_map(|t| t.unknown_users.iter().flatten().copied())
                .collect();
            assert_eq!(users.len(), p.k());
        }
    }
}

fn rect_factor() -> impl Strategy<Value = BinaryMatrix> {
    (1usize..=2).prop_flat_map(|m| {
        (m + 1..=3).prop_flat_map(move |k| {
            prop::collection::vec(1u64..(1 << m), k)
                .prop_map(move |masks| BinaryMatrix::from_column_masks(m, &masks).unwrap())
        })
    })
}

fn small_rect_pattern() -> impl Strategy<Value = KroneckerPattern> {
    prop::collection::vec(rect_factor(), 2..=3)
        .prop_filter("at most 8 users", |fs| {
            fs.iter().map(|f| f.cols()).product::<usize>() <= 8
        })
        .prop_map(|fs| KroneckerPattern::new(fs, vec![]).unwrap())
}

fn check_against_direct_map(p: &KroneckerPattern) -> Result<(), TestCaseError> {
    let g = expand(p).unwrap();
    let k = p.k();
    let base = Constellation::bpsk(1.0);
    let mut d = RectDetector::new(p.rect_factors().to_vec(), base).unwrap();
    let users: Vec<usize> = (0..k).collect();
    d.prepare(std::slice::from_ref(&users)).unwrap();
    for bits in 0u64..1 << k {
        let x = bpsk_vector(k, bits);
        let yi = g.mul_vec(&x);
        let y: Vec<Complex64> = yi.iter().map(|&v| c(v as f64)).collect();
        let r = d.detect(&y, 0.0, &users, false).unwrap();
        let pre = direct_preimages(&g, &yi);
        let flagged = r.flagged.iter().any(|&f| f);
        if pre.len() > 1 {
            prop_assert!(flagged && r.ambiguous, "ambiguous input {bits:#x} not flagged");
        } else {
            let want: Vec<usize> = x.iter().map(|&v| bpsk_index(v)).collect();
            prop_assert!(!flagged, "unique input {bits:#x} flagged");
            prop_assert_eq!(&r.symbols, &want, "input {:#x}", bits);
        }
    }
    Ok(())
}

#[test]
fn pair_1x2_2x3_matches_direct_map() {
    check_against_direct_map(&fixtures::pair_1x2_2x3()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_rect_patterns_match_direct_map(p in small_rect_pattern()) {
        check_against_direct_map(&p)?;
    }
}

#[test]
fn general_detector_matches_direct_map_on_mixed_pattern() {
    let p = KroneckerPattern::from_factors(vec![fixtures::f_1x2()], vec![fixtures::p3()]).unwrap();
    let g = expand(&p).unwrap();
    let base = Constellation::bpsk(1.0);
    let det = GeneralDetector::new(p.clone(), base).unwrap();
    let mut unique = 0;
    for bits in 0u64..1 << 6 {
        let x = bpsk_vector(6, bits);
        let yi = g.mul_vec(&x);
        let y: Vec<Complex64> = yi.iter().map(|&v| c(v as f64)).collect();
        let r = det.detect(&y, 0.0).unwrap();
        let pre = direct_preimages(&g, &yi);
        if pre.len() == 1 {
            unique += 1;
            let want: Vec<usize> = x.iter().map(|&v| bpsk_index(v)).collect();
            assert_eq!(r.symbols, want, "input {bits:#x}");
            assert!(!r.flagged.iter().any(|&f| f));
        } else {
            assert!(r.flagged.iter().any(|&f| f), "input {bits:#x}");
        }
    }
    assert!(unique > 0);
}

#[test]
fn general_detector_noisy_decisions_match_direct_ml_at_high_snr() {
    let p = KroneckerPattern::from_factors(vec![fixtures::f_2x3()], vec![fixtures::p3()]).unwrap();
    let g = expand(&p).unwrap();
    let base = Constellation::bpsk(1.0);
    let det = GeneralDetector::new(p.clone(), base).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..300 {
        let x: Vec<i64> = (0..p.k())
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        if direct_preimages(&g, &g.mul_vec(&x)).len() > 1 {
            continue;
        }
        checked += 1;
        let y: Vec<Complex64> = g
            .mul_vec(&x)
            .into_iter()
            .map(|v| c(v as f64 + 0.01 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let r = det.detect(&y, 1e-4).unwrap();
        let want: Vec<usize> = x.iter().map(|&v| bpsk_index(v)).collect();
        assert_eq!(r.symbols, want);
    }
    assert!(checked > 20);
}

#[test]
fn degenerate_patterns_dispatch() {
    let base = Constellation::bpsk(1.0);
    // square only
    let p = fixtures::p3_p4_pattern();
    let g = expand(&p).unwrap();
    let x = bpsk_vector(12, 0b1010_0110_1001);
    let y: Vec<Complex64> = g.mul_vec(&x).into_iter().map(|v| c(v as f64)).collect();
    let r = detect_general(&y, &p, &base, 0.0).unwrap();
    assert_eq!(r.symbols, x.iter().map(|&v| bpsk_index(v)).collect::<Vec<_>>());
    assert_eq!(r.ops.adds, 60);
    assert_eq!(r.candidates, 0);
    // rectangular only
    let p = fixtures::pair_1x2_2x3();
    let g = expand(&p).unwrap();
    let x = bpsk_vector(6, 0b011010);
    let y: Vec<Complex64> = g.mul_vec(&x).into_iter().map(|v| c(v as f64)).collect();
    let r = detect_general(&y, &p, &base, 0.0).unwrap();
    assert_eq!(r.ops.adds, 0);
    assert!(r.candidates > 0);
    // a single user on a single resource
    let p = KroneckerPattern::from_factors(vec![], vec![BinaryMatrix::identity(1)]).unwrap();
    let r = detect_general(&[c(-0.3)], &p, &base, 1.0).unwrap();
    assert_eq!(r.symbols, vec![0]);
    // wrong length
    assert!(detect_general(&[c(1.0)], &fixtures::p3_p4_pattern(), &base, 1.0).is_err());
}
