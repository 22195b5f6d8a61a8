use kron_noma::fixtures;
use kron_noma::patterns::KroneckerPattern;
use kron_noma::report::ber_table;
use kron_noma::sim::{
    simulate_ber, simulate_ber_sic, snr_at_ber, wilson_interval, BerResult, Fading, Modulation, SimConfig,
    Z95,
};
use kron_noma::square::detect_square;
use statrs::distribution::{ContinuousCDF, Normal};

fn q(x: f64) -> f64 {
    1.0 - Normal::standard().cdf(x)
}

fn within_3se(errors: u64, bits: u64, p: f64) -> bool {
    let n = bits as f64;
    let se = (p * (1.0 - p) / n).sqrt();
    (errors as f64 / n - p).abs() <= 3.0 * se + 1.0 / n
}

fn db(x: f64) -> f64 {
    10f64.powf(x / 10.0)
}

#[test]
fn bpsk_ber_follows_combining_gain() {
    let snr = vec![0.0, 2.0, 4.0];
    let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), snr.clone(), 100_000, 5);
    cfg.tracked_users = vec![1, 4, 5, 9];
    let r = simulate_ber(&cfg).unwrap();
    for row in &r.rows {
        let gain = if row.user == 4 { 4.0 / 3.0 } else { 16.0 / 9.0 };
        let p = q((2.0 * gain * db(row.snr_db)).sqrt());
        assert!(within_3se(row.errors, row.bits, p), "{row:?} vs {p}");
        assert!(row.ci_lo <= row.ber && row.ber <= row.ci_hi);
    }
}

#[test]
fn qpsk_counts_two_bits_per_symbol() {
    let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), vec![3.0], 50_000, 9);
    cfg.modulation = Modulation::Qpsk;
    cfg.tracked_users = vec![1];
    let r = simulate_ber(&cfg).unwrap();
    let row = &r.rows[0];
    assert_eq!(row.bits, 100_000);
    // each quadrature carries half the symbol energy
    let p = q((16.0 / 9.0 * db(3.0)).sqrt());
    assert!(within_3se(row.errors, row.bits, p), "{row:?} vs {p}");
}

#[test]
fn uplink_fading_scales_each_user() {
    let h: Vec<f64> = (0..12).map(|u| 0.6 + 0.1 * u as f64).collect();
    let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), vec![2.0], 100_000, 21);
    cfg.fading = Fading::Uplink(h.clone());
    cfg.tracked_users = vec![1, 8, 12];
    let r = simulate_ber(&cfg).unwrap();
    for row in &r.rows {
        let gain = if row.user % 4 == 0 { 4.0 / 3.0 } else { 16.0 / 9.0 };
        let hu = h[row.user - 1];
        let p = q((2.0 * gain * hu * hu * db(row.snr_db)).sqrt());
        assert!(within_3se(row.errors, row.bits, p), "{row:?} vs {p}");
    }
}

#[test]
fn downlink_fading_colours_the_noise() {
    let designs = fixtures::p3_p4_designs();
    let h: Vec<f64> = (0..12).map(|r| 0.5 + 0.08 * r as f64).collect();
    // impulse responses give each singleton's noise weights per resource
    let imp: Vec<Vec<f64>> = (0..12)
        .map(|j| {
            let mut e = vec![0.0; 12];
            e[j] = 1.0;
            detect_square(&e, &designs).unwrap().values
        })
        .collect();
    let scales = detect_square(&[0.0; 12], &designs).unwrap().scales;
    let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), vec![4.0], 100_000, 33);
    cfg.fading = Fading::Downlink(h.clone());
    cfg.tracked_users = vec![1, 6, 12];
    let r = simulate_ber(&cfg).unwrap();
    for row in &r.rows {
        let i = row.user - 1;
        let nf: f64 = (0..12).map(|j| imp[j][i] * imp[j][i] / (h[j] * h[j])).sum();
        let w = scales[i] as f64;
        let p = q((2.0 * w * w / nf * db(row.snr_db)).sqrt());
        assert!(within_3se(row.errors, row.bits, p), "{row:?} vs {p}");
    }
}

#[test]
fn noiseless_runs_are_error_free() {
    for m in [Modulation::Bpsk, Modulation::Qpsk] {
        let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), vec![0.0], 2_000, 1);
        cfg.noiseless = true;
        cfg.modulation = m;
        let r = simulate_ber(&cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.errors == 0));
    }
}

fn run_with_threads(cfg: &SimConfig, n: usize) -> BerResult {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(|| simulate_ber(cfg).unwrap())
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let pattern = KroneckerPattern::from_factors(vec![fixtures::f_1x2()], vec![fixtures::p3()]).unwrap();
    let cfg = SimConfig::new(pattern, vec![0.0, 3.0, 6.0], 10_000, 77);
    let one = run_with_threads(&cfg, 1);
    let csv = ber_table(&one).to_csv();
    for n in [2, 4, 8] {
        let other = run_with_threads(&cfg, n);
        assert_eq!(other, one, "{n} threads");
        assert_eq!(ber_table(&other).to_csv(), csv);
    }
    let mut reseeded = cfg.clone();
    reseeded.seed = 78;
    assert_ne!(
        simulate_ber(&reseeded).unwrap().noise_checksum,
        one.noise_checksum
    );
}

#[test]
fn genie_cancellation_beats_decision_feedback() {
    let mut cfg = SimConfig::new(fixtures::p3_p4_pattern(), vec![2.0, 4.0, 6.0], 40_000, 3);
    cfg.sic = Some(fixtures::p3_sic_policy());
    cfg.tracked_users = vec![9];
    let imperfect = simulate_ber_sic(&cfg).unwrap();
    cfg.sic_mode = "genie".parse().unwrap();
    let genie = simulate_ber_sic(&cfg).unwrap();
    // the reference pass is identical in both comparisons
    assert_eq!(imperfect.without, genie.without);
    for i in 0..3 {
        let none = &genie.without.rows[i];
        let g = &genie.with.rows[i];
        let d = &imperfect.with.rows[i];
        assert!(
            g.errors < d.errors && d.errors < none.errors,
            "{none:?} {d:?} {g:?}"
        );
        let p = q((2.0 * 8.0 / 3.0 * db(g.snr_db)).sqrt());
        assert!(within_3se(g.errors, g.bits, p), "{g:?} vs {p}");
    }
}

#[test]
fn crossing_point_interpolates_in_log_domain() {
    let mut cfg = SimConfig::new(
        fixtures::p3_p4_pattern(),
        vec![0.0, 2.0, 4.0, 6.0, 8.0],
        20_000,
        4,
    );
    cfg.tracked_users = vec![1];
    let r = simulate_ber(&cfg).unwrap();
    let curve = r.curve(1);
    let x = snr_at_ber(&curve, 1e-2).unwrap();
    let exact = 10.0 * ((2.326f64).powi(2) / 2.0 / (16.0 / 9.0)).log10();
    assert!((x - exact).abs() < 0.3, "{x} vs {exact}");
    assert!(snr_at_ber(&curve, 0.9).is_none());
}

#[test]
fn wilson_interval_matches_closed_form() {
    let (n, k) = (1000u64, 37u64);
    let p = k as f64 / n as f64;
    let z = Z95;
    let d = 1.0 + z * z / n as f64;
    let c = (p + z * z / (2.0 * n as f64)) / d;
    let h = z / d * (p * (1.0 - p) / n as f64 + z * z / (4.0 * (n * n) as f64)).sqrt();
    let (lo, hi) = wilson_interval(k, n, z);
    assert!((lo - (c - h)).abs() < 1e-15 && (hi - (c + h)).abs() < 1e-15);
}

#[test]
fn invalid_configurations_are_rejected() {
    let base = SimConfig::new(fixtures::p3_p4_pattern(), vec![0.0], 10, 1);
    let mut c = base.clone();
    c.trials = 0;
    assert!(simulate_ber(&c).is_err());
    let mut c = base.clone();
    c.tracked_users = vec![13];
    assert!(simulate_ber(&c).is_err());
    let mut c = base.clone();
    c.fading = Fading::Uplink(vec![1.0; 11]);
    assert!(simulate_ber(&c).is_err());
    let mut c = base;
    c.fading = Fading::Downlink({
        let mut h = vec![1.0; 12];
        h[3] = 0.0;
        h
    });
    assert!(simulate_ber(&c).is_err());
}
