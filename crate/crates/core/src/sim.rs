//! Monte-Carlo bit-error simulation over the Gaussian multiple-access channel.
//!
//! Every trial owns a ChaCha8 stream keyed by `(seed, snr_index, trial_index)`,
//! so results do not depend on how trials are split across threads. A trial
//! draws all symbols first and then the noise. Noise is circular complex
//! Gaussian with `E|n|^2 = σ²`, and `ρ = P_x / σ²`.

use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::general::{GeneralDetector, SicMode, SicPolicy};
use crate::patterns::{expand, KroneckerPattern};
use crate::rect::Constellation;
use crate::{par, Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_964;

const CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn constellation(self, power: f64) -> Constellation {
        match self {
            Self::Bpsk => Constellation::bpsk(power.sqrt()),
            Self::Qpsk => Constellation::qpsk(power.sqrt()),
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            _ => Err(Error::InvalidConfig(format!("unknown modulation '{s}'"))),
        }
    }
}

/// Flat fading applied before the noise.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Fading {
    #[default]
    None,
    /// One real gain per resource element, seen by the receiving user.
    Downlink(Vec<f64>),
    /// One real gain per transmitting user.
    Uplink(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub pattern: KroneckerPattern,
    pub modulation: Modulation,
    pub snr_db: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
    pub sic: Option<SicPolicy>,
    pub sic_mode: SicMode,
    pub fading: Fading,
    /// One-based user indices.
    pub tracked_users: Vec<usize>,
    /// Symbol energy `P_x`.
    pub power: f64,
    /// Forces `σ² = 0` at every grid point.
    pub noiseless: bool,
}

impl SimConfig {
    pub fn new(pattern: KroneckerPattern, snr_db: Vec<f64>, trials: u64, seed: u64) -> Self {
        let k = pattern.k();
        Self {
            pattern,
            modulation: Modulation::Bpsk,
            snr_db,
            trials,
            seed,
            sic: None,
            sic_mode: SicMode::Imperfect,
            fading: Fading::None,
            tracked_users: (1..=k).collect(),
            power: 1.0,
            noiseless: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "SNR grid must be finite and nonempty".into(),
            ));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidConfig("symbol power must be positive".into()));
        }
        let k = self.pattern.k();
        if let Some(&u) = self.tracked_users.iter().find(|&&u| u == 0 || u > k) {
            return Err(Error::IndexOutOfRange { index: u, max: k });
        }
        if self.snr_db.len() as u64 >= 1 << 23 || self.trials >= 1 << 40 {
            return Err(Error::InvalidConfig("grid or trial count too large".into()));
        }
        match &self.fading {
            Fading::None => {}
            Fading::Downlink(h) => check_gains(h, self.pattern.m())?,
            Fading::Uplink(h) => check_gains(h, k)?,
        }
        Ok(())
    }
}

fn check_gains(h: &[f64], n: usize) -> Result<()> {
    if h.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h.len(),
        });
    }
    match h.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        Some(i) => Err(Error::ZeroGain(i + 1)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerRow {
    /// One-based user index.
    pub user: usize,
    pub snr_db: f64,
    pub trials: u64,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BerResult {
    /// Ordered by user, then by SNR.
    pub rows: Vec<BerRow>,
    /// Order-independent digest of every noise sample drawn.
    pub noise_checksum: u64,
}

impl BerResult {
    pub fn curve(&self, user: usize) -> Vec<&BerRow> {
        self.rows.iter().filter(|r| r.user == user).collect()
    }
}

/// Wilson score interval for `errors` successes out of `n`.
pub fn wilson_interval(errors: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut s = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix(&mut s).to_le_bytes());
    }
    key
}

/// The generator for one trial.
pub fn trial_rng(key: &[u8; 32], snr_index: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(*key);
    rng.set_stream(((snr_index as u64) << 40) | trial);
    rng
}

fn mix(v: u64) -> u64 {
    let mut s = v;
    splitmix(&mut s)
}

/// `ỹ_m = y_m / h_m`; the returned variances are `σ² / h_m²`.
pub fn apply_downlink_fading(y: &[Complex64], h: &[f64], sigma2: f64) -> Result<(Vec<Complex64>, Vec<f64>)> {
    check_gains(h, y.len())?;
    Ok((
        y.iter().zip(h).map(|(v, &g)| v / g).collect(),
        h.iter().map(|&g| sigma2 / (g * g)).collect(),
    ))
}

/// `x̃_k = h_k x_k`.
pub fn apply_uplink_fading(x: &[Complex64], h: &[f64]) -> Result<Vec<Complex64>> {
    check_gains(h, x.len())?;
    Ok(x.iter().zip(h).map(|(v, &g)| v * g).collect())
}

struct Channel {
    rows: Vec<Vec<usize>>,
    base: Constellation,
    detector: GeneralDetector,
    downlink: Option<Vec<f64>>,
    uplink: Option<Vec<f64>>,
    tracked: Vec<usize>,
    k: usize,
}

struct ChunkTally {
    errors: Vec<u64>,
    checksum: u64,
}

impl Channel {
    fn new(cfg: &SimConfig) -> Result<Self> {
        let g = expand(&cfg.pattern)?;
        let rows = (0..g.rows())
            .map(|r| (0..g.cols()).filter(|&c| g.get(r, c) == 1).collect())
            .collect();
        let base = cfg.modulation.constellation(cfg.power);
        let (downlink, uplink) = match &cfg.fading {
            Fading::None => (None, None),
            Fading::Downlink(h) => (Some(h.clone()), None),
            Fading::Uplink(h) => (None, Some(h.clone())),
        };
        let gains = uplink
            .as_ref()
            .map(|h| h.iter().map(|&v| Complex64::new(v, 0.0)).collect());
        let detector = GeneralDetector::with_gains(cfg.pattern.clone(), base.clone(), gains)?;
        Ok(Self {
            rows,
            base,
            detector,
            downlink,
            uplink,
            tracked: cfg.tracked_users.iter().map(|u| u - 1).collect(),
            k: cfg.pattern.k(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_chunk(
        &self,
        key: &[u8; 32],
        snr_index: usize,
        trials: std::ops::Range<u64>,
        sigma2: f64,
        sic: Option<&SicPolicy>,
        mode: SicMode,
    ) -> Result<ChunkTally> {
        let mut errors = vec![0u64; self.tracked.len()];
        let mut checksum = 0u64;
        let amp = (sigma2 / 2.0).sqrt();
        let n = self.base.len();
        let mut idx = vec![0usize; self.k];
        let mut x = vec![Complex64::new(0.0, 0.0); self.k];
        let mut y = vec![Complex64::new(0.0, 0.0); self.rows.len()];
        for t in trials {
            let mut rng = trial_rng(key, snr_index, t);
            for u in 0..self.k {
                idx[u] = rng.random_range(0..n);
                x[u] = self.base.point(idx[u]);
                if let Some(h) = &self.uplink {
                    x[u] *= h[u];
                }
            }
            let mut digest = 0u64;
            for (r, row) in self.rows.iter().enumerate() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                digest = digest
                    .wrapping_mul(31)
                    .wrapping_add(re.to_bits() ^ im.to_bits().rotate_left(17));
                let mut s: Complex64 = row.iter().map(|&c| x[c]).sum();
                if let Some(h) = &self.downlink {
                    s *= h[r];
                }
                y[r] = s + Complex64::new(re, im) * amp;
                if let Some(h) = &self.downlink {
                    y[r] /= h[r];
                }
            }
            checksum = checksum.wrapping_add(mix(digest ^ t));
            let det = match sic {
                Some(p) => self.detector.detect_with_sic(&y, sigma2, p, mode, Some(&idx))?,
                None => self.detector.detect(&y, sigma2)?,
            };
            let bits = self.base.bits_per_symbol() as u64;
            for (e, &u) in errors.iter_mut().zip(&self.tracked) {
                *e += if det.flagged[u] {
                    bits
                } else {
                    u64::from((idx[u] ^ det.symbols[u]).count_ones())
                };
            }
        }
        Ok(ChunkTally { errors, checksum })
    }
}

pub fn simulate_ber(cfg: &SimConfig) -> Result<BerResult> {
    cfg.validate()?;
    let ch = Channel::new(cfg)?;
    let key = key_from_seed(cfg.seed);
    let bits = ch.base.bits_per_symbol() as u64;
    let chunks = cfg.trials.div_ceil(CHUNK);
    let jobs: Vec<(usize, u64)> = (0..cfg.snr_db.len())
        .flat_map(|s| (0..chunks).map(move |c| (s, c)))
        .collect();
    let tallies = par::map_slice(&jobs, |&(s, c)| {
        let sigma2 = if cfg.noiseless {
            0.0
        } else {
            cfg.power / 10f64.powf(cfg.snr_db[s] / 10.0)
        };
        let range = c * CHUNK..((c + 1) * CHUNK).min(cfg.trials);
        ch.run_chunk(&key, s, range, sigma2, cfg.sic.as_ref(), cfg.sic_mode)
    });
    let mut errors = vec![vec![0u64; ch.tracked.len()]; cfg.snr_db.len()];
    let mut checksum = 0u64;
    for (&(s, _), t) in jobs.iter().zip(tallies) {
        let t = t?;
        for (a, b) in errors[s].iter_mut().zip(&t.errors) {
            *a += b;
        }
        checksum = checksum.wrapping_add(t.checksum);
    }
    let mut rows = Vec::new();
    for (ui, &user) in cfg.tracked_users.iter().enumerate() {
        for (s, &snr_db) in cfg.snr_db.iter().enumerate() {
            let e = errors[s][ui];
            let n = cfg.trials * bits;
            let (ci_lo, ci_hi) = wilson_interval(e, n, Z95);
            rows.push(BerRow {
                user,
                snr_db,
                trials: cfg.trials,
                bits: n,
                errors: e,
                ber: e as f64 / n as f64,
                ci_lo,
                ci_hi,
            });
        }
    }
    Ok(BerResult {
        rows,
        noise_checksum: checksum,
    })
}

/// Paired runs with and without cancellation on identical noise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SicComparison {
    pub without: BerResult,
    pub with: BerResult,
}

impl SicComparison {
    /// SNR saved by cancellation for `user` at `target` BER, in dB.
    pub fn shift_db(&self, user: usize, target: f64) -> Option<f64> {
        let a = snr_at_ber(&self.without.curve(user), target)?;
        let b = snr_at_ber(&self.with.curve(user), target)?;
        Some(a - b)
    }
}

pub fn simulate_ber_sic(cfg: &SimConfig) -> Result<SicComparison> {
    let policy = cfg
        .sic
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no cancellation policy given".into()))?;
    let without = simulate_ber(&SimConfig {
        sic: None,
        ..cfg.clone()
    })?;
    let with = simulate_ber(&SimConfig {
        sic: Some(policy),
        ..cfg.clone()
    })?;
    Ok(SicComparison { without, with })
}

/// SNR where the curve crosses `target`, interpolating `log10(BER)` linearly in dB.
pub fn snr_at_ber(curve: &[&BerRow], target: f64) -> Option<f64> {
    let lt = target.log10();
    curve.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if a.ber >= target && b.ber <= target && a.ber > 0.0 && b.ber > 0.0 && a.ber != b.ber {
            let (la, lb) = (a.ber.log10(), b.ber.log10());
            Some(a.snr_db + (lt - la) / (lb - la) * (b.snr_db - a.snr_db))
        } else {
            None
        }
    })
}
