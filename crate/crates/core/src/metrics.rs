//! Analytic sum rates, worst-case latency and operation counts.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::designer::SquareFactorDesign;
use crate::patterns::{expand, BinaryMatrix, KroneckerPattern};
use crate::rect::{Constellation, SumsetConstellation};
use crate::square::gain_tree;
use crate::{par, Error, Gain, Result};

fn gain_f64(g: Gain) -> f64 {
    *g.numer() as f64 / *g.denom() as f64
}

/// `F Fᵀ` as a dense real matrix.
fn gram(f: &BinaryMatrix) -> DMatrix<f64> {
    let m = f.rows();
    DMatrix::from_fn(m, m, |i, j| {
        f.row(i)
            .iter()
            .zip(f.row(j))
            .filter(|(&a, &b)| a == 1 && b == 1)
            .count() as f64
    })
}

/// `log2 det(I + s A)` for symmetric positive semidefinite `A` and `s >= 0`.
fn log2det_shifted(a: &DMatrix<f64>, s: f64) -> f64 {
    let n = a.nrows();
    let m = DMatrix::identity(n, n) + a * s;
    let chol = m.cholesky().expect("I + sA is positive definite");
    let l = chol.l_dirty();
    2.0 * (0..n).map(|i| l[(i, i)].log2()).sum::<f64>()
}

/// `(1/2M) log2 det(I + rho A Aᵀ)`.
pub fn pdma_capacity(a: &BinaryMatrix, rho: f64) -> f64 {
    log2det_shifted(&gram(a), rho) / (2.0 * a.rows() as f64)
}

/// Orthogonal access, one user per resource: `(1/2) log2(1 + rho)`.
pub fn oma_rate(rho: f64) -> f64 {
    0.5 * (1.0 + rho).log2()
}

/// `(1/2m) Σ log2(1 + γ rho)` for the gains of one square factor.
pub fn square_design_rate(gains: &[Gain], rho: f64) -> f64 {
    let terms: Vec<f64> = gains.iter().map(|&g| (1.0 + gain_f64(g) * rho).log2()).collect();
    par::pairwise_sum(&terms) / (2.0 * gains.len() as f64)
}

/// Rate for an explicit per-path gain table (length `M_s`, super-group order).
pub fn sum_rate_with_gains(pattern: &KroneckerPattern, gains: &[Gain], rho: f64) -> Result<f64> {
    if gains.len() != pattern.m_square() {
        return Err(Error::DimensionMismatch {
            expected: pattern.m_square(),
            actual: gains.len(),
        });
    }
    let f = pattern.rect_product()?;
    let g = gram(&f);
    let mut counts: BTreeMap<Gain, u64> = BTreeMap::new();
    for &x in gains {
        *counts.entry(x).or_default() += 1;
    }
    let entries: Vec<(Gain, u64)> = counts.into_iter().collect();
    let terms = par::map_slice(&entries, |&(gamma, n)| {
        n as f64 * log2det_shifted(&g, rho * gain_f64(gamma))
    });
    Ok(par::pairwise_sum(&terms) / (2.0 * pattern.m() as f64))
}

/// Per-RE average sum rate over all square paths.
pub fn sum_rate_general(pattern: &KroneckerPattern, rho: f64) -> Result<f64> {
    sum_rate_with_gains(pattern, &gain_tree(pattern.square_designs()), rho)
}

/// Same as [`sum_rate_with_gains`]; named for the cancellation-revised table.
pub fn sum_rate_with_sic(pattern: &KroneckerPattern, revised: &[Gain], rho: f64) -> Result<f64> {
    sum_rate_with_gains(pattern, revised, rho)
}

/// Multinomial coefficient `n! / ∏ r_i!`.
pub fn multinomial(parts: &[u32]) -> BigUint {
    let mut acc = BigUint::one();
    let mut n = 0u32;
    for &r in parts {
        for i in 1..=r {
            n += 1;
            acc = acc * BigUint::from(n) / BigUint::from(i);
        }
    }
    acc
}

fn compositions(total: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if parts == 1 {
        prefix.push(total);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for r in 0..=total {
        prefix.push(r);
        compositions(total - r, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Rate for `F ⊗ P ⊗ … ⊗ P` (`ls` copies), grouping paths by gain exponents.
pub fn sum_rate_identical(f: &BinaryMatrix, design: &SquareFactorDesign, ls: u32, rho: f64) -> f64 {
    let m = design.m();
    let g = gram(f);
    let gains: Vec<f64> = design.gains().iter().map(|&x| gain_f64(x)).collect();
    let mut tuples = Vec::new();
    compositions(ls, m, &mut Vec::new(), &mut tuples);
    let terms = par::map_slice(&tuples, |r| {
        let coef = multinomial(r).to_f64().expect("finite multinomial");
        let gamma: f64 = r.iter().zip(&gains).map(|(&e, &x)| x.powi(e as i32)).product();
        coef * log2det_shifted(&g, rho * gamma)
    });
    let total_m = f.rows() as f64 * (m as f64).powi(ls as i32);
    par::pairwise_sum(&terms) / (2.0 * total_m)
}

/// Cost of one MUD call on `F` with a symbol space of a given size.
pub trait MudCost: Send + Sync {
    fn time_noisy(&self, f: &BinaryMatrix, space: u128) -> f64;
    fn time_noiseless(&self, f: &BinaryMatrix, space: u128) -> f64;
    fn adds_noisy(&self, f: &BinaryMatrix, space: u128) -> u128;
    fn adds_noiseless(&self, f: &BinaryMatrix, space: u128) -> u128;
    fn muls_noisy(&self, f: &BinaryMatrix, space: u128) -> u128;
    fn muls_noiseless(&self, f: &BinaryMatrix, space: u128) -> u128;
}

fn candidates(f: &BinaryMatrix, space: u128) -> u128 {
    (0..f.cols()).fold(1u128, |acc, _| acc.saturating_mul(space))
}

fn nnz(f: &BinaryMatrix) -> u128 {
    (0..f.rows()).map(|r| f.row_weight(r) as u128).sum()
}

/// Exhaustive search: one time unit per candidate; each candidate forms `y - Fz`
/// (`nnz(F)` subtractions), squares `m` residuals and sums them (`m - 1` additions).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteForceCost {
    pub t_candidate: f64,
}

impl Default for BruteForceCost {
    fn default() -> Self {
        Self { t_candidate: 1.0 }
    }
}

impl MudCost for BruteForceCost {
    fn time_noisy(&self, f: &BinaryMatrix, space: u128) -> f64 {
        candidates(f, space) as f64 * self.t_candidate
    }

    fn time_noiseless(&self, f: &BinaryMatrix, space: u128) -> f64 {
        self.time_noisy(f, space)
    }

    fn adds_noisy(&self, f: &BinaryMatrix, space: u128) -> u128 {
        candidates(f, space).saturating_mul(nnz(f) + f.rows() as u128 - 1)
    }

    fn adds_noiseless(&self, f: &BinaryMatrix, space: u128) -> u128 {
        self.adds_noisy(f, space)
    }

    fn muls_noisy(&self, f: &BinaryMatrix, space: u128) -> u128 {
        candidates(f, space).saturating_mul(f.rows() as u128)
    }

    fn muls_noiseless(&self, f: &BinaryMatrix, space: u128) -> u128 {
        self.muls_noisy(f, space)
    }
}

/// Timing and operation model for latency and complexity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<C: MudCost = BruteForceCost> {
    /// Time units per addition.
    pub t_add: f64,
    pub mud: C,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            t_add: 1.0,
            mud: BruteForceCost::default(),
        }
    }
}

/// Size of the space of sums of `order` symbols from `base`.
pub fn sumset_size(base: &Constellation, order: usize) -> u128 {
    SumsetConstellation::new(base, order).len() as u128
}

/// One MUD stage of the rectangular recursion: `systems` calls on `factor`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MudStage {
    /// Zero-based rectangular factor index.
    pub factor: usize,
    pub systems: u128,
    pub space: u128,
    pub noisy: bool,
}

/// MUD stages in recursion order, using the worst-case sumset order `K_{l-1}`.
pub fn mud_stages(rect: &[BinaryMatrix], base: &Constellation) -> Vec<MudStage> {
    let lr = rect.len();
    let c0 = base.len() as u128;
    let ms: Vec<u128> = rect.iter().map(|f| f.rows() as u128).collect();
    let ks: Vec<u128> = rect.iter().map(|f| f.cols() as u128).collect();
    let prefix_m = |l: usize| ms[..l].iter().product::<u128>();
    let prefix_k = |l: usize| ks[..l].iter().product::<u128>();
    let suffix_k = |from: usize| ks[from..].iter().product::<u128>();
    match lr {
        0 => Vec::new(),
        1 => vec![MudStage {
            factor: 0,
            systems: 1,
            space: c0,
            noisy: true,
        }],
        _ => {
            let mut out = vec![MudStage {
                factor: lr - 1,
                systems: prefix_m(lr - 1),
                space: sumset_size(base, prefix_k(lr - 1) as usize),
                noisy: true,
            }];
            for lp in 2..lr {
                let l = lr - lp; // factor index, zero-based
                out.push(MudStage {
                    factor: l,
                    systems: suffix_k(l + 1) * prefix_m(l),
                    space: sumset_size(base, prefix_k(l) as usize),
                    noisy: false,
                });
            }
            out.push(MudStage {
                factor: 0,
                systems: suffix_k(1),
                space: c0,
                noisy: false,
            });
            out
        }
    }
}

/// Worst-case detection time with fully parallel super-groups.
pub fn latency_worst_case<C: MudCost>(
    pattern: &KroneckerPattern,
    base: &Constellation,
    cost: &CostModel<C>,
) -> f64 {
    let combine: usize = pattern.square_designs().iter().map(|d| d.m() - 1).sum();
    let mud: f64 = mud_stages(pattern.rect_factors(), base)
        .iter()
        .map(|s| {
            let f = &pattern.rect_factors()[s.factor];
            if s.noisy {
                cost.mud.time_noisy(f, s.space)
            } else {
                cost.mud.time_noiseless(f, s.space)
            }
        })
        .sum();
    cost.t_add * combine as f64 + mud
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpTotals {
    pub adds: u128,
    pub muls: u128,
}

/// Maximum additions and multiplications to detect all `K` symbols.
pub fn op_counts<C: MudCost>(
    pattern: &KroneckerPattern,
    base: &Constellation,
    cost: &CostModel<C>,
) -> OpTotals {
    let m = pattern.m() as u128;
    let ms = pattern.m_square() as u128;
    let combine: u128 = pattern.square_designs().iter().map(|d| d.m() as u128 - 1).sum();
    let (mut adds, mut muls) = (0u128, 0u128);
    for s in mud_stages(pattern.rect_factors(), base) {
        let f = &pattern.rect_factors()[s.factor];
        let (a, u) = if s.noisy {
            (cost.mud.adds_noisy(f, s.space), cost.mud.muls_noisy(f, s.space))
        } else {
            (
                cost.mud.adds_noiseless(f, s.space),
                cost.mud.muls_noiseless(f, s.space),
            )
        };
        adds = adds.saturating_add(s.systems.saturating_mul(a));
        muls = muls.saturating_add(s.systems.saturating_mul(u));
    }
    OpTotals {
        adds: (m * combine).saturating_add(ms.saturating_mul(adds)),
        muls: ms.saturating_mul(muls),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SearchSpace {
    pub recursive: u128,
    pub direct: u128,
}

/// Candidate tuples searched by exhaustive MUD with and without recursion.
pub fn map_search_space(pattern: &KroneckerPattern, base: &Constellation) -> Result<SearchSpace> {
    if !pattern.square_designs().is_empty() {
        return Err(Error::InvalidPattern(
            "search-space comparison needs a rectangular-only pattern".into(),
        ));
    }
    let rect = pattern.rect_factors();
    let recursive = mud_stages(rect, base).iter().fold(0u128, |acc, s| {
        let per = candidates(&rect[s.factor], s.space);
        acc.saturating_add(s.systems.saturating_mul(per))
    });
    let direct = (0..pattern.k()).fold(1u128, |acc, _| acc.saturating_mul(base.len() as u128));
    Ok(SearchSpace { recursive, direct })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceParams {
    pub t_in: f64,
    pub t_out: f64,
    /// Max row weight of the rectangular part; derived from the pattern when absent.
    pub d_f: Option<f64>,
    /// Max row weight of the whole pattern; derived when absent.
    pub d_g: Option<f64>,
    pub c0: f64,
}

impl Default for ReferenceParams {
    fn default() -> Self {
        Self {
            t_in: 1.0,
            t_out: 1.0,
            d_f: None,
            d_g: None,
            c0: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub algorithm: &'static str,
    pub adds: f64,
    pub muls: f64,
}

/// Order-of-magnitude complexity expressions with all constants set to one.
pub fn reference_estimates(pattern: &KroneckerPattern, p: &ReferenceParams) -> Result<Vec<ReferenceRow>> {
    let m = pattern.m() as f64;
    let k = pattern.k() as f64;
    let ms = pattern.m_square() as f64;
    let d_f = match p.d_f {
        Some(v) => v,
        None => pattern.rect_product()?.max_row_weight() as f64,
    };
    let d_g = match p.d_g {
        Some(v) => v,
        None => expand(pattern)?.max_row_weight() as f64,
    };
    let c = p.c0;
    let lc = c.log2();
    let sic = k * k * m.powi(3);
    let bp = |d: f64| d * m * k * c.powf(d);
    Ok(vec![
        ReferenceRow {
            algorithm: "SIC over G",
            adds: sic,
            muls: sic,
        },
        ReferenceRow {
            algorithm: "ours with SIC over F",
            adds: m + sic / ms.powi(4),
            muls: sic / ms.powi(4),
        },
        ReferenceRow {
            algorithm: "BP over G",
            adds: p.t_in * bp(d_g) * lc,
            muls: bp(d_g),
        },
        ReferenceRow {
            algorithm: "ours with BP over F",
            adds: m + p.t_in * bp(d_f) * lc / ms,
            muls: bp(d_f) / ms,
        },
        ReferenceRow {
            algorithm: "BP-IDD over G",
            adds: p.t_in * p.t_out * bp(d_g) * lc,
            muls: bp(d_g),
        },
        ReferenceRow {
            algorithm: "ours with BP-IDD over F",
            adds: m + p.t_in * p.t_out * bp(d_f) * lc / ms,
            muls: bp(d_f) / ms,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn pdma_trivial_cases() {
        let i4 = BinaryMatrix::identity(4);
        assert!((pdma_capacity(&i4, 3.0) - oma_rate(3.0)).abs() < 1e-14);
        let one = BinaryMatrix::identity(1);
        assert!((pdma_capacity(&one, 3.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_snr_gives_zero_rate() {
        let p = fixtures::p3_p4_pattern();
        assert_eq!(sum_rate_general(&p, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn multinomials() {
        assert_eq!(multinomial(&[2, 1]), BigUint::from(3u32));
        assert_eq!(multinomial(&[1, 1, 1]), BigUint::from(6u32));
        assert_eq!(multinomial(&[0, 0]), BigUint::from(1u32));
    }

    #[test]
    fn search_space_example() {
        let p = fixtures::pair_1x2_2x3();
        let q = map_search_space(&p, &Constellation::qpsk(1.0)).unwrap();
        assert_eq!(
            q,
            SearchSpace {
                recursive: 777,
                direct: 4096
            }
        );
        let b = map_search_space(&p, &Constellation::bpsk(1.0)).unwrap();
        assert_eq!(
            b,
            SearchSpace {
                recursive: 39,
                direct: 64
            }
        );
    }

    #[test]
    fn pure_square_latency_and_ops() {
        let p = fixtures::p3_p4_pattern();
        let b = Constellation::bpsk(1.0);
        assert_eq!(latency_worst_case(&p, &b, &CostModel::default()), 5.0);
        assert_eq!(
            op_counts(&p, &b, &CostModel::default()),
            OpTotals { adds: 60, muls: 0 }
        );
    }

    #[test]
    fn reference_sic_row() {
        let design = crate::designer::find_combining(&BinaryMatrix::identity(8)).unwrap();
        let p = KroneckerPattern::new(vec![], vec![design]).unwrap();
        let rows = reference_estimates(&p, &ReferenceParams::default()).unwrap();
        assert_eq!(rows[0].adds, 32768.0);
        assert_eq!(rows[0].muls, 32768.0);
    }
}
