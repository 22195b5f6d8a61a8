//! Combining-matrix search for square factors and selection of the best square design.
//!
//! A combining row `a` for row `i` of a square factor `P` satisfies: entries in
//! {-1, 0, +1}, `(a P)_j = 0` for `j != i`, and `(a P)_i = w > 0`. Its gain is
//! `w^2 / nnz(a)`. Rows are searched independently, `3^m` vectors each.
//!
//! Sign is normalized to `w > 0`; the negated row has the same gain and would
//! otherwise double every survivor count. Remaining ties go to the
//! lexicographically smallest vector under `-1 < 0 < +1`.

use std::cmp::Ordering;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::patterns::{search_space_size, BinaryMatrix};
use crate::{par, Error, Gain, Result};

/// Default cap on the number of candidates `C(2^m - 1, m)` enumerated.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SquareFactorDesign {
    p: BinaryMatrix,
    alpha: Vec<Vec<i8>>,
    weights: Vec<i64>,
    gains: Vec<Gain>,
}

impl SquareFactorDesign {
    /// Checks `alpha * p` is diagonal with nonzero diagonal and derives weights and gains.
    pub fn new(p: BinaryMatrix, alpha: Vec<Vec<i8>>) -> Result<Self> {
        let m = p.rows();
        if !p.is_square() {
            return Err(Error::InvalidMatrix(format!("{}x{} is not square", m, p.cols())));
        }
        if alpha.len() != m || alpha.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidMatrix("combining matrix has wrong shape".into()));
        }
        if alpha.iter().flatten().any(|&a| !(-1..=1).contains(&a)) {
            return Err(Error::InvalidMatrix(
                "combining entries must be -1, 0 or +1".into(),
            ));
        }
        let mut weights = Vec::with_capacity(m);
        for (i, row) in alpha.iter().enumerate() {
            let prod = row_times(row, &p);
            for (j, &v) in prod.iter().enumerate() {
                if (j == i) == (v == 0) {
                    return Err(Error::InvalidMatrix(format!(
                        "combining row {} gives {} at column {}",
                        i + 1,
                        v,
                        j + 1
                    )));
                }
            }
            weights.push(prod[i]);
        }
        let gains = alpha
            .iter()
            .zip(&weights)
            .map(|(row, &w)| row_gain(row, w))
            .collect();
        Ok(Self {
            p,
            alpha,
            weights,
            gains,
        })
    }

    /// The trivial `1x1` design `[1]`.
    pub fn trivial() -> Self {
        Self::new(BinaryMatrix::identity(1), vec![vec![1]]).expect("identity is a valid design")
    }

    pub fn p(&self) -> &BinaryMatrix {
        &self.p
    }

    pub fn alpha(&self) -> &[Vec<i8>] {
        &self.alpha
    }

    pub fn weights(&self) -> &[i64] {
        &self.weights
    }

    pub fn gains(&self) -> &[Gain] {
        &self.gains
    }

    pub fn m(&self) -> usize {
        self.p.rows()
    }

    /// Number of nonzero combining coefficients in row `i` (zero-based).
    pub fn row_nnz(&self, i: usize) -> i64 {
        self.alpha[i].iter().filter(|&&a| a != 0).count() as i64
    }

    pub fn min_gain(&self) -> Gain {
        *self.gains.iter().min().expect("design is nonempty")
    }

    pub fn to_json(&self) -> DesignJson {
        DesignJson {
            m: self.m(),
            p: self.p.to_rows(),
            alpha: self.alpha.clone(),
            weights: self.weights.clone(),
            gains: self.gains.iter().map(|g| g.to_string()).collect(),
        }
    }
}

/// Serializable view of a design; gains are printed as exact fractions.
#[derive(Debug, Clone, Serialize)]
pub struct DesignJson {
    pub m: usize,
    pub p: Vec<Vec<u8>>,
    pub alpha: Vec<Vec<i8>>,
    pub weights: Vec<i64>,
    pub gains: Vec<String>,
}

fn row_times(row: &[i8], p: &BinaryMatrix) -> Vec<i64> {
    (0..p.cols())
        .map(|j| {
            row.iter()
                .enumerate()
                .filter(|&(r, _)| p.get(r, j) == 1)
                .map(|(_, &a)| i64::from(a))
                .sum()
        })
        .collect()
}

fn row_gain(row: &[i8], w: i64) -> Gain {
    let nnz = row.iter().filter(|&&a| a != 0).count() as i64;
    Gain::new(w * w, nnz)
}

/// Visits every vector in `{-1,0,1}^m` in lexicographic order, first entry most significant.
fn for_each_ternary(m: usize, mut f: impl FnMut(&[i8])) {
    let mut v = vec![-1i8; m];
    loop {
        f(&v);
        let mut j = m;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            if v[j] < 1 {
                v[j] += 1;
                break;
            }
            v[j] = -1;
        }
    }
}

/// All valid combining rows for row `i` with positive weight, in lexicographic order.
pub fn row_survivors(p: &BinaryMatrix, i: usize) -> Vec<(Vec<i8>, i64)> {
    let m = p.rows();
    let cols: Vec<Vec<usize>> = (0..m)
        .map(|j| (0..m).filter(|&r| p.get(r, j) == 1).collect())
        .collect();
    let mut out = Vec::new();
    for_each_ternary(m, |v| {
        let mut w = 0;
        for (j, support) in cols.iter().enumerate() {
            let s: i64 = support.iter().map(|&r| i64::from(v[r])).sum();
            if j == i {
                w = s;
            } else if s != 0 {
                return;
            }
        }
        if w > 0 {
            out.push((v.to_vec(), w));
        }
    });
    out
}

/// Per-row survivor counts. Used to check that independent rows admit at most one row.
pub fn row_combiner_counts(p: &BinaryMatrix) -> Vec<usize> {
    (0..p.rows()).map(|i| row_survivors(p, i).len()).collect()
}

/// Number of complete combining matrices (product of per-row survivor counts).
pub fn count_combiners(p: &BinaryMatrix) -> u128 {
    row_combiner_counts(p).iter().map(|&c| c as u128).product()
}

/// Best combining matrix for `p`, or `None` when some row has no valid combining row.
pub fn find_combining(p: &BinaryMatrix) -> Option<SquareFactorDesign> {
    if !p.is_square() {
        return None;
    }
    let m = p.rows();
    let mut alpha = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut gains = Vec::with_capacity(m);
    for i in 0..m {
        let mut best: Option<(Vec<i8>, i64, Gain)> = None;
        for (v, w) in row_survivors(p, i) {
            let g = row_gain(&v, w);
            // survivors arrive in lexicographic order, so strict improvement keeps the smallest
            if best.as_ref().is_none_or(|(_, _, bg)| g > *bg) {
                best = Some((v, w, g));
            }
        }
        let (v, w, g) = best?;
        alpha.push(v);
        weights.push(w);
        gains.push(g);
    }
    Some(SquareFactorDesign {
        p: p.clone(),
        alpha,
        weights,
        gains,
    })
}

/// Unordered `k`-subsets of `1..2^m` as ascending bitmask lists, in lexicographic order.
fn column_sets(m: usize, k: usize) -> Vec<Vec<u64>> {
    let n = (1u64 << m) - 1;
    let mut out = Vec::new();
    let mut cur: Vec<u64> = (1..=k as u64).collect();
    if k as u64 > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < n - (k - 1 - i) as u64 {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

pub fn enumerate_square_designs(m: usize) -> Result<Vec<SquareFactorDesign>> {
    enumerate_square_designs_capped(m, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_square_designs_capped(m: usize, cap: u128) -> Result<Vec<SquareFactorDesign>> {
    if m == 0 || m > 63 {
        return Err(Error::InfeasibleDims { m, k: m });
    }
    let count: BigUint = search_space_size(m, m)?;
    match count.to_u128() {
        Some(c) if c <= cap => {}
        _ => {
            return Err(Error::EnumerationCapExceeded {
                count: count.to_u128().unwrap_or(u128::MAX),
                cap,
            })
        }
    }
    let sets = column_sets(m, m);
    let found = par::map_slice(&sets, |masks| {
        let p = BinaryMatrix::from_column_masks(m, masks).expect("masks fit");
        find_combining(&p)
    });
    Ok(found.into_iter().flatten().collect())
}

/// Ranking used by [`select_optimal_square`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    /// Largest minimum gain.
    MaxMin,
    /// Largest per-RE rate `(1/2m) sum log2(1 + gamma rho)` at linear SNR `rho`.
    SumRate { rho: f64 },
    /// Largest product of gains.
    Product,
}

impl FromStr for Criterion {
    type Err = Error;

    /// Accepts `minmax`, `product`, or `sumrate:<snr_db>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Self::MaxMin),
            "product" => Ok(Self::Product),
            _ => {
                let db = s
                    .strip_prefix("sumrate:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown criterion '{s}'")))?;
                Ok(Self::SumRate {
                    rho: 10f64.powf(db / 10.0),
                })
            }
        }
    }
}

fn sorted_gains(d: &SquareFactorDesign) -> Vec<Gain> {
    let mut g = d.gains.clone();
    g.sort();
    g
}

fn compare(a: &SquareFactorDesign, b: &SquareFactorDesign, c: Criterion) -> Ordering {
    let primary = match c {
        Criterion::MaxMin => a.min_gain().cmp(&b.min_gain()),
        Criterion::Product => {
            let pa: Gain = a.gains.iter().product();
            let pb: Gain = b.gains.iter().product();
            pa.cmp(&pb)
        }
        Criterion::SumRate { rho } => {
            let ra = crate::metrics::square_design_rate(&sorted_gains(a), rho);
            let rb = crate::metrics::square_design_rate(&sorted_gains(b), rho);
            ra.total_cmp(&rb)
        }
    };
    primary.then_with(|| {
        let sa: Gain = a.gains.iter().sum();
        let sb: Gain = b.gains.iter().sum();
        sa.cmp(&sb)
    })
}

/// Best design of size `m`; ties go to the earliest candidate in canonical order.
pub fn select_optimal_square(m: usize, criterion: Criterion) -> Result<SquareFactorDesign> {
    let designs = enumerate_square_designs(m)?;
    select_from(&designs, criterion)
        .cloned()
        .ok_or(Error::NoValidDesign { m })
}

pub fn select_from(designs: &[SquareFactorDesign], c: Criterion) -> Option<&SquareFactorDesign> {
    designs.iter().fold(None, |best, d| match best {
        Some(b) if compare(d, b, c) != Ordering::Greater => Some(b),
        _ => Some(d),
    })
}
