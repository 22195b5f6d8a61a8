//! Recursive detection over a Kronecker product of square factors.
//!
//! For `G = P(1) ⊗ … ⊗ P(L)` the zero-based index of a row or column splits into
//! mixed-radix digits `(s_1, …, s_L)` with `s_1` most significant; axis `l` has
//! stride `m_{l+1} ⋯ m_L`. Recursion `l'` combines along axis `L - l' + 1` with the
//! rows of that factor's combining matrix. The index arithmetic replaces the
//! explicit grouping and super-grouping: after all recursions
//! `(α(1) ⊗ … ⊗ α(L)) G = diag(W)`, so every output is `W_i x_i` plus noise whose
//! variance is `∏ nnz` times the input noise variance.

use std::ops::{Add, Neg, Sub};

use num_complex::Complex64;
use num_traits::Zero;

use crate::designer::SquareFactorDesign;
use crate::rect::Constellation;
use crate::{Error, Gain, Result};

/// Sample types the combiner can operate on.
pub trait Sample:
    Copy + Send + Sync + Zero + Add<Output = Self> + Sub<Output = Self> + Neg<Output = Self>
{
}

impl<T> Sample for T where T: Copy + Send + Sync + Zero + Add<Output = T> + Sub<Output = T> + Neg<Output = T> {}

/// Additions and multiplications executed by a detector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCount {
    pub adds: u64,
    pub muls: u64,
    /// Additions per recursion, in execution order.
    pub per_recursion: Vec<u64>,
}

impl OpCount {
    pub fn merge(&mut self, other: &OpCount) {
        self.adds += other.adds;
        self.muls += other.muls;
        if self.per_recursion.len() < other.per_recursion.len() {
            self.per_recursion.resize(other.per_recursion.len(), 0);
        }
        for (a, b) in self.per_recursion.iter_mut().zip(&other.per_recursion) {
            *a += b;
        }
    }
}

/// Output of the square recursions: `values[i] = scales[i] * x_i + noise_i` with
/// `Var(noise_i) = noise_factors[i] * sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingletonSystem<T> {
    pub values: Vec<T>,
    pub scales: Vec<i64>,
    pub noise_factors: Vec<i64>,
    pub ops: OpCount,
}

impl<T> SingletonSystem<T> {
    /// Effective SNR gain at zero-based index `i`.
    pub fn gain(&self, i: usize) -> Gain {
        Gain::new(self.scales[i] * self.scales[i], self.noise_factors[i])
    }
}

/// Stride of each axis, `s_1` most significant.
pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut out = vec![1usize; dims.len()];
    for l in (0..dims.len().saturating_sub(1)).rev() {
        out[l] = out[l + 1] * dims[l + 1];
    }
    out
}

fn dims(designs: &[SquareFactorDesign]) -> Vec<usize> {
    designs.iter().map(|d| d.m()).collect()
}

#[inline]
fn signed<T: Sample>(c: i8, v: T) -> T {
    match c {
        1 => v,
        -1 => -v,
        _ => T::zero(),
    }
}

/// Combines `buf` along `axis` in place. Each output costs `m - 1` additions.
fn combine_axis<T: Sample>(
    buf: &mut [T],
    scratch: &mut Vec<T>,
    design: &SquareFactorDesign,
    stride: usize,
) -> u64 {
    let m = design.m();
    let block = m * stride;
    let alpha = design.alpha();
    let mut adds = 0u64;
    scratch.clear();
    scratch.resize(m, T::zero());
    for base in (0..buf.len()).step_by(block) {
        for lo in 0..stride {
            for (r, s) in scratch.iter_mut().enumerate() {
                *s = buf[base + r * stride + lo];
            }
            for (i, row) in alpha.iter().enumerate() {
                let mut acc = signed(row[0], scratch[0]);
                for r in 1..m {
                    acc = acc + signed(row[r], scratch[r]);
                    adds += 1;
                }
                buf[base + i * stride + lo] = acc;
            }
        }
    }
    adds
}

/// Applies the combining matrices of `designs[l]` for every `l` in `axes`, in the
/// order given. Scales and noise factors cover only the applied axes.
pub fn combine_axes<T: Sample>(
    y: &[T],
    designs: &[SquareFactorDesign],
    axes: &[usize],
) -> Result<SingletonSystem<T>> {
    let d = dims(designs);
    let total: usize = d.iter().product();
    if y.len() != total {
        return Err(Error::DimensionMismatch {
            expected: total,
            actual: y.len(),
        });
    }
    let st = strides(&d);
    let mut values = y.to_vec();
    let mut scratch = Vec::new();
    let mut ops = OpCount::default();
    let mut scales = vec![1i64; total];
    let mut noise_factors = vec![1i64; total];
    for &l in axes {
        let adds = combine_axis(&mut values, &mut scratch, &designs[l], st[l]);
        ops.adds += adds;
        ops.per_recursion.push(adds);
        let design = &designs[l];
        for i in 0..total {
            let s = (i / st[l]) % d[l];
            scales[i] *= design.weights()[s];
            noise_factors[i] *= design.row_nnz(s);
        }
    }
    Ok(SingletonSystem {
        values,
        scales,
        noise_factors,
        ops,
    })
}

/// Runs all `L` recursions, rightmost factor first.
pub fn detect_square<T: Sample>(y: &[T], designs: &[SquareFactorDesign]) -> Result<SingletonSystem<T>> {
    let axes: Vec<usize> = (0..designs.len()).rev().collect();
    combine_axes(y, designs, &axes)
}

/// Mixed-radix digits `(s_1, …, s_L)`, one-based, of one-based index `i`.
pub fn digits(i: usize, designs: &[SquareFactorDesign]) -> Result<Vec<usize>> {
    let d = dims(designs);
    let total: usize = d.iter().product();
    if i == 0 || i > total {
        return Err(Error::IndexOutOfRange { index: i, max: total });
    }
    let st = strides(&d);
    Ok(st.iter().zip(&d).map(|(&s, &m)| (i - 1) / s % m + 1).collect())
}

/// Product of per-recursion gains along the path of one-based index `i`.
pub fn overall_gain(i: usize, designs: &[SquareFactorDesign]) -> Result<Gain> {
    Ok(digits(i, designs)?
        .iter()
        .zip(designs)
        .map(|(&s, d)| d.gains()[s - 1])
        .product())
}

/// All `M` path gains ordered by symbol index.
pub fn gain_tree(designs: &[SquareFactorDesign]) -> Vec<Gain> {
    designs.iter().fold(vec![Gain::from_integer(1)], |acc, d| {
        acc.iter()
            .flat_map(|&a| d.gains().iter().map(move |&g| a * g))
            .collect()
    })
}

/// Nearest-point decisions on `values[i] / scales[i]`.
pub fn demodulate_singletons(sys: &SingletonSystem<Complex64>, c: &Constellation) -> Vec<usize> {
    sys.values
        .iter()
        .zip(&sys.scales)
        .map(|(&v, &w)| c.nearest(v / w as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn strides_are_mixed_radix() {
        assert_eq!(strides(&[3, 4]), vec![4, 1]);
        assert_eq!(strides(&[2, 3, 5]), vec![15, 5, 1]);
        assert!(strides(&[]).is_empty());
    }

    #[test]
    fn unit_impulse_on_first_user() {
        let designs = fixtures::p3_p4_designs();
        let g = fixtures::p3_p4_pattern();
        let mut x = vec![0i64; 12];
        x[0] = 1;
        let y = crate::patterns::expand(&g).unwrap().mul_vec(&x);
        let sys = detect_square(&y, &designs).unwrap();
        assert_eq!(sys.values[0], 4);
        assert_eq!(sys.scales[0], 4);
        assert!(sys.values[1..].iter().all(|&v| v == 0));
    }

    #[test]
    fn identity_design_passes_through() {
        let d = vec![SquareFactorDesign::trivial()];
        let sys = detect_square(&[2.5f64], &d).unwrap();
        assert_eq!(sys.values, vec![2.5]);
        assert_eq!(sys.gain(0), Gain::from_integer(1));
        assert_eq!(sys.ops.adds, 0);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let designs = fixtures::p3_p4_designs();
        let err = detect_square(&[0.0f64; 11], &designs).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                expected: 12,
                actual: 11
            }
        );
    }

    #[test]
    fn example_gains() {
        let designs = fixtures::p3_p4_designs();
        assert_eq!(digits(8, &designs).unwrap(), vec![2, 4]);
        let g43 = Gain::new(4, 3);
        for i in 1..=12 {
            let want = if i % 4 == 0 { g43 } else { g43 * g43 };
            assert_eq!(overall_gain(i, &designs).unwrap(), want, "index {i}");
        }
        assert_eq!(gain_tree(&designs).len(), 12);
        assert!(overall_gain(13, &designs).is_err());
        assert!(overall_gain(0, &designs).is_err());
    }

    #[test]
    fn op_count_matches_dense_bound() {
        let designs = fixtures::p3_p4_designs();
        let sys = detect_square(&[0.0f64; 12], &designs).unwrap();
        assert_eq!(sys.ops.adds, 60);
        assert_eq!(sys.ops.per_recursion, vec![36, 24]);
        assert_eq!(sys.ops.muls, 0);
    }
}
