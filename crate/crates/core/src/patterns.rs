//! Binary pattern matrices and their Kronecker algebra.
//!
//! Column `k` of a pattern matrix lists the resource elements used by user `k`.
//! Entries are stored dense, row-major, one byte each.

use std::fmt;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::designer::{find_combining, SquareFactorDesign};
use crate::{Error, Result};

/// Default cap on `rows * cols` for any matrix produced by [`kronecker`] or [`expand`].
pub const DEFAULT_SIZE_CAP: usize = 1 << 24;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix("matrix must be nonempty".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMatrix(format!("entry {v} is not 0 or 1")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::InvalidMatrix("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(rows.len(), cols, data)
    }

    /// Builds an `m x k` matrix from column bitmasks (LSB = first row).
    pub fn from_column_masks(m: usize, masks: &[u64]) -> Result<Self> {
        let mut data = vec![0u8; m * masks.len()];
        for (c, &mask) in masks.iter().enumerate() {
            for r in 0..m {
                data[r * masks.len() + c] = ((mask >> r) & 1) as u8;
            }
        }
        Self::new(m, masks.len(), data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0u8; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn row_weight(&self, r: usize) -> usize {
        self.row(r).iter().filter(|&&v| v == 1).count()
    }

    pub fn max_row_weight(&self) -> usize {
        (0..self.rows).map(|r| self.row_weight(r)).max().unwrap_or(0)
    }

    /// Column bitmask with the first row in the least significant bit.
    /// Only meaningful for matrices with at most 64 rows.
    pub fn column_mask(&self, c: usize) -> u64 {
        (0..self.rows.min(64)).fold(0u64, |acc, r| acc | (u64::from(self.get(r, c)) << r))
    }

    /// Copy with columns sorted by ascending bitmask.
    pub fn canonical_column_order(&self) -> (BinaryMatrix, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.cols).collect();
        order.sort_by_key(|&c| (self.column_mask(c), c));
        let mut data = vec![0u8; self.data.len()];
        for (new_c, &old_c) in order.iter().enumerate() {
            for r in 0..self.rows {
                data[r * self.cols + new_c] = self.get(r, old_c);
            }
        }
        (
            BinaryMatrix {
                rows: self.rows,
                cols: self.cols,
                data,
            },
            order,
        )
    }

    /// Rank over the rationals (fraction-free elimination on i128).
    pub fn rank(&self) -> usize {
        let mut a: Vec<Vec<i128>> = (0..self.rows)
            .map(|r| self.row(r).iter().map(|&v| i128::from(v)).collect())
            .collect();
        let mut rank = 0;
        for c in 0..self.cols {
            let Some(p) = (rank..self.rows).find(|&r| a[r][c] != 0) else {
                continue;
            };
            a.swap(rank, p);
            for r in 0..self.rows {
                if r != rank && a[r][c] != 0 {
                    let (f, g) = (a[rank][c], a[r][c]);
                    let pivot = a[rank].clone();
                    for (x, &y) in a[r].iter_mut().zip(&pivot) {
                        *x = *x * f - y * g;
                    }
                    let d = a[r].iter().fold(0i128, |d, &v| num_integer::gcd(d, v));
                    if d > 1 {
                        a[r].iter_mut().for_each(|v| *v /= d);
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// Dense real matrix-vector product `self * x`.
    pub fn mul_vec<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + Zero + std::ops::Add<Output = T>,
    {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .filter(|(&g, _)| g == 1)
                    .fold(T::zero(), |acc, (_, &v)| acc + v)
            })
            .collect()
    }
}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMatrix{:?}", self.to_rows())
    }
}

impl fmt::Display for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Kronecker product with the default size cap.
pub fn kronecker(a: &BinaryMatrix, b: &BinaryMatrix) -> Result<BinaryMatrix> {
    kronecker_capped(a, b, DEFAULT_SIZE_CAP)
}

pub fn kronecker_capped(a: &BinaryMatrix, b: &BinaryMatrix, cap: usize) -> Result<BinaryMatrix> {
    let rows = a.rows.checked_mul(b.rows);
    let cols = a.cols.checked_mul(b.cols);
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) if r.checked_mul(c).is_some_and(|n| n <= cap) => (r, c),
        _ => {
            return Err(Error::DimensionOverflow {
                rows: a.rows.saturating_mul(b.rows),
                cols: a.cols.saturating_mul(b.cols),
                cap,
            })
        }
    };
    let mut data = vec![0u8; rows * cols];
    for ar in 0..a.rows {
        for ac in 0..a.cols {
            if a.get(ar, ac) == 0 {
                continue;
            }
            for br in 0..b.rows {
                let r = ar * b.rows + br;
                let dst = &mut data[r * cols + ac * b.cols..r * cols + (ac + 1) * b.cols];
                dst.copy_from_slice(b.row(br));
            }
        }
    }
    Ok(BinaryMatrix { rows, cols, data })
}

/// Left fold of [`kronecker`] over `factors`; an empty list gives `[1]`.
pub fn kronecker_all<'a, I>(factors: I, cap: usize) -> Result<BinaryMatrix>
where
    I: IntoIterator<Item = &'a BinaryMatrix>,
{
    factors
        .into_iter()
        .try_fold(BinaryMatrix::identity(1), |acc, f| kronecker_capped(&acc, f, cap))
}

/// Column validity of a factor matrix. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FactorReport {
    pub zero_columns: Vec<usize>,
    /// Groups of two or more columns that are equal to each other.
    pub duplicate_groups: Vec<Vec<usize>>,
}

impl FactorReport {
    pub fn is_valid(&self) -> bool {
        self.zero_columns.is_empty() && self.duplicate_groups.is_empty()
    }
}

pub fn validate_factor(m: &BinaryMatrix) -> FactorReport {
    let columns: Vec<Vec<u8>> = (0..m.cols).map(|c| m.column(c)).collect();
    let zero_columns = (0..m.cols)
        .filter(|&c| columns[c].iter().all(|&v| v == 0))
        .collect();
    let mut duplicate_groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = vec![false; m.cols];
    for c in 0..m.cols {
        if seen[c] {
            continue;
        }
        let group: Vec<usize> = (c..m.cols).filter(|&d| columns[d] == columns[c]).collect();
        for &d in &group {
            seen[d] = true;
        }
        if group.len() > 1 {
            duplicate_groups.push(group);
        }
    }
    FactorReport {
        zero_columns,
        duplicate_groups,
    }
}

/// Binomial coefficient with big-integer arithmetic.
pub fn binomial(n: &BigUint, k: u64) -> BigUint {
    let k_big = BigUint::from(k);
    if k_big > *n {
        return BigUint::zero();
    }
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * (n - BigUint::from(i)) / BigUint::from(i + 1);
    }
    acc
}

/// Number of unordered sets of `k` distinct nonzero columns of height `m`,
/// i.e. `C(2^m - 1, k)`.
pub fn search_space_size(m: usize, k: usize) -> Result<BigUint> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidMatrix("dimensions must be positive".into()));
    }
    let columns = (BigUint::one() << m) - BigUint::one();
    if BigUint::from(k) > columns {
        return Err(Error::InfeasibleDims { m, k });
    }
    Ok(binomial(&columns, k as u64))
}

/// Design-space size of a factorized pattern: the product of per-factor counts.
pub fn factored_search_space(dims: &[(usize, usize)]) -> Result<BigUint> {
    dims.iter()
        .try_fold(BigUint::one(), |acc, &(m, k)| Ok(acc * search_space_size(m, k)?))
}

/// A pattern `F(1) ⊗ … ⊗ F(Lr) ⊗ P(1) ⊗ … ⊗ P(Ls)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KroneckerPattern {
    rect: Vec<BinaryMatrix>,
    square: Vec<SquareFactorDesign>,
}

impl KroneckerPattern {
    pub fn new(rect: Vec<BinaryMatrix>, square: Vec<SquareFactorDesign>) -> Result<Self> {
        if rect.is_empty() && square.is_empty() {
            return Err(Error::InvalidPattern("pattern has no factors".into()));
        }
        for (i, f) in rect.iter().enumerate() {
            if f.cols <= f.rows {
                return Err(Error::InvalidPattern(format!(
                    "rectangular factor {} is {}x{}; needs more columns than rows",
                    i + 1,
                    f.rows,
                    f.cols
                )));
            }
            if let Some(c) = validate_factor(f).zero_columns.first() {
                return Err(Error::InvalidPattern(format!(
                    "rectangular factor {} has an all-zero column {}",
                    i + 1,
                    c + 1
                )));
            }
        }
        Ok(Self { rect, square })
    }

    /// Builds the pattern from raw factors, running the combining search on
    /// every square factor.
    pub fn from_factors(rect: Vec<BinaryMatrix>, square: Vec<BinaryMatrix>) -> Result<Self> {
        let designs = square
            .into_iter()
            .map(|p| {
                if !p.is_square() {
                    return Err(Error::InvalidPattern(format!(
                        "square factor is {}x{}",
                        p.rows, p.cols
                    )));
                }
                find_combining(&p).ok_or(Error::NoCombiningMatrix)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rect, designs)
    }

    pub fn rect_factors(&self) -> &[BinaryMatrix] {
        &self.rect
    }

    pub fn square_designs(&self) -> &[SquareFactorDesign] {
        &self.square
    }

    /// Product of rectangular row dims.
    pub fn m_rect(&self) -> usize {
        self.rect.iter().map(|f| f.rows).product()
    }

    /// Product of rectangular column dims.
    pub fn k_rect(&self) -> usize {
        self.rect.iter().map(|f| f.cols).product()
    }

    /// Product of square dims.
    pub fn m_square(&self) -> usize {
        self.square.iter().map(|d| d.m()).product()
    }

    pub fn m(&self) -> usize {
        self.m_rect() * self.m_square()
    }

    pub fn k(&self) -> usize {
        self.k_rect() * self.m_square()
    }

    /// Overload factor `K / M`.
    pub fn beta(&self) -> Ratio<u64> {
        Ratio::new(self.k() as u64, self.m() as u64)
    }

    /// The expanded rectangular sub-pattern, `[1]` when there is none.
    pub fn rect_product(&self) -> Result<BinaryMatrix> {
        kronecker_all(&self.rect, DEFAULT_SIZE_CAP)
    }

    pub fn to_spec(&self) -> PatternSpec {
        PatternSpec {
            rect: self.rect.iter().map(|f| f.to_rows()).collect(),
            square: self.square.iter().map(|d| d.p().to_rows()).collect(),
        }
    }
}

pub fn expand(p: &KroneckerPattern) -> Result<BinaryMatrix> {
    expand_capped(p, DEFAULT_SIZE_CAP)
}

pub fn expand_capped(p: &KroneckerPattern, cap: usize) -> Result<BinaryMatrix> {
    kronecker_all(p.rect.iter().chain(p.square.iter().map(|d| d.p())), cap)
}

/// On-disk pattern description shared by every CLI command:
/// `{"rect": [[[1,0,1],[1,1,0]], …], "square": [[[1,1,0],[1,0,1],[0,1,1]], …]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PatternSpec {
    #[serde(default)]
    pub rect: Vec<Vec<Vec<u8>>>,
    #[serde(default)]
    pub square: Vec<Vec<Vec<u8>>>,
}

impl PatternSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pattern spec serializes")
    }

    pub fn build(&self) -> Result<KroneckerPattern> {
        let rect = self
            .rect
            .iter()
            .map(|rows| BinaryMatrix::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        let square = self
            .square
            .iter()
            .map(|rows| BinaryMatrix::from_rows(rows))
            .collect::<Result<Vec<_>>>()?;
        KroneckerPattern::from_factors(rect, square)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[u8]]) -> BinaryMatrix {
        BinaryMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn kronecker_of_1x2_2x3_pair() {
        let a = m(&[&[1, 1]]);
        let b = m(&[&[1, 0, 1], &[1, 1, 0]]);
        let k = kronecker(&a, &b).unwrap();
        assert_eq!(k.to_rows(), vec![vec![1, 0, 1, 1, 0, 1], vec![1, 1, 0, 1, 1, 0]]);
    }

    #[test]
    fn kronecker_with_unit_is_identity() {
        let a = m(&[&[1, 0, 1], &[0, 1, 1]]);
        assert_eq!(kronecker(&a, &BinaryMatrix::identity(1)).unwrap(), a);
        assert_eq!(kronecker(&BinaryMatrix::identity(1), &a).unwrap(), a);
    }

    #[test]
    fn kronecker_dims_multiply() {
        let a = BinaryMatrix::new(2, 3, vec![1; 6]).unwrap();
        let b = BinaryMatrix::new(3, 3, vec![1; 9]).unwrap();
        let k = kronecker(&a, &b).unwrap();
        assert_eq!((k.rows(), k.cols()), (6, 9));
    }

    #[test]
    fn kronecker_respects_cap() {
        let a = BinaryMatrix::new(4, 4, vec![1; 16]).unwrap();
        let err = kronecker_capped(&a, &a, 255).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionOverflow {
                rows: 16,
                cols: 16,
                cap: 255
            }
        ));
        assert!(kronecker_capped(&a, &a, 256).is_ok());
    }

    #[test]
    fn validate_reports_duplicates_and_zeros() {
        assert!(validate_factor(&m(&[&[1, 1, 0], &[1, 0, 1], &[0, 1, 1]])).is_valid());
        let dup = validate_factor(&m(&[&[1, 1], &[1, 1]]));
        assert_eq!(dup.duplicate_groups, vec![vec![0, 1]]);
        assert!(dup.zero_columns.is_empty());
        let zero = validate_factor(&m(&[&[0], &[0]]));
        assert_eq!(zero.zero_columns, vec![0]);
    }

    #[test]
    fn search_space_counts() {
        assert_eq!(
            factored_search_space(&[(2, 3), (3, 3)]).unwrap(),
            BigUint::from(35u32)
        );
        assert_eq!(search_space_size(6, 9).unwrap(), BigUint::from(23_667_689_815u64));
        assert_eq!(search_space_size(1, 1).unwrap(), BigUint::one());
        assert!(matches!(
            search_space_size(2, 4),
            Err(Error::InfeasibleDims { m: 2, k: 4 })
        ));
    }

    #[test]
    fn rank_detects_dependence() {
        assert_eq!(m(&[&[1, 1, 0], &[1, 0, 1], &[0, 1, 1]]).rank(), 3);
        assert_eq!(m(&[&[1, 1, 0], &[0, 0, 1], &[1, 1, 1]]).rank(), 2);
        assert_eq!(BinaryMatrix::identity(5).rank(), 5);
    }

    #[test]
    fn canonical_order_sorts_masks() {
        let p2 = m(&[&[0, 0, 0, 1], &[0, 1, 1, 0], &[1, 0, 1, 0], &[1, 1, 0, 0]]);
        let (c, order) = p2.canonical_column_order();
        assert_eq!(order, vec![3, 2, 1, 0]);
        let masks: Vec<u64> = (0..4).map(|i| c.column_mask(i)).collect();
        assert_eq!(masks, vec![1, 6, 10, 12]);
    }

    #[test]
    fn spec_round_trips_through_json() {
        let json = r#"{"rect":[[[1,1]]],"square":[[[1,1,0],[1,0,1],[0,1,1]]]}"#;
        let spec = PatternSpec::from_json(json).unwrap();
        assert_eq!(spec.to_json(), json);
        let p = spec.build().unwrap();
        assert_eq!((p.m(), p.k()), (3, 6));
        assert_eq!(p.beta(), Ratio::new(2, 1));
    }

    #[test]
    fn rect_factor_must_be_wide() {
        let err = KroneckerPattern::new(vec![BinaryMatrix::identity(2)], vec![]).unwrap_err();
        assert!(matches!(err, Error::InvalidPattern(_)));
    }
}
