//! Reference patterns and policies used by tests, benches and the CLI.

use crate::designer::{find_combining, SquareFactorDesign};
use crate::general::{Reform, SicPolicy, SicStep};
use crate::patterns::{BinaryMatrix, KroneckerPattern};

fn m<const C: usize>(rows: &[[u8; C]]) -> BinaryMatrix {
    BinaryMatrix::from_rows(rows).expect("fixture matrix is valid")
}

fn design(p: BinaryMatrix) -> SquareFactorDesign {
    find_combining(&p).expect("fixture factor has a combining matrix")
}

/// The 3x3 factor with gains (4/3, 4/3, 4/3).
pub fn p3() -> BinaryMatrix {
    m(&[[1, 1, 0], [1, 0, 1], [0, 1, 1]])
}

/// The 4x4 factor with gains (4/3, 4/3, 4/3, 1).
pub fn p4() -> BinaryMatrix {
    m(&[[0, 0, 0, 1], [0, 1, 1, 0], [1, 0, 1, 0], [1, 1, 0, 0]])
}

pub fn p3_p4_designs() -> Vec<SquareFactorDesign> {
    vec![design(p3()), design(p4())]
}

/// `P3 ⊗ P4`: 12 users on 12 resources.
pub fn p3_p4_pattern() -> KroneckerPattern {
    KroneckerPattern::new(vec![], p3_p4_designs()).expect("valid pattern")
}

pub fn f_1x2() -> BinaryMatrix {
    m(&[[1, 1]])
}

pub fn f_2x3() -> BinaryMatrix {
    m(&[[1, 0, 1], [1, 1, 0]])
}

/// `[1 1] ⊗ F ⊗ F` with `F` 2x3: 18 users on 4 resources.
pub fn chain_1x2_2x3_2x3() -> KroneckerPattern {
    KroneckerPattern::new(vec![f_1x2(), f_2x3(), f_2x3()], vec![]).expect("valid pattern")
}

/// `[1 1] ⊗ F`: 6 users on 2 resources.
pub fn pair_1x2_2x3() -> KroneckerPattern {
    KroneckerPattern::new(vec![f_1x2(), f_2x3()], vec![]).expect("valid pattern")
}

/// 4x8 pattern with row weight 4 and column weights (3, 2, 2, 2, 2, 2, 2, 1).
pub fn pdma_4x8() -> BinaryMatrix {
    BinaryMatrix::from_column_masks(
        4,
        &[0b0111, 0b0011, 0b0101, 0b1001, 0b0110, 0b1010, 0b1100, 0b1000],
    )
    .expect("valid mask list")
}

/// `F(4x8) ⊗ P3 ⊗ … ⊗ P3` with `r` square factors.
pub fn pdma_p3_pattern(r: usize) -> KroneckerPattern {
    KroneckerPattern::new(vec![pdma_4x8()], vec![design(p3()); r]).expect("valid pattern")
}

/// Detect rows 1 and 2 of the leftmost factor, then rebuild row 3 from rows 2 and 3.
pub fn p3_sic_policy() -> SicPolicy {
    SicPolicy {
        steps: vec![SicStep {
            detect: vec![1, 2],
            reform: vec![Reform {
                target: 3,
                from: vec![2, 3],
                subtract: vec![1, 2],
            }],
        }],
    }
}
