//! The binary matching matrix and its filtering into a maximum one-to-one
//! assignment.
//!
//! Because entries are binary, filtering reduces to maximum-cardinality
//! bipartite matching: a greedy seeding pass (each row takes its
//! lowest-index free column) followed by augmenting-path improvement for
//! the rows left unmatched, both in increasing row order. The procedure is
//! fully deterministic, which fixes which optimum is returned when several
//! exist.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("matrix must have at least one row and one column (got {m}×{n})")]
    EmptyDimension { m: usize, n: usize },
    #[error("matrix rows must all have the same length")]
    Ragged,
    #[error("matrix entries must be 0 or 1")]
    NonBinary,
    #[error("size guard exceeded: {cells} cells > {max}")]
    SizeGuard { cells: usize, max: usize },
}

/// An m×n binary matrix marking which (annotated, predicted) step pairs
/// the scorer judged equivalent. One-to-many marks are allowed here;
/// filtering removes them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchMatrix {
    m: usize,
    n: usize,
    data: Vec<bool>,
}

impl MatchMatrix {
    pub fn zeros(m: usize, n: usize) -> Result<Self, MatchingError> {
        if m == 0 || n == 0 {
            return Err(MatchingError::EmptyDimension { m, n });
        }
        Ok(MatchMatrix {
            m,
            n,
            data: vec![false; m * n],
        })
    }

    /// Builds from rows of 0/1 values.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, MatchingError> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        let mut matrix = MatchMatrix::zeros(m, n)?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(MatchingError::Ragged);
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => matrix.set(i, j, true),
                    _ => return Err(MatchingError::NonBinary),
                }
            }
        }
        Ok(matrix)
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.n + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.n + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn transposed(&self) -> MatchMatrix {
        let mut t = MatchMatrix {
            m: self.n,
            n: self.m,
            data: vec![false; self.m * self.n],
        };
        for i in 0..self.m {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }
}

/// A one-to-one subset of a matrix's 1-entries, with maximum cardinality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// Pairs sorted by row index. Callers constructing assignments by hand
    /// (tests, oracles) get the same ordering guarantee.
    pub fn new(mut pairs: Vec<(usize, usize)>) -> Self {
        pairs.sort_unstable();
        Assignment { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn cardinality(&self) -> usize {
        self.pairs.len()
    }

    /// Column matched to `row`, if any.
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|&&(r, _)| r == row)
            .map(|&(_, c)| c)
    }
}

fn augment(
    matrix: &MatchMatrix,
    row: usize,
    seen: &mut [bool],
    col_of_row: &mut [Option<usize>],
    row_of_col: &mut [Option<usize>],
) -> bool {
    for col in 0..matrix.cols() {
        if matrix.get(row, col) && !seen[col] {
            seen[col] = true;
            let free = match row_of_col[col] {
                None => true,
                Some(other) => augment(matrix, other, seen, col_of_row, row_of_col),
            };
            if free {
                row_of_col[col] = Some(row);
                col_of_row[row] = Some(col);
                return true;
            }
        }
    }
    false
}

/// Filters a matching matrix down to a maximum one-to-one assignment.
///
/// Tie-breaking among equal-cardinality optima: rows are seeded in
/// increasing index with the lowest-index free column, then unmatched rows
/// run augmenting-path search in row order, scanning columns in increasing
/// index. `[[1,1],[1,1]]` therefore resolves to `{(0,0),(1,1)}`.
pub fn filter_matrix(matrix: &MatchMatrix) -> Assignment {
    let (m, n) = (matrix.rows(), matrix.cols());
    let mut col_of_row: Vec<Option<usize>> = vec![None; m];
    let mut row_of_col: Vec<Option<usize>> = vec![None; n];

    for row in 0..m {
        for col in 0..n {
            if matrix.get(row, col) && row_of_col[col].is_none() {
                col_of_row[row] = Some(col);
                row_of_col[col] = Some(row);
                break;
            }
        }
    }

    for row in 0..m {
        if col_of_row[row].is_none() {
            let mut seen = vec![false; n];
            augment(matrix, row, &mut seen, &mut col_of_row, &mut row_of_col);
        }
    }

    let pairs = col_of_row
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (r, c)))
        .collect();
    Assignment::new(pairs)
}

const BRUTE_FORCE_MAX_CELLS: usize = 64;

/// Exact maximum one-to-one cardinality by exhaustive search over partial
/// row→column injections (memoized on the used-column set). Independent of
/// [`filter_matrix`]; serves as its oracle.
pub fn brute_force_max_matching(matrix: &MatchMatrix) -> Result<usize, MatchingError> {
    let cells = matrix.rows() * matrix.cols();
    if cells > BRUTE_FORCE_MAX_CELLS {
        return Err(MatchingError::SizeGuard {
            cells,
            max: BRUTE_FORCE_MAX_CELLS,
        });
    }

    fn go(
        matrix: &MatchMatrix,
        row: usize,
        used: u64,
        memo: &mut HashMap<(usize, u64), usize>,
    ) -> usize {
        if row == matrix.rows() {
            return 0;
        }
        if let Some(&best) = memo.get(&(row, used)) {
            return best;
        }
        let mut best = go(matrix, row + 1, used, memo);
        for col in 0..matrix.cols() {
            let bit = 1u64 << col;
            if matrix.get(row, col) && used & bit == 0 {
                best = best.max(1 + go(matrix, row + 1, used | bit, memo));
            }
        }
        memo.insert((row, used), best);
        best
    }

    Ok(go(matrix, 0, 0, &mut HashMap::new()))
}

/// Diagnostic for the tie-break sensitivity question: true when `found` is
/// the only maximum one-to-one assignment of `matrix`. When any matched
/// edge can be removed without lowering the optimum, a different optimum
/// exists.
pub fn optimum_is_unique(matrix: &MatchMatrix, found: &Assignment) -> bool {
    let k = found.cardinality();
    for &(r, c) in found.pairs() {
        let mut reduced = matrix.clone();
        reduced.set(r, c, false);
        if filter_matrix(&reduced).cardinality() == k {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[u8]]) -> MatchMatrix {
        MatchMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn example_matrix_filters_to_two_pairs() {
        let m = matrix(&[&[0, 1], &[1, 1]]);
        let a = filter_matrix(&m);
        assert_eq!(a.pairs(), &[(0, 1), (1, 0)]);
        assert_eq!(a.cardinality(), 2);
    }

    #[test]
    fn identity_matrix_matches_diagonal() {
        let m = matrix(&[&[1, 0, 0], &[0, 1, 0], &[0, 0, 1]]);
        let a = filter_matrix(&m);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn all_zeros_matches_nothing() {
        let m = matrix(&[&[0, 0, 0], &[0, 0, 0]]);
        let a = filter_matrix(&m);
        assert_eq!(a.cardinality(), 0);
        assert_eq!(brute_force_max_matching(&m).unwrap(), 0);
    }

    #[test]
    fn all_ones_ties_break_lexicographically() {
        let m = matrix(&[&[1, 1], &[1, 1]]);
        let a = filter_matrix(&m);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1)]);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(
            brute_force_max_matching(&matrix(&[&[0, 1], &[1, 1]])).unwrap(),
            2
        );
        assert_eq!(brute_force_max_matching(&matrix(&[&[1]])).unwrap(), 1);
    }

    #[test]
    fn brute_force_guard() {
        let m = MatchMatrix::zeros(9, 9).unwrap();
        assert_eq!(
            brute_force_max_matching(&m),
            Err(MatchingError::SizeGuard { cells: 81, max: 64 })
        );
    }

    #[test]
    fn pairs_sit_on_one_entries_and_are_injective() {
        let m = matrix(&[&[1, 1, 0], &[1, 0, 1], &[0, 1, 1]]);
        let a = filter_matrix(&m);
        let mut rows = std::collections::BTreeSet::new();
        let mut cols = std::collections::BTreeSet::new();
        for &(r, c) in a.pairs() {
            assert!(m.get(r, c));
            assert!(rows.insert(r));
            assert!(cols.insert(c));
        }
    }

    #[test]
    fn non_binary_entries_rejected() {
        assert_eq!(
            MatchMatrix::from_rows(&[vec![0, 2]]),
            Err(MatchingError::NonBinary)
        );
    }

    #[test]
    fn unique_optimum_detection() {
        let identity = matrix(&[&[1, 0], &[0, 1]]);
        assert!(optimum_is_unique(&identity, &filter_matrix(&identity)));
        let all = matrix(&[&[1, 1], &[1, 1]]);
        assert!(!optimum_is_unique(&all, &filter_matrix(&all)));
        let zero = matrix(&[&[0, 0], &[0, 0]]);
        assert!(optimum_is_unique(&zero, &filter_matrix(&zero)));
    }

    #[test]
    fn exhaustive_small_shapes_match_oracle() {
        for m in 1..=3usize {
            for n in 1..=3usize {
                let cells = m * n;
                for bits in 0..(1u32 << cells) {
                    let mut mat = MatchMatrix::zeros(m, n).unwrap();
                    for cell in 0..cells {
                        if bits & (1 << cell) != 0 {
                            mat.set(cell / n, cell % n, true);
                        }
                    }
                    let found = filter_matrix(&mat).cardinality();
                    let expect = brute_force_max_matching(&mat).unwrap();
                    assert_eq!(found, expect, "m={m} n={n} bits={bits:b}");
                }
            }
        }
    }
}
