//! Rectangular minimum-cost bipartite assignment and the score matrices used
//! for both tracking and training-time instance assignment.
//!
//! The solver runs the O(n³) potentials form of the Hungarian algorithm on a
//! zero-padded square matrix, then extracts the lexicographically smallest
//! pair list among all optima from the zero-reduced-cost subgraph. By
//! complementary slackness every optimal assignment uses only tight edges, so
//! the refinement never leaves the optimal set.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{BinaryMask, QuerySet};

/// A validated n×m cost matrix; lower cost is better.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Array2<f64>,
}

impl CostMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::input("cost matrix must have at least one row and column"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("cost matrix contains a non-finite entry"));
        }
        Ok(CostMatrix { values })
    }

    /// Convert a score matrix (higher is better) into costs by negation.
    pub fn from_scores(scores: &Array2<f64>) -> Result<Self> {
        CostMatrix::new(scores.mapv(|s| -s))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// A maximal partial matching: exactly `min(n, m)` row/column pairs, each
/// index used at most once, sorted by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    /// The unique assignment of a problem with zero columns (or rows).
    pub fn empty() -> Assignment {
        Assignment { pairs: Vec::new() }
    }

    /// Build from explicit pairs, enforcing injectivity on both sides.
    /// The pairs are stored sorted by row.
    pub fn from_pairs(mut pairs: Vec<(usize, usize)>) -> Result<Assignment> {
        pairs.sort_unstable();
        for window in pairs.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::input("assignment reuses a row index"));
            }
        }
        let mut cols: Vec<usize> = pairs.iter().map(|&(_, c)| c).collect();
        cols.sort_unstable();
        if cols.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("assignment reuses a column index"));
        }
        Ok(Assignment { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Column matched to `row`, if any.
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(r, _)| *r == row)
            .map(|&(_, c)| c)
    }

    /// Row matched to `col`, if any.
    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(_, c)| *c == col)
            .map(|&(r, _)| r)
    }

    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs
            .iter()
            .map(|&(r, c)| cost.values()[(r, c)])
            .sum()
    }
}

/// Minimum-cost maximal matching with a deterministic tie-break: among all
/// optima, the lexicographically smallest pair list is returned.
pub fn hungarian(cost: &CostMatrix) -> Assignment {
    let n = cost.rows();
    let m = cost.cols();
    let s = n.max(m);

    // Shift so the padded entries (0.0) never undercut real entries and the
    // solver sees a nonnegative matrix; a constant shift per cell changes
    // every maximal matching's cost equally.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in cost.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut padded = Array2::<f64>::zeros((s, s));
    for i in 0..n {
        for j in 0..m {
            padded[(i, j)] = cost.values()[(i, j)] - lo;
        }
    }

    let (mut mate_of_row, u, v) = solve_square(&padded);
    let mut mate_of_col = vec![usize::MAX; s];
    for (r, &c) in mate_of_row.iter().enumerate() {
        mate_of_col[c] = r;
    }

    // Tight edges of the final duals; every optimal matching lives here.
    let eps = 1e-9 * (1.0 + (hi - lo).abs());
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); s];
    for i in 0..s {
        let mut real: Vec<usize> = Vec::new();
        let mut dummy: Vec<usize> = Vec::new();
        for j in 0..s {
            if padded[(i, j)] - u[i] - v[j] <= eps {
                if j < m {
                    real.push(j);
                } else {
                    dummy.push(j);
                }
            }
        }
        // Real columns first: a matched row always precedes an unmatched one
        // in the sorted pair list.
        real.extend(dummy);
        adj[i] = real;
    }

    lexicographic_refine(s, n, &adj, &mut mate_of_row, &mut mate_of_col);

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .filter(|&i| mate_of_row[i] < m)
        .map(|i| (i, mate_of_row[i]))
        .collect();
    pairs.sort_unstable();
    Assignment { pairs }
}

/// Potentials-based Hungarian algorithm on a square matrix. Returns the
/// matched column per row plus final dual potentials `(u, v)` satisfying
/// `a[i][j] - u[i] - v[j] >= 0` with equality on matched edges.
fn solve_square(a: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let s = a.nrows();
    let inf = f64::INFINITY;
    // 1-based arrays; index 0 is the sentinel column.
    let mut u = vec![0.0f64; s + 1];
    let mut v = vec![0.0f64; s + 1];
    let mut p = vec![0usize; s + 1];
    let mut way = vec![0usize; s + 1];
    for i in 1..=s {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; s + 1];
        let mut used = vec![false; s + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=s {
                if !used[j] {
                    let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=s {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![usize::MAX; s];
    for j in 1..=s {
        col_of_row[p[j] - 1] = j - 1;
    }
    let ru: Vec<f64> = u[1..=s].to_vec();
    let rv: Vec<f64> = v[1..=s].to_vec();
    (col_of_row, ru, rv)
}

/// Rewrites the perfect matching in-place into the lexicographically smallest
/// one on the tight-edge graph: rows are fixed in order, each to its smallest
/// feasible column, feasibility checked by rematching the displaced row.
fn lexicographic_refine(
    s: usize,
    real_rows: usize,
    adj: &[Vec<usize>],
    mate_of_row: &mut [usize],
    mate_of_col: &mut [usize],
) {
    let mut locked_col = vec![false; s];
    for i in 0..real_rows.min(s) {
        let mut locked = false;
        for &c in &adj[i] {
            if locked_col[c] {
                continue;
            }
            if mate_of_row[i] == c {
                locked_col[c] = true;
                locked = true;
                break;
            }
            let r_old = mate_of_col[c];
            let j_old = mate_of_row[i];
            mate_of_row[i] = c;
            mate_of_col[c] = i;
            mate_of_row[r_old] = usize::MAX;
            mate_of_col[j_old] = usize::MAX;
            locked_col[c] = true;
            let mut visited = vec![false; s];
            if kuhn_augment(r_old, adj, &mut visited, mate_of_row, mate_of_col, &locked_col) {
                locked = true;
                break;
            }
            // Roll back the tentative swap and try the next column.
            locked_col[c] = false;
            mate_of_row[r_old] = c;
            mate_of_col[c] = r_old;
            mate_of_row[i] = j_old;
            mate_of_col[j_old] = i;
        }
        // The pre-existing mate is always feasible, so a lock must happen.
        debug_assert!(locked, "row {i} could not be locked to any tight edge");
    }
}

fn kuhn_augment(
    row: usize,
    adj: &[Vec<usize>],
    visited: &mut [bool],
    mate_of_row: &mut [usize],
    mate_of_col: &mut [usize],
    locked_col: &[bool],
) -> bool {
    for &c in &adj[row] {
        if locked_col[c] || visited[c] {
            continue;
        }
        visited[c] = true;
        let owner = mate_of_col[c];
        if owner == usize::MAX
            || kuhn_augment(owner, adj, visited, mate_of_row, mate_of_col, locked_col)
        {
            mate_of_row[row] = c;
            mate_of_col[c] = row;
            return true;
        }
    }
    false
}

/// Pairwise cosine similarities between two query sets, entry (i, j) in
/// [-1, 1]. Zero-norm rows score 0 against everything so that zeroed null
/// slots never win a match on direction alone.
pub fn cosine_score_matrix(prev: &QuerySet, next: &QuerySet) -> Result<Array2<f64>> {
    if prev.dim() != next.dim() {
        return Err(Error::input(format!(
            "embedding dimensions differ: {} vs {}",
            prev.dim(),
            next.dim()
        )));
    }
    let norms_a: Vec<f64> = (0..prev.len())
        .map(|i| prev.row(i).dot(&prev.row(i)).sqrt())
        .collect();
    let norms_b: Vec<f64> = (0..next.len())
        .map(|j| next.row(j).dot(&next.row(j)).sqrt())
        .collect();
    let mut out = Array2::<f64>::zeros((prev.len(), next.len()));
    for i in 0..prev.len() {
        if norms_a[i] == 0.0 {
            continue;
        }
        for j in 0..next.len() {
            if norms_b[j] == 0.0 {
                continue;
            }
            let dot = prev.row(i).dot(&next.row(j));
            out[(i, j)] = (dot / (norms_a[i] * norms_b[j])).clamp(-1.0, 1.0);
        }
    }
    Ok(out)
}

/// Pairwise mask IoU, entry (i, j) in [0, 1]. A pair of empty masks scores 0,
/// so dead slots carry no overlap evidence.
pub fn mask_iou_matrix(prev: &[BinaryMask], next: &[BinaryMask]) -> Result<Array2<f64>> {
    let dim = prev
        .first()
        .or_else(|| next.first())
        .map(|m| m.dim());
    for mask in prev.iter().chain(next.iter()) {
        if Some(mask.dim()) != dim {
            return Err(Error::input("mask dimensions differ within the IoU matrix"));
        }
    }
    let mut out = Array2::<f64>::zeros((prev.len(), next.len()));
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            out[(i, j)] = mask_iou(a, b);
        }
    }
    Ok(out)
}

/// IoU of two same-shape binary masks; 0 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b.iter()) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Equal-weight blend of a cosine score matrix and a mask-IoU matrix.
pub fn combined_score_matrix(cos: &Array2<f64>, iou: &Array2<f64>) -> Result<Array2<f64>> {
    if cos.dim() != iou.dim() {
        return Err(Error::input(format!(
            "score matrix shapes differ: {:?} vs {:?}",
            cos.dim(),
            iou.dim()
        )));
    }
    Ok(0.5 * cos + 0.5 * iou)
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    /// Exhaustive oracle: every injective map over min(n, m) pairs.
    fn brute_force_all_optima(cost: &Array2<f64>, tol: f64) -> (f64, Vec<Vec<(usize, usize)>>) {
        let n = cost.nrows();
        let m = cost.ncols();
        let mut best = f64::INFINITY;
        let mut optima: Vec<Vec<(usize, usize)>> = Vec::new();
        if n <= m {
            for cols in (0..m).permutations(n) {
                let total: f64 = cols.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
                let pairs: Vec<(usize, usize)> =
                    cols.iter().enumerate().map(|(i, &j)| (i, j)).collect();
                if total < best - tol {
                    best = total;
                    optima = vec![pairs];
                } else if (total - best).abs() <= tol {
                    optima.push(pairs);
                }
            }
        } else {
            for rows in (0..n).permutations(m) {
                let total: f64 = rows.iter().enumerate().map(|(j, &i)| cost[(i, j)]).sum();
                let mut pairs: Vec<(usize, usize)> =
                    rows.iter().enumerate().map(|(j, &i)| (i, j)).collect();
                pairs.sort_unstable();
                if total < best - tol {
                    best = total;
                    optima = vec![pairs];
                } else if (total - best).abs() <= tol {
                    optima.push(pairs);
                }
            }
        }
        (best, optima)
    }

    fn brute_force_lex(cost: &Array2<f64>, tol: f64) -> (f64, Vec<(usize, usize)>) {
        let (best, optima) = brute_force_all_optima(cost, tol);
        (best, optima.into_iter().min().unwrap())
    }

    #[test]
    fn zero_diagonal_identity() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let a = hungarian(&cost);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1)]);
        assert_eq!(a.total_cost(&cost), 0.0);
    }

    #[test]
    fn rectangular_two_by_three() {
        let cost = CostMatrix::new(array![[5.0, 1.0, 9.0], [1.0, 9.0, 9.0]]).unwrap();
        let a = hungarian(&cost);
        assert_eq!(a.pairs(), &[(0, 1), (1, 0)]);
        assert_eq!(a.total_cost(&cost), 2.0);
        let (best, lex) = brute_force_lex(cost.values(), 1e-12);
        assert_eq!(best, 2.0);
        assert_eq!(a.pairs(), lex.as_slice());
    }

    #[test]
    fn seeded_five_by_five_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let values = Array2::from_shape_fn((5, 5), |_| rng.random::<f64>());
        let cost = CostMatrix::new(values.clone()).unwrap();
        let a = hungarian(&cost);
        let (best, lex) = brute_force_lex(&values, 1e-12);
        assert!((a.total_cost(&cost) - best).abs() < 1e-12);
        assert_eq!(a.pairs(), lex.as_slice());
    }

    #[test]
    fn random_rectangles_match_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for n in 1..=6usize {
            for m in 1..=6usize {
                for _ in 0..40 {
                    let values = Array2::from_shape_fn((n, m), |_| rng.random::<f64>() * 4.0 - 2.0);
                    let cost = CostMatrix::new(values.clone()).unwrap();
                    let a = hungarian(&cost);
                    assert_eq!(a.len(), n.min(m));
                    let (best, _) = brute_force_all_optima(&values, 1e-9);
                    assert!(
                        (a.total_cost(&cost) - best).abs() < 1e-9,
                        "suboptimal on {n}x{m}: got {} want {best}",
                        a.total_cost(&cost)
                    );
                }
            }
        }
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // Quantized costs force many optima; sums stay exact in f64.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let levels = [0.0, 0.5, 1.0];
        for n in 1..=5usize {
            for m in 1..=5usize {
                for _ in 0..60 {
                    let values =
                        Array2::from_shape_fn((n, m), |_| *levels.choose(&mut rng).unwrap());
                    let cost = CostMatrix::new(values.clone()).unwrap();
                    let a = hungarian(&cost);
                    let (best, lex) = brute_force_lex(&values, 1e-12);
                    assert!((a.total_cost(&cost) - best).abs() < 1e-12);
                    assert_eq!(a.pairs(), lex.as_slice(), "matrix {values:?}");
                }
            }
        }
    }

    #[test]
    fn all_zero_matrix_prefers_identity_prefix() {
        let cost = CostMatrix::new(Array2::zeros((3, 5))).unwrap();
        let a = hungarian(&cost);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1), (2, 2)]);
        let cost = CostMatrix::new(Array2::zeros((5, 3))).unwrap();
        let a = hungarian(&cost);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn non_finite_entry_is_rejected() {
        assert!(CostMatrix::new(array![[0.0, f64::NAN]]).is_err());
        assert!(CostMatrix::new(array![[f64::INFINITY]]).is_err());
        assert!(CostMatrix::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn assignment_is_bijective() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..=7);
            let m = rng.random_range(1..=7);
            let values = Array2::from_shape_fn((n, m), |_| rng.random::<f64>());
            let a = hungarian(&CostMatrix::new(values).unwrap());
            let mut rows: Vec<usize> = a.pairs().iter().map(|&(r, _)| r).collect();
            let mut cols: Vec<usize> = a.pairs().iter().map(|&(_, c)| c).collect();
            rows.sort_unstable();
            rows.dedup();
            cols.sort_unstable();
            cols.dedup();
            assert_eq!(rows.len(), n.min(m));
            assert_eq!(cols.len(), n.min(m));
        }
    }

    fn qs(rows: Vec<Vec<f64>>) -> QuerySet {
        let n = rows.len();
        let c = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        QuerySet::new(Array2::from_shape_vec((n, c), flat).unwrap()).unwrap()
    }

    #[test]
    fn cosine_basics() {
        let a = qs(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![0.0, 0.0]]);
        let b = qs(vec![vec![1.0, 0.0], vec![1.0, 2.0]]);
        let s = cosine_score_matrix(&a, &b).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15);
        // Orthogonal vectors.
        assert_eq!(s[(1, 0)], 0.0);
        // Zero row scores 0 against everything.
        assert_eq!(s[(2, 0)], 0.0);
        assert_eq!(s[(2, 1)], 0.0);
    }

    #[test]
    fn cosine_hand_computed() {
        let a = qs(vec![vec![1.0, 2.0]]);
        let b = qs(vec![vec![2.0, 1.0]]);
        let s = cosine_score_matrix(&a, &b).unwrap();
        assert!((s[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = qs(vec![vec![1.0, 2.0]]);
        let b = qs(vec![vec![1.0, 2.0, 3.0]]);
        assert!(cosine_score_matrix(&a, &b).is_err());
    }

    #[test]
    fn cosine_scale_invariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = QuerySet::new(Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() - 0.5)).unwrap();
        let b = QuerySet::new(Array2::from_shape_fn((4, 8), |_| rng.random::<f64>() - 0.5)).unwrap();
        let s0 = cosine_score_matrix(&a, &b).unwrap();
        let mut scaled = a.as_array().clone();
        for (i, factor) in [13.0, 0.01, 250.0, 1.0].iter().enumerate() {
            scaled.row_mut(i).mapv_inplace(|v| v * factor);
        }
        let a2 = QuerySet::new(scaled).unwrap();
        let s1 = cosine_score_matrix(&a2, &b).unwrap();
        for (x, y) in s0.iter().zip(s1.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c0 = hungarian(&CostMatrix::from_scores(&s0).unwrap());
        let c1 = hungarian(&CostMatrix::from_scores(&s1).unwrap());
        assert_eq!(c0, c1);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let a = QuerySet::new(Array2::from_shape_fn((5, 6), |_| rng.random::<f64>() - 0.5)).unwrap();
        let b = QuerySet::new(Array2::from_shape_fn((5, 6), |_| rng.random::<f64>() - 0.5)).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let b_perm = b.permuted(&perm).unwrap();
        let s = cosine_score_matrix(&a, &b).unwrap();
        let sp = cosine_score_matrix(&a, &b_perm).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(sp[(i, j)], s[(i, perm[j])]);
            }
        }
        let base = hungarian(&CostMatrix::from_scores(&s).unwrap());
        let permuted = hungarian(&CostMatrix::from_scores(&sp).unwrap());
        for (&(r, c), &(rp, cp)) in base.pairs().iter().zip(permuted.pairs().iter()) {
            assert_eq!(r, rp);
            assert_eq!(perm[cp], c);
        }
    }

    fn mask(rows: usize, cols: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::from_elem((rows, cols), false);
        for &(r, c) in on {
            m[(r, c)] = true;
        }
        m
    }

    #[test]
    fn iou_basics() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(1, 0), (1, 1)]);
        let both = mask(2, 2, &[(0, 0), (0, 1)]);
        let empty = mask(2, 2, &[]);
        let m = mask_iou_matrix(&[a.clone(), empty.clone()], &[both, b, empty.clone()]).unwrap();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        // Both empty scores 0 by convention.
        assert_eq!(m[(1, 2)], 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // Union of 3 pixels, intersection of 1.
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        let b = mask(2, 2, &[(0, 1), (1, 1)]);
        let m = mask_iou_matrix(&[a], &[b]).unwrap();
        assert!((m[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_symmetry() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let masks_a: Vec<BinaryMask> = (0..3)
            .map(|_| BinaryMask::from_shape_fn((4, 5), |_| rng.random::<bool>()))
            .collect();
        let masks_b: Vec<BinaryMask> = (0..4)
            .map(|_| BinaryMask::from_shape_fn((4, 5), |_| rng.random::<bool>()))
            .collect();
        let ab = mask_iou_matrix(&masks_a, &masks_b).unwrap();
        let ba = mask_iou_matrix(&masks_b, &masks_a).unwrap();
        assert_eq!(ab, ba.t().to_owned());
    }

    #[test]
    fn iou_shape_mismatch() {
        let a = mask(2, 2, &[]);
        let b = mask(2, 3, &[]);
        assert!(mask_iou_matrix(&[a], &[b]).is_err());
    }

    #[test]
    fn combined_blend() {
        let cos = array![[1.0, 0.8], [0.0, -0.4]];
        let iou = array![[1.0, 0.0], [0.0, 0.4]];
        let c = combined_score_matrix(&cos, &iou).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(0, 1)], 0.4);
        assert_eq!(c[(1, 1)], 0.0);
        assert!(combined_score_matrix(&cos, &Array2::zeros((3, 2))).is_err());
    }
}
