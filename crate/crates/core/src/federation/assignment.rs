//! Linear assignment: Hungarian algorithm with shortest augmenting paths,
//! followed by a lexicographic tie-break among optimal assignments.

use crate::error::{Error, Result};

/// Returns `perm` minimizing `Σ cost[i][perm[i]]`; among optimal
/// permutations, the lexicographically smallest.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if let Some(i) = cost.iter().position(|r| r.len() != n) {
        return Err(Error::Shape(format!("cost matrix row {i} has {} entries, expected {n}", cost[i].len())));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Domain("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let (mut perm, u, v) = hungarian(cost);
    let scale = cost.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * (1.0 + scale) * n as f64;
    let tight: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| cost[i][j] - u[i] - v[j] <= tol).collect()).collect();
    lexicographic_tight(&tight, &mut perm);
    Ok(perm)
}

/// Classic O(n³) Hungarian with row potentials `u` and column potentials `v`
/// (1-based internally). Returns the row → column assignment and potentials.
fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[col_row[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites the perfect matching `perm` (which uses only tight edges) into the
/// lexicographically smallest perfect matching of the tight graph. Row by
/// row, each smaller tight column is tried by looking for an alternating
/// cycle through the unfixed rows that frees it.
fn lexicographic_tight(tight: &[Vec<bool>], perm: &mut [usize]) {
    let n = perm.len();
    let mut row_of = vec![0usize; n];
    for (i, &j) in perm.iter().enumerate() {
        row_of[j] = i;
    }
    for i in 0..n {
        for j in 0..perm[i] {
            if !tight[i][j] || row_of[j] < i {
                continue;
            }
            // Row r = row_of[j] must move; find an alternating path from r to
            // the column perm[i] that i releases, using rows > i only.
            let target = perm[i];
            let r = row_of[j];
            let mut seen = vec![false; n];
            seen[j] = true;
            let mut path = Vec::new();
            if find_path(tight, perm, &row_of, i, r, target, &mut seen, &mut path) {
                // path holds (row, new column) pairs.
                perm[i] = j;
                row_of[j] = i;
                for (row, col) in path {
                    perm[row] = col;
                    row_of[col] = row;
                }
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn find_path(
    tight: &[Vec<bool>],
    perm: &[usize],
    row_of: &[usize],
    fixed_upto: usize,
    row: usize,
    target: usize,
    seen: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    let n = perm.len();
    for c in 0..n {
        if !tight[row][c] || seen[c] {
            continue;
        }
        seen[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = row_of[c];
        if next <= fixed_upto {
            continue;
        }
        path.push((row, c));
        if find_path(tight, perm, row_of, fixed_upto, next, target, seen, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Total cost of a permutation.
pub fn assignment_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}
