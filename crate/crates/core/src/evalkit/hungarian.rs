//! Minimum-cost assignment on a rectangular matrix (shortest augmenting path
//! with potentials, O(n³) on the padded square).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{LtcError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// Column matched to each row; `None` for rows left over when the matrix
    /// has more rows than columns.
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of the matched entries in row order.
    pub cost: f64,
}

impl AssignmentResult {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Solves `min Σ cost[r][σ(r)]` over injections from the smaller side.
/// Missing rows or columns are padded with zero cost.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<AssignmentResult> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(LtcError::Empty("cost matrix"));
    }
    if cost.iter().any(|r| r.len() != cols) {
        return Err(LtcError::ShapeMismatch("ragged cost matrix"));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LtcError::NonFinite("cost matrix"));
    }
    let n = rows.max(cols);
    let at = |r: usize, c: usize| if r < rows && c < cols { cost[r][c] } else { 0.0 };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for j in 1..=n {
        let i = owner[j];
        if i >= 1 && i <= rows && j <= cols {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    let cost = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Ok(AssignmentResult { row_to_col, cost })
}
