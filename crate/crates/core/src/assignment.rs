//! Minimum-cost assignment between the rows and columns of a rectangular
//! cost matrix, solved with shortest augmenting paths over dual potentials
//! in `O(n^2 m)`. Every index of the smaller side is assigned; the larger
//! side keeps its leftovers.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Result of a rectangular assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched `(row, column)` pairs, sorted by row index.
    pub pairs: Vec<(usize, usize)>,
    /// Total cost over the matched pairs.
    pub total_cost: f64,
    /// Rows left unmatched (non-empty only when rows outnumber columns).
    pub unassigned_rows: Vec<usize>,
    /// Columns left unmatched (non-empty only when columns outnumber rows).
    pub unassigned_cols: Vec<usize>,
}

/// Solves the minimum-cost assignment for `cost`.
///
/// All entries must be finite; encode forbidden pairs as a large finite
/// sentinel and discard them afterward. An empty matrix yields an empty
/// assignment.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Assignment> {
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("assignment costs must be finite".into()));
    }
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
            unassigned_rows: (0..rows).collect(),
            unassigned_cols: (0..cols).collect(),
        });
    }
    if rows > cols {
        let transposed = hungarian(&cost.transpose())?;
        let mut pairs: Vec<(usize, usize)> = transposed.pairs.into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        return Ok(Assignment {
            pairs,
            total_cost: transposed.total_cost,
            unassigned_rows: transposed.unassigned_cols,
            unassigned_cols: transposed.unassigned_rows,
        });
    }

    // Dual potentials over a virtual 0th row/column; row_of[j] is the row
    // currently assigned to column j.
    let n = rows;
    let m = cols;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut path = vec![0usize; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut visited = vec![false; m + 1];
        loop {
            visited[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if visited[j] {
                    continue;
                }
                let slack = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    path[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if visited[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = path[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(n);
    let mut col_used = vec![false; m];
    for j in 1..=m {
        if row_of[j] != 0 {
            pairs.push((row_of[j] - 1, j - 1));
            col_used[j - 1] = true;
        }
    }
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    Ok(Assignment {
        pairs,
        total_cost,
        unassigned_rows: Vec::new(),
        unassigned_cols: (0..m).filter(|&c| !col_used[c]).collect(),
    })
}
