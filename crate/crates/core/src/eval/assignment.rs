use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum AssignmentError {
    Shape { len: usize, n: usize },
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for AssignmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssignmentError::Shape { len, n } => write!(f, "cost matrix has {len} entries, expected {n}x{n}"),
            AssignmentError::NonFinite { row, col } => write!(f, "non-finite cost at ({row}, {col})"),
        }
    }
}

impl std::error::Error for AssignmentError {}

/// Minimum-cost perfect matching on a dense n×n cost matrix (row-major),
/// by the shortest-augmenting-path Hungarian method with potentials, O(n³).
/// Returns `perm` with row `i` matched to column `perm[i]`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Result<Vec<usize>, AssignmentError> {
    if cost.len() != n * n {
        return Err(AssignmentError::Shape { len: cost.len(), n });
    }
    if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
        return Err(AssignmentError::NonFinite { row: k / n, col: k % n });
    }
    // 1-based arrays; column 0 is the virtual start of each augmenting path
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    Ok(perm)
}
