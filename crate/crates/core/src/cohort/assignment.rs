//! Exact minimum-cost assignment via shortest augmenting paths with dual
//! potentials. Handles rectangular instances (rows <= columns) directly;
//! `f64::INFINITY` marks forbidden pairs.

use alloc::vec;
use alloc::vec::Vec;

use super::CohortError;

/// Assigns every row to a distinct column minimizing total cost.
///
/// `cost` is row-major `n_rows x n_cols`, `n_rows <= n_cols`. Equal-cost
/// optima resolve toward lower column indices. Returns the column chosen for
/// each row, or an error when no assignment avoiding infinite-cost pairs
/// covers all rows.
pub fn solve_assignment(
    cost: &[f64],
    n_rows: usize,
    n_cols: usize,
) -> Result<Vec<usize>, CohortError> {
    assert_eq!(cost.len(), n_rows * n_cols);
    assert!(n_rows <= n_cols, "more rows than columns is infeasible");
    debug_assert!(cost.iter().all(|c| !c.is_nan()));

    // 1-indexed duals and matching; column 0 is the virtual start column.
    let mut u = vec![0.0_f64; n_rows + 1];
    let mut v = vec![0.0_f64; n_cols + 1];
    let mut matched_row = vec![0_usize; n_cols + 1]; // row matched to column j, 0 = free
    let mut way = vec![0_usize; n_cols + 1];

    for row in 1..=n_rows {
        matched_row[0] = row;
        let mut j0 = 0_usize;
        let mut min_slack = vec![f64::INFINITY; n_cols + 1];
        let mut used = vec![false; n_cols + 1];

        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n_cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n_cols + (j - 1)] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                // No finite-cost augmenting path: some row set cannot be
                // covered by distinct admissible columns.
                return Err(CohortError::InfeasibleAssignment);
            }
            for j in 0..=n_cols {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }

        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }

    let mut result = vec![usize::MAX; n_rows];
    for j in 1..=n_cols {
        let row = matched_row[j];
        if row != 0 {
            result[row - 1] = j - 1;
        }
    }
    debug_assert!(result.iter().all(|&c| c != usize::MAX));
    Ok(result)
}

/// Total cost of an assignment returned by [`solve_assignment`].
pub(crate) fn assignment_cost(cost: &[f64], n_cols: usize, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(row, &col)| cost[row * n_cols + col])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Exhaustive oracle: tries every injective row->column map.
    fn brute_force(cost: &[f64], n_rows: usize, n_cols: usize) -> Option<f64> {
        fn go(
            cost: &[f64],
            n_rows: usize,
            n_cols: usize,
            row: usize,
            used: &mut [bool],
            acc: f64,
            best: &mut f64,
        ) {
            if row == n_rows {
                if acc < *best {
                    *best = acc;
                }
                return;
            }
            for col in 0..n_cols {
                if used[col] {
                    continue;
                }
                let c = cost[row * n_cols + col];
                if !c.is_finite() || acc + c >= *best {
                    continue;
                }
                used[col] = true;
                go(cost, n_rows, n_cols, row + 1, used, acc + c, best);
                used[col] = false;
            }
        }
        let mut best = f64::INFINITY;
        let mut used = alloc::vec![false; n_cols];
        go(cost, n_rows, n_cols, 0, &mut used, 0.0, &mut best);
        best.is_finite().then_some(best)
    }

    #[test]
    fn two_by_two_known_optimum() {
        let cost = [1.0, 2.0, 3.0, 1.0];
        let assignment = solve_assignment(&cost, 2, 2).unwrap();
        assert_eq!(assignment, [0, 1]);
        assert_eq!(assignment_cost(&cost, 2, &assignment), 2.0);
    }

    #[test]
    fn equal_costs_prefer_lower_column() {
        let cost = [0.125, 0.125, 0.9];
        let assignment = solve_assignment(&cost, 1, 3).unwrap();
        assert_eq!(assignment, [0]);
    }

    #[test]
    fn forbidden_pairs_force_detours() {
        const INF: f64 = f64::INFINITY;
        // Row 0 may only take column 2; row 1 prefers column 2 but must move.
        let cost = [INF, INF, 1.0, 5.0, 9.0, 0.0];
        let assignment = solve_assignment(&cost, 2, 3).unwrap();
        assert_eq!(assignment, [2, 0]);
    }

    #[test]
    fn infeasible_when_rows_share_one_column() {
        const INF: f64 = f64::INFINITY;
        let cost = [INF, 1.0, INF, 2.0];
        assert_eq!(
            solve_assignment(&cost, 2, 2).unwrap_err(),
            CohortError::InfeasibleAssignment
        );
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        for round in 0..300 {
            let n_rows = rng.random_range(1..=6);
            let n_cols = rng.random_range(n_rows..=7);
            let mut cost = alloc::vec![0.0; n_rows * n_cols];
            for c in cost.iter_mut() {
                *c = if rng.random::<f64>() < 0.15 {
                    f64::INFINITY
                } else {
                    (rng.random::<f64>() * 100.0).round() / 16.0
                };
            }
            let oracle = brute_force(&cost, n_rows, n_cols);
            match solve_assignment(&cost, n_rows, n_cols) {
                Ok(assignment) => {
                    let mut seen = alloc::vec![false; n_cols];
                    for &col in &assignment {
                        assert!(!seen[col], "duplicate column in round {round}");
                        seen[col] = true;
                    }
                    let total = assignment_cost(&cost, n_cols, &assignment);
                    let expect = oracle.expect("solver found assignment oracle says is infeasible");
                    assert!(
                        (total - expect).abs() < 1e-9,
                        "round {round}: solver {total} vs oracle {expect}"
                    );
                }
                Err(_) => assert!(oracle.is_none(), "oracle feasible but solver errored ({round})"),
            }
        }
    }
}
