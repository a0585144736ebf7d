//! Minimum-cost assignment (Hungarian / Kuhn-Munkres), rectangular
//! matrices handled by padding with a large constant.

/// Solves min-cost assignment for a `rows x cols` cost matrix given in
/// row-major order. Returns (row, col) pairs covering min(rows, cols)
/// assignments.
pub fn assign(costs: &[f64], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    assert_eq!(costs.len(), rows * cols);
    let n = rows.max(cols);
    let pad = 1e9 + costs.iter().copied().fold(0.0f64, f64::max).abs();
    let mut square = vec![pad; n * n];
    for r in 0..rows {
        for c in 0..cols {
            square[r * n + c] = costs[r * cols + c];
        }
    }
    let cols_of_rows = kuhn_munkres(&square, n);
    (0..rows)
        .filter_map(|r| {
            let c = cols_of_rows[r];
            (c < cols).then_some((r, c))
        })
        .collect()
}

/// O(n^3) shortest augmenting path formulation with potentials.
fn kuhn_munkres(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays per the classic formulation
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
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
    let mut cols_of_rows = vec![usize::MAX; n];
    for j in 1..=n {
        if p[j] != 0 {
            cols_of_rows[p[j] - 1] = j - 1;
        }
    }
    cols_of_rows
}

/// Exhaustive-permutation minimum cost; oracle for small n.
pub fn brute_force_min_cost(costs: &[f64], n: usize) -> f64 {
    fn permute(cost: &[f64], n: usize, used: &mut Vec<bool>, row: usize, acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for c in 0..n {
            if !used[c] {
                used[c] = true;
                permute(cost, n, used, row + 1, acc + cost[row * n + c], best);
                used[c] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    permute(costs, n, &mut vec![false; n], 0, 0.0, &mut best);
    best
}
