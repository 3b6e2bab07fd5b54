//! Square assignment problems: exact minimum-cost matching and a cheap
//! approximation for large inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimum-cost perfect matching on an `n × n` cost matrix stored row-major.
/// Returns `assign[row] = column`. Shortest augmenting paths with vertex
/// potentials, `O(n³)`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based internally; column 0 is the virtual source
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut match_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        match_col[0] = row;
        let mut j0 = 0;
        let mut min_v = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[match_col[j] - 1] = j - 1;
    }
    assign
}

/// Greedy nearest-free matching followed by improving pair swaps. Costs are
/// produced on demand by `cost(row, col)`.
pub fn greedy_refined(n: usize, cost: impl Fn(usize, usize) -> f64, seed: u64) -> Vec<usize> {
    let mut assign = vec![usize::MAX; n];
    let mut taken = vec![false; n];
    for (i, slot) in assign.iter_mut().enumerate() {
        let mut best = usize::MAX;
        let mut best_c = f64::INFINITY;
        for j in 0..n {
            if !taken[j] {
                let c = cost(i, j);
                if c < best_c {
                    best = j;
                    best_c = c;
                }
            }
        }
        taken[best] = true;
        *slot = best;
    }
    if n < 2 {
        return assign;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 * n {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        let (ja, jb) = (assign[a], assign[b]);
        if cost(a, jb) + cost(b, ja) < cost(a, ja) + cost(b, jb) {
            assign.swap(a, b);
        }
    }
    assign
}
