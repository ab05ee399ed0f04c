//! Maximum-weight bipartite alignment: an O(n³) Kuhn-Munkres production path
//! and an exhaustive oracle twin, sharing one canonicalization rule so their
//! outputs are comparable pair for pair.
//!
//! Among equal-total optima both return the matching whose sorted pair list is
//! lexicographically smallest; in particular zero-weight pairs are never
//! included, so an all-zero matrix aligns nothing.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("brute-force alignment capped at 8×8, got {rows}×{cols}")]
    TooLarge { rows: usize, cols: usize },
}

/// An injective partial map ref→pred as (ref index, pred index) pairs sorted
/// by ref index, plus the total similarity refolded over those pairs in that
/// order — so equal pair sets always yield bit-identical totals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

fn refold(sim: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| sim[i][j]).sum()
}

fn check_matrix(sim: &[Vec<f64>]) {
    let cols = sim.first().map_or(0, |r| r.len());
    for row in sim {
        assert_eq!(row.len(), cols, "similarity matrix must be rectangular");
        for &v in row {
            assert!(v.is_finite() && v >= 0.0, "similarities must be finite and non-negative");
        }
    }
}

/// Maximum total over injective partial maps between `rows` and `cols`
/// (index subsets of `sim`), via Kuhn-Munkres on a zero-padded square
/// cost matrix.
// The 1-indexed potentials arrays are walked by position throughout.
#[allow(clippy::needless_range_loop)]
fn hungarian_max(sim: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    let n = rows.len().max(cols.len());
    if n == 0 {
        return 0.0;
    }
    let value = |r: usize, c: usize| -> f64 {
        if r < rows.len() && c < cols.len() {
            sim[rows[r]][cols[c]]
        } else {
            0.0
        }
    };
    let mut maxv = 0.0f64;
    for r in 0..rows.len() {
        for c in 0..cols.len() {
            maxv = maxv.max(value(r, c));
        }
    }

    // e-maxx potentials formulation, 1-indexed; p[j] = row matched to col j.
    let cost = |r: usize, c: usize| maxv - value(r, c);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut total = 0.0;
    for j in 1..=n {
        total += value(p[j] - 1, j - 1);
    }
    total
}

/// Production aligner. Finds the maximum total with Kuhn-Munkres, then builds
/// the lexicographically-smallest optimal matching greedily: stop as soon as
/// the prefix already carries the optimum, otherwise take the first candidate
/// pair that still admits an optimal completion.
// next_row is written inside the candidate loop but only read by the next
// outer pass; the candidate loop breaks right after the write.
#[allow(clippy::mut_range_bound)]
pub fn align_optimal(sim: &[Vec<f64>]) -> Matching {
    check_matrix(sim);
    let n = sim.len();
    let m = sim.first().map_or(0, |r| r.len());
    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..m).collect();
    let best = hungarian_max(sim, &all_rows, &all_cols);
    let tol = 1e-9 * (1.0 + best.abs());

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut free_cols: Vec<usize> = all_cols;
    let mut carried = 0.0f64;
    let mut next_row = 0usize;
    loop {
        let rows_left: Vec<usize> = (next_row..n).collect();
        if carried + hungarian_max(sim, &rows_left, &free_cols) <= carried + tol {
            break;
        }
        let mut advanced = false;
        'candidates: for i in next_row..n {
            let deeper: Vec<usize> = (i + 1..n).collect();
            for (ci, &j) in free_cols.iter().enumerate() {
                let rest_cols: Vec<usize> = free_cols
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != ci)
                    .map(|(_, &c)| c)
                    .collect();
                let with = carried + sim[i][j] + hungarian_max(sim, &deeper, &rest_cols);
                if with + tol >= best {
                    pairs.push((i, j));
                    carried += sim[i][j];
                    free_cols = rest_cols;
                    next_row = i + 1;
                    advanced = true;
                    break 'candidates;
                }
            }
        }
        debug_assert!(advanced, "optimal completion must exist");
        if !advanced {
            break;
        }
    }
    let total = refold(sim, &pairs);
    Matching { pairs, total }
}

/// Testing oracle: exhaustively enumerates every injective partial map.
/// Guarded to 8×8; identical tie rule to [`align_optimal`].
pub fn align_bruteforce(sim: &[Vec<f64>]) -> Result<Matching, AlignError> {
    check_matrix(sim);
    let n = sim.len();
    let m = sim.first().map_or(0, |r| r.len());
    if n.max(m) > 8 {
        return Err(AlignError::TooLarge { rows: n, cols: m });
    }
    let mut best_pairs: Vec<(usize, usize)> = Vec::new();
    let mut best_total = 0.0f64;
    let mut used = vec![false; m];
    let mut current: Vec<(usize, usize)> = Vec::new();
    fn recurse(
        sim: &[Vec<f64>],
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        best_pairs: &mut Vec<(usize, usize)>,
        best_total: &mut f64,
    ) {
        if row == sim.len() {
            let total = refold(sim, current);
            if total > *best_total
                || (total == *best_total && current.as_slice() < best_pairs.as_slice())
            {
                *best_total = total;
                *best_pairs = current.clone();
            }
            return;
        }
        recurse(sim, row + 1, used, current, best_pairs, best_total);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                current.push((row, j));
                recurse(sim, row + 1, used, current, best_pairs, best_total);
                current.pop();
                used[j] = false;
            }
        }
    }
    recurse(
        sim,
        0,
        &mut used,
        &mut current,
        &mut best_pairs,
        &mut best_total,
    );
    let total = refold(sim, &best_pairs);
    Ok(Matching {
        pairs: best_pairs,
        total,
    })
}
