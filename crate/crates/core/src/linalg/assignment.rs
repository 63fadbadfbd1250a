//! Linear sum assignment on square cost matrices.
//!
//! Optimal assignments come from a shortest-augmenting-path Hungarian solver
//! (Jonker–Volgenant / Crouse). Among all optimal assignments the
//! lexicographically smallest permutation is returned: the solver's duals
//! define the equality subgraph that contains every optimal assignment, and
//! rows are fixed greedily to their smallest column that still admits a
//! perfect matching in that subgraph.

use serde::{Deserialize, Serialize};

use super::{ensure_finite, ensure_square, Matrix};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// A permutation `perm` (row `i` assigned to column `perm[i]`) and its total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

struct Solved {
    col4row: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn hungarian_min(cost: &Matrix) -> Result<Solved> {
    let n = cost.nrows();
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut spc = vec![f64::INFINITY; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        // Dijkstra-style search for the shortest augmenting path from cur_row.
        let mut min_val = 0.0;
        let mut num_remaining = n;
        for (it, slot) in remaining.iter_mut().enumerate() {
            // reverse order keeps constant matrices on the identity
            *slot = n - it - 1;
        }
        sr.fill(false);
        sc.fill(false);
        spc.fill(f64::INFINITY);

        let mut i = cur_row;
        let mut sink = NONE;
        while sink == NONE {
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            sr[i] = true;
            for it in 0..num_remaining {
                let j = remaining[it];
                let r = min_val + cost[[i, j]] - u[i] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                if spc[j] < lowest || (spc[j] == lowest && row4col[j] == NONE) {
                    lowest = spc[j];
                    index = it;
                }
            }
            min_val = lowest;
            if !min_val.is_finite() || index == NONE {
                return Err(Error::NonFinite("assignment problem is infeasible".into()));
            }
            let j = remaining[index];
            if row4col[j] == NONE {
                sink = j;
            } else {
                i = row4col[j];
            }
            sc[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }

        u[cur_row] += min_val;
        for r in 0..n {
            if sr[r] && r != cur_row {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for c in 0..n {
            if sc[c] {
                v[c] -= min_val - spc[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(Solved { col4row, u, v })
}

/// Rewrites an optimal matching into the lexicographically smallest optimal one.
fn lexicographic_refine(cost: &Matrix, solved: Solved) -> Vec<usize> {
    let n = cost.nrows();
    let Solved { mut col4row, u, v } = solved;
    let scale = cost.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * scale;
    let tight = |i: usize, j: usize| cost[[i, j]] - u[i] - v[j] <= tol;

    let mut row4col = vec![NONE; n];
    for (i, &j) in col4row.iter().enumerate() {
        row4col[j] = i;
    }
    let mut fixed_col = vec![false; n];
    let mut parent_row = vec![NONE; n];
    let mut parent_col = vec![NONE; n];
    let mut queue = Vec::with_capacity(n);

    for i in 0..n {
        let current = col4row[i];
        for j in 0..current {
            if fixed_col[j] || !tight(i, j) {
                continue;
            }
            // Row r0 holds column j; find an alternating path from r0 to the
            // column `current` that row i would release.
            let r0 = row4col[j];
            parent_row.fill(NONE);
            parent_col.fill(NONE);
            queue.clear();
            queue.push(r0);
            let mut seen_row = vec![false; n];
            seen_row[r0] = true;
            let mut found = false;
            let mut head = 0;
            'bfs: while head < queue.len() {
                let r = queue[head];
                head += 1;
                for c in 0..n {
                    if c == j || fixed_col[c] || parent_col[c] != NONE || !tight(r, c) {
                        continue;
                    }
                    if c == col4row[r] {
                        continue;
                    }
                    parent_col[c] = r;
                    if c == current {
                        found = true;
                        break 'bfs;
                    }
                    let next = row4col[c];
                    if next != i && !seen_row[next] {
                        seen_row[next] = true;
                        parent_row[next] = c;
                        queue.push(next);
                    }
                }
            }
            if !found {
                continue;
            }
            // Shift assignments along the path back to r0.
            let mut c = current;
            loop {
                let r = parent_col[c];
                let prev = col4row[r];
                col4row[r] = c;
                row4col[c] = r;
                if r == r0 {
                    break;
                }
                c = prev;
                debug_assert_eq!(parent_row[r], prev);
            }
            col4row[i] = j;
            row4col[j] = i;
            break;
        }
        fixed_col[col4row[i]] = true;
    }
    col4row
}

/// Optimal assignment of rows to columns of a square cost matrix.
///
/// Minimizes (or maximizes when `maximize`) the sum of selected entries. Ties
/// are broken toward the lexicographically smallest permutation, so an
/// all-equal matrix yields the identity.
pub fn linear_sum_assignment(cost: &Matrix, maximize: bool) -> Result<Assignment> {
    let n = ensure_square(cost, "assignment cost matrix")?;
    ensure_finite(cost, "assignment cost matrix")?;
    if n == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            cost: 0.0,
        });
    }
    let work = if maximize { cost.mapv(|x| -x) } else { cost.clone() };
    let solved = hungarian_min(&work)?;
    let perm = lexicographic_refine(&work, solved);
    let total = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(Assignment { perm, cost: total })
}

/// Rounds a non-negative (typically doubly stochastic) matrix to the
/// permutation carrying the most mass.
pub fn hard_project(ds: &Matrix) -> Result<Assignment> {
    ensure_square(ds, "doubly stochastic matrix")?;
    if ds.iter().any(|&x| x < 0.0) {
        return Err(Error::invalid("hard_project expects a non-negative matrix"));
    }
    linear_sum_assignment(ds, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use ndarray::array;
    use rand::Rng;

    /// Lexicographically ordered enumeration of all permutations of `0..n`.
    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
            let n = used.len();
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    prefix.push(j);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    /// First optimal permutation in lexicographic order.
    fn brute_force(cost: &Matrix, maximize: bool) -> (Vec<usize>, f64) {
        let n = cost.nrows();
        let mut best: Option<(Vec<usize>, f64)> = None;
        for p in all_perms(n) {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            let better = match &best {
                None => true,
                Some((_, b)) => {
                    if maximize {
                        c > *b
                    } else {
                        c < *b
                    }
                }
            };
            if better {
                best = Some((p, c));
            }
        }
        best.unwrap()
    }

    #[test]
    fn anti_diagonal_small() {
        let a = linear_sum_assignment(&array![[0.0, 1.0], [1.0, 0.0]], false).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
        let b = linear_sum_assignment(&array![[0.0, 1.0], [1.0, 0.0]], true).unwrap();
        assert_eq!(b.perm, vec![1, 0]);
        assert_eq!(b.cost, 2.0);
    }

    #[test]
    fn all_equal_is_identity() {
        for n in 1..8 {
            let a = linear_sum_assignment(&Matrix::from_elem((n, n), 3.5), false).unwrap();
            assert_eq!(a.perm, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn integer_four_by_four_matches_brute_force() {
        let mut rng = seeded(2024, 0);
        let cost = Matrix::from_shape_fn((4, 4), |_| rng.random_range(0..10) as f64);
        let a = linear_sum_assignment(&cost, false).unwrap();
        let (p, c) = brute_force(&cost, false);
        assert_eq!(a.perm, p);
        assert_eq!(a.cost, c);
    }

    #[test]
    fn exhaustive_up_to_six_with_ties() {
        for n in 1..=6 {
            for trial in 0..40 {
                let mut rng = seeded(n as u64 * 1000 + trial, 0);
                // small integer range forces many ties
                let cost = Matrix::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64);
                for maximize in [false, true] {
                    let a = linear_sum_assignment(&cost, maximize).unwrap();
                    let (p, c) = brute_force(&cost, maximize);
                    assert_eq!(a.cost, c, "n={n} trial={trial}");
                    assert_eq!(a.perm, p, "n={n} trial={trial} max={maximize}\n{cost}");
                }
            }
        }
    }

    #[test]
    fn rejects_non_square() {
        let err = linear_sum_assignment(&Matrix::zeros((2, 3)), false).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn hard_project_cases() {
        assert_eq!(hard_project(&Matrix::eye(5)).unwrap().perm, vec![0, 1, 2, 3, 4]);
        let uniform = Matrix::from_elem((4, 4), 0.25);
        assert_eq!(hard_project(&uniform).unwrap().perm, vec![0, 1, 2, 3]);
        assert!(hard_project(&array![[-1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn hard_project_matches_brute_force() {
        for n in 2..=6 {
            let mut rng = seeded(99 + n as u64, 0);
            let raw = Matrix::from_shape_fn((n, n), |_| rng.random_range(0.0..1.0));
            let ds = crate::linalg::sinkhorn(&raw, 0.5, 200).unwrap();
            let a = hard_project(&ds).unwrap();
            let (p, _) = brute_force(&ds, true);
            assert_eq!(a.perm, p);
        }
    }
}
