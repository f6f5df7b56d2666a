//! Dense linear programming and square assignment.
//!
//! The simplex here is deliberately plain: dense tableau, Bland's rule
//! (lowest-index entering and leaving), a Phase-I auxiliary problem with
//! artificial variables for feasibility. All transport solves in this crate
//! funnel through these two entry points, so they carry the numerical
//! contracts: primal residual and duality gap within `1e-9` at optimality.
//!
//! Infinite costs never reach this module; callers eliminate those variables
//! first and the API is purely finite arithmetic (assignment excepted, which
//! accepts `Cost` entries and certifies that a finite permutation exists).

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::cost::Cost;

/// Reduced-cost threshold below which a column may enter the basis.
const ENTER_TOL: f64 = 1e-9;
/// Magnitude below which a tableau entry cannot serve as a pivot.
const PIVOT_TOL: f64 = 1e-9;

static LP_SOLVES: AtomicU64 = AtomicU64::new(0);
static LP_ITERATIONS: AtomicU64 = AtomicU64::new(0);

/// Snapshot of the process-wide solver counters `(solves, simplex iterations)`.
pub fn solver_stats() -> (u64, u64) {
    (LP_SOLVES.load(Ordering::Relaxed), LP_ITERATIONS.load(Ordering::Relaxed))
}

pub fn reset_solver_stats() {
    LP_SOLVES.store(0, Ordering::Relaxed);
    LP_ITERATIONS.store(0, Ordering::Relaxed);
}

#[derive(Debug, Error)]
pub enum LinProgError {
    #[error("simplex exceeded the iteration cap of {0} (numerical cycling)")]
    Cycling(usize),
    #[error("problem shape mismatch: {0}")]
    Shape(String),
    #[error("coefficients must be finite, found {0}")]
    NonFinite(f64),
    #[error("no permutation has finite cost")]
    InfeasibleAssignment,
}

/// `min c^T x  s.t.  A x = b,  x >= 0` with dense equality rows.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// Row-major `rows x cols` equality matrix.
    pub eq_matrix: Vec<f64>,
    pub eq_rhs: Vec<f64>,
}

impl LpProblem {
    pub fn rows(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn cols(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<(), LinProgError> {
        let (m, n) = (self.rows(), self.cols());
        if self.eq_matrix.len() != m * n {
            return Err(LinProgError::Shape(format!(
                "matrix has {} entries, expected {m}x{n}",
                self.eq_matrix.len()
            )));
        }
        for &v in self.objective.iter().chain(&self.eq_matrix).chain(&self.eq_rhs) {
            if !v.is_finite() {
                return Err(LinProgError::NonFinite(v));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
    /// One multiplier per equality row (zero on redundant rows).
    pub dual_values: Vec<f64>,
}

/// Solves the LP by two-phase primal simplex with Bland's rule.
///
/// Returns a status-typed solution; `Err` is reserved for exceeding the
/// iteration cap of `50 * (rows + cols)` per phase.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, LinProgError> {
    p.validate()?;
    LP_SOLVES.fetch_add(1, Ordering::Relaxed);
    let m = p.rows();
    let n = p.cols();
    let width = n + m + 1; // original vars, artificials, rhs
    let cap = 50 * (m + n).max(1);

    // Tableau rows with rhs >= 0; artificial i starts basic in row i.
    let mut tab = vec![0.0f64; m * width];
    let mut basis = vec![0usize; m];
    for i in 0..m {
        let flip = if p.eq_rhs[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            tab[i * width + j] = flip * p.eq_matrix[i * n + j];
        }
        tab[i * width + n + i] = 1.0;
        tab[i * width + n + m] = flip * p.eq_rhs[i];
        basis[i] = n + i;
    }
    let mut alive: Vec<bool> = vec![true; m];

    // Phase I: minimize the sum of artificials.
    let mut obj = vec![0.0f64; width];
    for i in 0..m {
        for j in 0..width {
            obj[j] -= tab[i * width + j];
        }
    }
    for j in n..n + m {
        obj[j] += 1.0;
    }
    run_simplex(&mut tab, &mut obj, &mut basis, &alive, width, n + m, cap)?;
    let phase1 = -obj[width - 1];
    let b_scale = 1.0 + p.eq_rhs.iter().map(|b| b.abs()).sum::<f64>();
    if phase1 > 1e-9 * b_scale {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            values: Vec::new(),
            objective_value: 0.0,
            dual_values: Vec::new(),
        });
    }

    // Drive artificials out of the basis; rows that cannot pivot are redundant.
    for i in 0..m {
        if basis[i] < n {
            continue;
        }
        let row = &tab[i * width..(i + 1) * width];
        let pivot_col = (0..n).find(|&j| row[j].abs() > PIVOT_TOL);
        match pivot_col {
            Some(j) => pivot(&mut tab, &mut obj, &mut basis, width, i, j),
            None => alive[i] = false,
        }
    }

    // Phase II on the original objective, artificial columns barred.
    obj.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..n {
        obj[j] = p.objective[j];
    }
    for i in 0..m {
        if !alive[i] {
            continue;
        }
        let cb = p.objective[basis[i]];
        if cb != 0.0 {
            for j in 0..width {
                obj[j] -= cb * tab[i * width + j];
            }
        }
    }
    let unbounded = !run_simplex(&mut tab, &mut obj, &mut basis, &alive, width, n, cap)?;
    if unbounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: Vec::new(),
            objective_value: 0.0,
            dual_values: Vec::new(),
        });
    }

    let mut values = vec![0.0f64; n];
    for i in 0..m {
        if alive[i] && basis[i] < n {
            values[basis[i]] = tab[i * width + width - 1];
        }
    }
    let objective_value = p
        .objective
        .iter()
        .zip(&values)
        .map(|(c, x)| c * x)
        .sum::<f64>();
    let dual_values = recover_duals(p, &basis, &alive);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective_value,
        dual_values,
    })
}

/// Runs Bland-rule pivoting until no entering column remains.
///
/// Returns `Ok(false)` when an entering column certifies unboundedness.
fn run_simplex(
    tab: &mut [f64],
    obj: &mut [f64],
    basis: &mut [usize],
    alive: &[bool],
    width: usize,
    enterable: usize,
    cap: usize,
) -> Result<bool, LinProgError> {
    let m = basis.len();
    for _ in 0..cap {
        let entering = (0..enterable).find(|&j| obj[j] < -ENTER_TOL);
        let j = match entering {
            Some(j) => j,
            None => return Ok(true),
        };
        // Min-ratio row; ties broken by the smallest basic variable index.
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            if !alive[i] {
                continue;
            }
            let a = tab[i * width + j];
            if a > PIVOT_TOL {
                let ratio = tab[i * width + width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (i, _) = match leave {
            Some(x) => x,
            None => return Ok(false),
        };
        pivot(tab, obj, basis, width, i, j);
        LP_ITERATIONS.fetch_add(1, Ordering::Relaxed);
    }
    Err(LinProgError::Cycling(cap))
}

fn pivot(tab: &mut [f64], obj: &mut [f64], basis: &mut [usize], width: usize, row: usize, col: usize) {
    let m = basis.len();
    let p = tab[row * width + col];
    for j in 0..width {
        tab[row * width + j] /= p;
    }
    tab[row * width + col] = 1.0;
    for i in 0..m {
        if i == row {
            continue;
        }
        let f = tab[i * width + col];
        if f != 0.0 {
            for j in 0..width {
                tab[i * width + j] -= f * tab[row * width + j];
            }
            tab[i * width + col] = 0.0;
        }
    }
    let f = obj[col];
    if f != 0.0 {
        for j in 0..width {
            obj[j] -= f * tab[row * width + j];
        }
        obj[col] = 0.0;
    }
    basis[row] = col;
}

/// Solves `B^T y = c_B` over the non-redundant rows by Gaussian elimination.
fn recover_duals(p: &LpProblem, basis: &[usize], alive: &[bool]) -> Vec<f64> {
    let n = p.cols();
    let kept: Vec<usize> = (0..p.rows()).filter(|&i| alive[i]).collect();
    let k = kept.len();
    if k == 0 {
        return vec![0.0; p.rows()];
    }
    // Rows of the system are basis columns restricted to kept constraint rows.
    let mut a = vec![0.0f64; k * (k + 1)];
    for (bi, i) in kept.iter().enumerate() {
        let col = basis[*i];
        debug_assert!(col < n);
        for (bj, j) in kept.iter().enumerate() {
            a[bi * (k + 1) + bj] = p.eq_matrix[*j * n + col];
        }
        a[bi * (k + 1) + k] = p.objective[col];
    }
    gaussian_solve(&mut a, k);
    let mut duals = vec![0.0f64; p.rows()];
    for (bj, j) in kept.iter().enumerate() {
        duals[*j] = a[bj * (k + 1) + k];
    }
    duals
}

/// In-place partial-pivot elimination of an augmented `k x (k+1)` system;
/// the solution lands in the last column.
fn gaussian_solve(a: &mut [f64], k: usize) {
    let w = k + 1;
    for col in 0..k {
        let mut best = col;
        for r in col + 1..k {
            if a[r * w + col].abs() > a[best * w + col].abs() {
                best = r;
            }
        }
        if a[best * w + col].abs() < 1e-13 {
            continue;
        }
        if best != col {
            for j in 0..w {
                a.swap(col * w + j, best * w + j);
            }
        }
        let piv = a[col * w + col];
        for j in col..w {
            a[col * w + j] /= piv;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r * w + col];
            if f != 0.0 {
                for j in col..w {
                    a[r * w + j] -= f * a[col * w + j];
                }
            }
        }
    }
}

/// Minimum-cost perfect matching on a square extended-real cost matrix.
///
/// Returns the minimizing permutation (row `i` matched to column `perm[i]`)
/// and its total cost, which equals the LP optimum of the doubly-stochastic
/// relaxation. Ties are broken toward the lexicographically smallest
/// permutation. Errors when no permutation avoids an infinite entry.
pub fn solve_assignment(cost: &[Vec<Cost>]) -> Result<(Vec<usize>, f64), LinProgError> {
    let n = cost.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    for row in cost {
        if row.len() != n {
            return Err(LinProgError::Shape(format!(
                "assignment matrix must be square, row has {} entries for n={n}",
                row.len()
            )));
        }
    }
    let full = hungarian_value(cost, &(0..n).collect::<Vec<_>>(), &(0..n).collect::<Vec<_>>())
        .ok_or(LinProgError::InfeasibleAssignment)?;

    // Lexicographic refinement: fix rows in order, choosing the smallest
    // column that still completes to the optimal value.
    let mut perm = vec![usize::MAX; n];
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0f64;
    let tol = 1e-9 * (1.0 + full.abs());
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (ci, &j) in free_cols.iter().enumerate() {
            let edge = match cost[i][j] {
                Cost::Finite(v) => v,
                Cost::Infinite => continue,
            };
            let rest_cols: Vec<usize> =
                free_cols.iter().copied().filter(|&c| c != j).collect();
            let completion = if rest_rows.is_empty() {
                Some(0.0)
            } else {
                hungarian_value(cost, &rest_rows, &rest_cols)
            };
            if let Some(rest) = completion {
                if fixed_cost + edge + rest <= full + tol {
                    chosen = Some((ci, j, edge));
                    break;
                }
            }
        }
        let (ci, j, edge) = chosen.ok_or(LinProgError::InfeasibleAssignment)?;
        perm[i] = j;
        fixed_cost += edge;
        free_cols.remove(ci);
    }
    Ok((perm, full))
}

/// Optimal assignment value on a row/column submatrix, `None` if every
/// completion hits an infinite entry. Shortest-augmenting-path Hungarian
/// with potentials.
fn hungarian_value(cost: &[Vec<Cost>], rows: &[usize], cols: &[usize]) -> Option<f64> {
    let n = rows.len();
    debug_assert_eq!(n, cols.len());
    if n == 0 {
        return Some(0.0);
    }
    let at = |i: usize, j: usize| cost[rows[i]][cols[j]].to_f64();
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched = vec![usize::MAX; n + 1]; // matched[j] = row in column j (1-based cols)
    for i in 0..n {
        let mut min_slack = vec![inf; n + 1];
        let mut prev = vec![0usize; n + 1];
        let mut used = vec![false; n + 1];
        let mut j0 = 0usize;
        matched[0] = i;
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0, j - 1) - u[i0 + 1] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    prev[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return None;
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j] + 1] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == usize::MAX {
                break;
            }
        }
        // Augment along the alternating path.
        while j0 != 0 {
            let j1 = prev[j0];
            matched[j0] = matched[j1];
            j0 = j1;
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        match cost[rows[matched[j]]][cols[j - 1]] {
            Cost::Finite(c) => total += c,
            Cost::Infinite => return None,
        }
    }
    Some(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ot_problem(mu: &[f64], nu: &[f64], cost: &[f64]) -> LpProblem {
        let (n, m) = (mu.len(), nu.len());
        let cols = n * m;
        let rows = n + m;
        let mut a = vec![0.0; rows * cols];
        for i in 0..n {
            for j in 0..m {
                a[i * cols + i * m + j] = 1.0;
                a[(n + j) * cols + i * m + j] = 1.0;
            }
        }
        LpProblem {
            objective: cost.to_vec(),
            eq_matrix: a,
            eq_rhs: mu.iter().chain(nu.iter()).copied().collect(),
        }
    }

    #[test]
    fn diagonal_plan_is_free() {
        let p = ot_problem(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 1.0, 1.0, 0.0]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!(sol.objective_value.abs() < 1e-12);
    }

    /// Expected value frozen from enumerating both vertices of the 2x2
    /// transportation polytope: x00 in [0.1, 0.4], costs 0.9 and 0.3.
    #[test]
    fn skewed_marginals_cost() {
        let p = ot_problem(&[0.7, 0.3], &[0.4, 0.6], &[0.0, 1.0, 1.0, 0.0]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective_value - 0.3).abs() < 1e-9);
        // Primal feasibility and zero duality gap.
        let residual: f64 = (0..p.rows())
            .map(|i| {
                (0..p.cols())
                    .map(|j| p.eq_matrix[i * p.cols() + j] * sol.values[j])
                    .sum::<f64>()
                    - p.eq_rhs[i]
            })
            .map(f64::abs)
            .fold(0.0, f64::max);
        assert!(residual < 1e-9);
        let dual_obj: f64 = p.eq_rhs.iter().zip(&sol.dual_values).map(|(b, y)| b * y).sum();
        assert!((sol.objective_value - dual_obj).abs() <= 1e-9 * (1.0 + sol.objective_value.abs()));
    }

    #[test]
    fn negative_rhs_infeasible_under_nonnegativity() {
        let p = LpProblem {
            objective: vec![1.0, 1.0],
            eq_matrix: vec![1.0, 1.0],
            eq_rhs: vec![-1.0],
        };
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction_detected() {
        // min -x with only x - y = 0: x = y can grow without bound.
        let p = LpProblem {
            objective: vec![-1.0, 0.0],
            eq_matrix: vec![1.0, -1.0],
            eq_rhs: vec![0.0],
        };
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Unbounded);
    }

    #[test]
    fn complementary_slackness_on_degenerate_ot() {
        let p = ot_problem(&[0.5, 0.25, 0.25], &[0.25, 0.25, 0.5], &[
            2.0, 1.0, 3.0, 1.0, 4.0, 1.0, 5.0, 0.5, 2.0,
        ]);
        let sol = solve_lp(&p).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        for j in 0..p.cols() {
            let reduced = p.objective[j]
                - (0..p.rows())
                    .map(|i| p.eq_matrix[i * p.cols() + j] * sol.dual_values[i])
                    .sum::<f64>();
            assert!(sol.values[j] * reduced <= 1e-9, "slackness violated at {j}");
        }
    }

    #[test]
    fn assignment_identity_zero() {
        for n in 1..5 {
            let cost: Vec<Vec<Cost>> = (0..n)
                .map(|i| (0..n).map(|j| Cost::Finite(if i == j { 0.0 } else { 7.0 })).collect())
                .collect();
            let (perm, value) = solve_assignment(&cost).unwrap();
            assert_eq!(perm, (0..n).collect::<Vec<_>>());
            assert_eq!(value, 0.0);
        }
    }

    #[test]
    fn assignment_squared_distance_identity() {
        let pts = [0.0f64, 1.0, 2.0];
        let cost: Vec<Vec<Cost>> = pts
            .iter()
            .map(|x| pts.iter().map(|y| Cost::Finite((x - y).powi(2))).collect())
            .collect();
        let (perm, value) = solve_assignment(&cost).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn assignment_two_by_two_table() {
        let cost = vec![
            vec![Cost::Finite(2.0), Cost::Finite(6.0)],
            vec![Cost::Finite(6.0), Cost::Finite(2.0)],
        ];
        let (perm, value) = solve_assignment(&cost).unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert!((value - 4.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_infeasible_when_every_perm_infinite() {
        let cost = vec![
            vec![Cost::Infinite, Cost::Finite(1.0)],
            vec![Cost::Infinite, Cost::Finite(1.0)],
        ];
        assert!(matches!(
            solve_assignment(&cost),
            Err(LinProgError::InfeasibleAssignment)
        ));
    }

    #[test]
    fn assignment_lexicographic_ties() {
        // All permutations cost 2: the identity is the lexicographic pick.
        let cost = vec![
            vec![Cost::Finite(1.0), Cost::Finite(1.0)],
            vec![Cost::Finite(1.0), Cost::Finite(1.0)],
        ];
        let (perm, value) = solve_assignment(&cost).unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert!((value - 2.0).abs() < 1e-12);
    }

    /// Brute-force n! enumeration oracle.
    fn brute_force(cost: &[Vec<Cost>]) -> Option<(Vec<usize>, f64)> {
        let n = cost.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best: Option<(Vec<usize>, f64)> = None;
        permute(&mut perm, 0, &mut |p| {
            let mut total = Cost::ZERO;
            for (i, &j) in p.iter().enumerate() {
                total = total + cost[i][j];
            }
            if let Cost::Finite(v) = total {
                let replace = match &best {
                    None => true,
                    Some((bp, bv)) => v < bv - 1e-12 || ((v - bv).abs() <= 1e-12 && p < &bp[..]),
                };
                if replace {
                    best = Some((p.to_vec(), v));
                }
            }
        });
        best
    }

    fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            visit(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(perm, k + 1, visit);
            perm.swap(k, i);
        }
    }

    #[test]
    fn assignment_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(1..=6);
            let cost: Vec<Vec<Cost>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            if rng.gen_bool(0.1) {
                                Cost::Infinite
                            } else {
                                Cost::Finite((rng.gen_range(0..20) as f64) / 2.0)
                            }
                        })
                        .collect()
                })
                .collect();
            match (solve_assignment(&cost), brute_force(&cost)) {
                (Ok((perm, value)), Some((bperm, bvalue))) => {
                    assert!((value - bvalue).abs() < 1e-9, "trial {trial}: value mismatch");
                    assert_eq!(perm, bperm, "trial {trial}: tie-break mismatch");
                }
                (Err(LinProgError::InfeasibleAssignment), None) => {}
                (got, want) => panic!("trial {trial}: solver {got:?} vs brute force {want:?}"),
            }
        }
    }

    /// Birkhoff: on uniform equal-size marginals the LP matches the
    /// assignment optimum after mass normalization.
    #[test]
    fn lp_matches_assignment_on_uniform_marginals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.gen_range(2..=5);
            let cost: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let marg = vec![1.0 / n as f64; n];
            let lp = solve_lp(&ot_problem(&marg, &marg, &cost)).unwrap();
            let matrix: Vec<Vec<Cost>> = (0..n)
                .map(|i| (0..n).map(|j| Cost::Finite(cost[i * n + j])).collect())
                .collect();
            let (_, total) = solve_assignment(&matrix).unwrap();
            assert!((lp.objective_value - total / n as f64).abs() < 1e-9);
        }
    }
}
