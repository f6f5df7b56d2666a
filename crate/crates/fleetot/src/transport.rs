//! Discrete optimal transport with extended-real costs.
//!
//! Plans are computed by the dense LP engine. Infinite-cost cells are struck
//! from the variable set before the solve (hard constraints are infinities,
//! and the simplex stays purely finite); if a marginal atom loses every cell,
//! the problem value is `+inf` with no plan, which is a legal outcome rather
//! than an error.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::cost::Cost;
use crate::linprog::{self, LinProgError, LpProblem, LpStatus};
use crate::measures::{Atom, DiscreteMeasure, Point, WEIGHT_PRUNE};

/// Plan cells below this mass are dropped from the sparse output.
const PLAN_PRUNE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cost tensor shape {got:?} does not match marginal sizes {want:?}")]
    Shape { got: Vec<usize>, want: Vec<usize> },
    #[error("need at least two marginals, got {0}")]
    TooFewMarginals(usize),
    #[error("transport LP reported an unbounded problem; costs must be nonnegative")]
    Unbounded,
    #[error("assignment route requires uniform marginals with equal atom counts")]
    NotUniformEmpirical,
    #[error("covariance matrices must share one dimension: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("covariance matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),
    #[error(transparent)]
    Solver(#[from] LinProgError),
}

/// Extended-real transportation costs on the product of marginal supports,
/// stored dense in row-major order.
#[derive(Debug, Clone)]
pub struct CostTensor {
    shape: Vec<usize>,
    entries: Vec<Cost>,
}

impl CostTensor {
    pub fn new(shape: Vec<usize>, entries: Vec<Cost>) -> CostTensor {
        let cells: usize = shape.iter().product();
        assert_eq!(cells, entries.len(), "entry count must match shape");
        assert!(
            entries.iter().all(|c| match c {
                Cost::Finite(v) => *v >= 0.0,
                Cost::Infinite => true,
            }),
            "transportation costs must be nonnegative"
        );
        CostTensor { shape, entries }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> Cost) -> CostTensor {
        let cells: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut entries = Vec::with_capacity(cells);
        for _ in 0..cells {
            entries.push(f(&idx));
            advance(&mut idx, &shape);
        }
        CostTensor::new(shape, entries)
    }

    /// 2-D tensor from a row-major matrix of plain floats (`inf` allowed).
    pub fn from_matrix(rows: usize, cols: usize, data: &[f64]) -> CostTensor {
        CostTensor::new(
            vec![rows, cols],
            data.iter().map(|&v| Cost::from_f64(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn get(&self, idx: &[usize]) -> Cost {
        self.entries[self.flat(idx)]
    }

    fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut out = 0usize;
        for (i, n) in idx.iter().zip(&self.shape) {
            debug_assert!(i < n);
            out = out * n + i;
        }
        out
    }
}

fn advance(idx: &mut [usize], shape: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < shape[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// A coupling of the given marginals together with its transport cost.
///
/// `joint` is `None` exactly when every feasible coupling has infinite cost
/// (`value == Cost::Infinite`). `epsilon` is the suboptimality slack bound:
/// zero from the exact solvers here, additive under composition.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub joint: Option<DiscreteMeasure>,
    pub marginals: Vec<DiscreteMeasure>,
    pub value: Cost,
    pub epsilon: f64,
}

impl TransportPlan {
    /// Iterates positive-mass cells as (points-per-axis, mass).
    pub fn support(&self) -> impl Iterator<Item = (&[Point], f64)> {
        self.joint.iter().flat_map(|m| {
            m.atoms().iter().map(|a| {
                let parts = a.point.as_tuple().expect("plan atoms are tuples");
                (parts, a.weight)
            })
        })
    }
}

/// Optimal transport between two discrete measures.
pub fn ot2(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostTensor,
) -> Result<TransportPlan, TransportError> {
    mmot(&[mu.clone(), nu.clone()], cost)
}

/// Multi-marginal optimal transport over the product of the marginal supports.
pub fn mmot(
    marginals: &[DiscreteMeasure],
    cost: &CostTensor,
) -> Result<TransportPlan, TransportError> {
    if marginals.len() < 2 {
        return Err(TransportError::TooFewMarginals(marginals.len()));
    }
    let fixed: Vec<Option<&DiscreteMeasure>> = marginals.iter().map(Some).collect();
    let solved = solve_coupling(&fixed, cost)?;
    let joint = match &solved {
        Solved::Infinite => None,
        Solved::Finite { cells, .. } => {
            let atoms: Vec<Atom> = cells
                .iter()
                .map(|(idx, w)| Atom {
                    point: Point::Tuple(
                        idx.iter()
                            .enumerate()
                            .map(|(a, &i)| marginals[a].atoms()[i].point.clone())
                            .collect(),
                    ),
                    weight: *w,
                })
                .collect();
            Some(DiscreteMeasure::from_operation(atoms))
        }
    };
    let value = match &solved {
        Solved::Infinite => Cost::Infinite,
        Solved::Finite { value, .. } => Cost::Finite(*value),
    };
    Ok(TransportPlan {
        joint,
        marginals: marginals.to_vec(),
        value,
        epsilon: 0.0,
    })
}

/// Result of a coupling LP with the marginal constraints listed per axis.
pub enum Solved {
    Infinite,
    Finite { value: f64, cells: Vec<(Vec<usize>, f64)> },
}

/// Coupling problem where only some axes have a fixed marginal; `None` axes
/// are free. Returns the optimal value and the sparse optimal cells.
pub fn solve_free_marginal(
    fixed: &[Option<&DiscreteMeasure>],
    cost: &CostTensor,
) -> Result<Solved, TransportError> {
    solve_coupling(fixed, cost)
}

fn solve_coupling(
    fixed: &[Option<&DiscreteMeasure>],
    cost: &CostTensor,
) -> Result<Solved, TransportError> {
    let shape = cost.shape().to_vec();
    let want: Vec<usize> = fixed
        .iter()
        .zip(&shape)
        .map(|(m, &n)| m.map_or(n, |m| m.len()))
        .collect();
    if fixed.len() != shape.len() || want != shape {
        return Err(TransportError::Shape { got: shape, want });
    }

    // Variables are the finite-cost cells only.
    let mut cells: Vec<Vec<usize>> = Vec::new();
    let mut objective: Vec<f64> = Vec::new();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..total {
        if let Cost::Finite(v) = cost.get(&idx) {
            cells.push(idx.clone());
            objective.push(v);
        }
        advance(&mut idx, &shape);
    }

    // A fixed-axis atom with positive mass and no finite cell forces every
    // coupling through an infinite entry.
    let mut row_of: Vec<Vec<usize>> = Vec::new(); // (axis, atom) -> row id
    let mut rows = 0usize;
    for (a, m) in fixed.iter().enumerate() {
        let mut ids = Vec::new();
        if let Some(m) = m {
            for _ in 0..m.len() {
                ids.push(rows);
                rows += 1;
            }
        }
        let _ = a;
        row_of.push(ids);
    }
    if rows == 0 {
        // Nothing to couple: minimize pointwise.
        let best = objective.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(if best.is_finite() {
            let at = cells[objective.iter().position(|&v| v == best).unwrap()].clone();
            Solved::Finite { value: best, cells: vec![(at, 1.0)] }
        } else {
            Solved::Infinite
        });
    }

    let mut covered = vec![false; rows];
    for cell in &cells {
        for (a, &i) in cell.iter().enumerate() {
            if let Some(ids) = row_of.get(a) {
                if !ids.is_empty() {
                    covered[ids[i]] = true;
                }
            }
        }
    }
    for (a, m) in fixed.iter().enumerate() {
        if let Some(m) = m {
            for (i, atom) in m.atoms().iter().enumerate() {
                if atom.weight > WEIGHT_PRUNE && !covered[row_of[a][i]] {
                    return Ok(Solved::Infinite);
                }
            }
        }
    }

    let n = cells.len();
    if n == 0 {
        return Ok(Solved::Infinite);
    }
    let mut eq_matrix = vec![0.0f64; rows * n];
    let mut eq_rhs = vec![0.0f64; rows];
    for (a, m) in fixed.iter().enumerate() {
        if let Some(m) = m {
            for (i, atom) in m.atoms().iter().enumerate() {
                eq_rhs[row_of[a][i]] = atom.weight;
            }
        }
    }
    for (j, cell) in cells.iter().enumerate() {
        for (a, &i) in cell.iter().enumerate() {
            if !row_of[a].is_empty() {
                eq_matrix[row_of[a][i] * n + j] = 1.0;
            }
        }
    }

    let lp = LpProblem { objective, eq_matrix, eq_rhs };
    let sol = linprog::solve_lp(&lp)?;
    match sol.status {
        LpStatus::Infeasible => Ok(Solved::Infinite),
        LpStatus::Unbounded => Err(TransportError::Unbounded),
        LpStatus::Optimal => {
            let kept: Vec<(Vec<usize>, f64)> = cells
                .into_iter()
                .zip(&sol.values)
                .filter(|(_, &w)| w > PLAN_PRUNE)
                .map(|(c, &w)| (c, w))
                .collect();
            Ok(Solved::Finite {
                value: sol.objective_value.max(0.0),
                cells: kept,
            })
        }
    }
}

/// Exact two-marginal transport through the assignment solver.
///
/// Requires both marginals uniform with the same atom count; the optimal
/// vertex is then a permutation and the plan is a transport map.
pub fn ot2_assignment(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &CostTensor,
) -> Result<TransportPlan, TransportError> {
    let n = mu.len();
    if n != nu.len() {
        return Err(TransportError::NotUniformEmpirical);
    }
    let w = 1.0 / n as f64;
    let uniform = |m: &DiscreteMeasure| m.atoms().iter().all(|a| (a.weight - w).abs() <= 1e-9);
    if !uniform(mu) || !uniform(nu) {
        return Err(TransportError::NotUniformEmpirical);
    }
    if cost.shape() != [n, n] {
        return Err(TransportError::Shape {
            got: cost.shape().to_vec(),
            want: vec![n, n],
        });
    }
    let matrix: Vec<Vec<Cost>> = (0..n)
        .map(|i| (0..n).map(|j| cost.get(&[i, j])).collect())
        .collect();
    match linprog::solve_assignment(&matrix) {
        Ok((perm, total)) => {
            let atoms: Vec<Atom> = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| Atom {
                    point: Point::pair(
                        mu.atoms()[i].point.clone(),
                        nu.atoms()[j].point.clone(),
                    ),
                    weight: w,
                })
                .collect();
            Ok(TransportPlan {
                joint: Some(DiscreteMeasure::from_operation(atoms)),
                marginals: vec![mu.clone(), nu.clone()],
                value: Cost::Finite(total * w),
                epsilon: 0.0,
            })
        }
        Err(LinProgError::InfeasibleAssignment) => Ok(TransportPlan {
            joint: None,
            marginals: vec![mu.clone(), nu.clone()],
            value: Cost::Infinite,
            epsilon: 0.0,
        }),
        Err(e) => Err(TransportError::Solver(e)),
    }
}

/// Extracts the transport map underlying a plan, when there is one: every
/// first-axis support point must carry exactly one joint atom. A split plan
/// returns `None`.
pub fn as_map(plan: &TransportPlan) -> Option<Vec<(Point, Vec<Point>)>> {
    let joint = plan.joint.as_ref()?;
    let mut entries: Vec<(Point, Vec<Point>)> = Vec::new();
    for atom in joint.atoms() {
        let parts = atom.point.as_tuple().expect("plan atoms are tuples");
        let (src, dst) = (parts[0].clone(), parts[1..].to_vec());
        if entries.iter().any(|(p, _)| p.same_as(&src)) {
            return None;
        }
        entries.push((src, dst));
    }
    Some(entries)
}

/// Squared 2-Wasserstein distance between Gaussians:
/// `|m - m*|^2 + tr[S + S* - 2 (S^1/2 S* S^1/2)^1/2]`.
///
/// In one dimension this is `(m - m*)^2 + (sqrt S - sqrt S*)^2`.
pub fn gaussian_w2_sq(
    mean_a: &[f64],
    cov_a: &DMatrix<f64>,
    mean_b: &[f64],
    cov_b: &DMatrix<f64>,
) -> Result<f64, TransportError> {
    let d = mean_a.len();
    if mean_b.len() != d || cov_a.nrows() != d || cov_b.nrows() != d {
        return Err(TransportError::DimensionMismatch(d, mean_b.len().max(cov_a.nrows())));
    }
    let mean_gap: f64 = mean_a
        .iter()
        .zip(mean_b)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let root_a = sqrt_psd(cov_a)?;
    let inner = &root_a * cov_b * &root_a;
    let cross = sqrt_psd(&inner)?;
    let trace = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok(mean_gap + trace)
}

/// Symmetric PSD square root by eigendecomposition, clamping small negative
/// eigenvalues at zero. Eigenvalues materially below zero are a domain error.
fn sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>, TransportError> {
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(TransportError::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    let mut out = DMatrix::zeros(s.nrows(), s.ncols());
    for (k, &lam) in vals.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        out += lam * &col * col.transpose();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::Atom;

    fn pm_half() -> DiscreteMeasure {
        DiscreteMeasure::new(vec![
            Atom { point: Point::scalar(-1.0), weight: 0.5 },
            Atom { point: Point::scalar(1.0), weight: 0.5 },
        ])
        .unwrap()
    }

    fn sq_dist(points_a: &DiscreteMeasure, points_b: &DiscreteMeasure) -> CostTensor {
        CostTensor::from_fn(vec![points_a.len(), points_b.len()], |idx| {
            let x = points_a.atoms()[idx[0]].point.as_euclid().unwrap()[0];
            let y = points_b.atoms()[idx[1]].point.as_euclid().unwrap()[0];
            Cost::Finite((x - y).powi(2))
        })
    }

    #[test]
    fn forced_split_coupling() {
        let mu = DiscreteMeasure::dirac(Point::scalar(0.0));
        let nu = pm_half();
        let plan = ot2(&mu, &nu, &sq_dist(&mu, &nu)).unwrap();
        assert_eq!(plan.value, Cost::Finite(1.0));
        let joint = plan.joint.as_ref().unwrap();
        assert_eq!(joint.len(), 2);
        for atom in joint.atoms() {
            assert!((atom.weight - 0.5).abs() < 1e-12);
        }
        assert!(as_map(&plan).is_none(), "split plans carry no map");
    }

    #[test]
    fn identical_measures_zero_diagonal() {
        let m = pm_half();
        let plan = ot2(&m, &m, &sq_dist(&m, &m)).unwrap();
        assert!(plan.value.approx_eq(Cost::ZERO, 1e-12));
        let map = as_map(&plan).expect("diagonal plan is a map");
        for (src, dst) in map {
            assert!(src.same_as(&dst[0]));
        }
    }

    /// The frozen-reference table {(+-1,+-1): 2, (+-1,-+1): 6} prices the
    /// naive two-marginal allocation at 2.
    #[test]
    fn naive_table_value() {
        let m = pm_half();
        let cost = CostTensor::from_fn(vec![2, 2], |idx| {
            Cost::Finite(if idx[0] == idx[1] { 2.0 } else { 6.0 })
        });
        let plan = ot2(&m, &m, &cost).unwrap();
        assert!(plan.value.approx_eq(Cost::Finite(2.0), 1e-12));
    }

    #[test]
    fn infinite_rows_make_value_infinite() {
        let mu = pm_half();
        let nu = pm_half();
        let cost = CostTensor::new(vec![2, 2], vec![Cost::Infinite; 4]);
        let plan = ot2(&mu, &nu, &cost).unwrap();
        assert_eq!(plan.value, Cost::Infinite);
        assert!(plan.joint.is_none());
    }

    #[test]
    fn partial_infinity_routes_around() {
        let mu = pm_half();
        let nu = pm_half();
        let cost = CostTensor::new(
            vec![2, 2],
            vec![Cost::Infinite, Cost::Finite(1.0), Cost::Finite(1.0), Cost::Infinite],
        );
        let plan = ot2(&mu, &nu, &cost).unwrap();
        assert!(plan.value.approx_eq(Cost::Finite(1.0), 1e-12));
    }

    #[test]
    fn delta_marginals_product_plan() {
        let a = DiscreteMeasure::dirac(Point::label("a"));
        let b = DiscreteMeasure::dirac(Point::label("b"));
        let c = DiscreteMeasure::dirac(Point::label("c"));
        let cost = CostTensor::new(vec![1, 1, 1], vec![Cost::Finite(4.25)]);
        let plan = mmot(&[a, b, c], &cost).unwrap();
        assert_eq!(plan.value, Cost::Finite(4.25));
        assert_eq!(plan.joint.as_ref().unwrap().len(), 1);
    }

    #[test]
    fn mmot_shape_mismatch_is_domain_error() {
        let m = pm_half();
        let cost = CostTensor::new(vec![2, 3], vec![Cost::ZERO; 6]);
        assert!(matches!(
            mmot(&[m.clone(), m], &cost),
            Err(TransportError::Shape { .. })
        ));
    }

    #[test]
    fn marginal_feasibility_of_plans() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let sizes = [rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4)];
            let marginals: Vec<DiscreteMeasure> = sizes
                .iter()
                .map(|&n| random_measure(&mut rng, n))
                .collect();
            let cost = CostTensor::from_fn(sizes.to_vec(), |_| {
                Cost::Finite(rng.gen_range(0.0..10.0))
            });
            let plan = mmot(&marginals, &cost).unwrap();
            let joint = plan.joint.as_ref().unwrap();
            for (axis, m) in marginals.iter().enumerate() {
                let proj = joint.marginal(axis).unwrap();
                for atom in m.atoms() {
                    assert!(
                        (proj.weight_at(&atom.point) - atom.weight).abs() < 1e-9,
                        "marginal {axis} violated"
                    );
                }
            }
            // Value equals the cost-weighted mass of the joint.
            let mut recomputed = 0.0;
            for (parts, w) in plan.support() {
                let idx: Vec<usize> = parts
                    .iter()
                    .zip(&marginals)
                    .map(|(p, m)| m.atoms().iter().position(|a| a.point.same_as(p)).unwrap())
                    .collect();
                recomputed += w * cost.get(&idx).finite().unwrap();
            }
            assert!(plan.value.approx_eq(Cost::Finite(recomputed), 1e-9));
        }
    }

    fn random_measure(rng: &mut impl rand::Rng, n: usize) -> DiscreteMeasure {
        let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        DiscreteMeasure::new(
            weights
                .into_iter()
                .enumerate()
                .map(|(i, weight)| Atom {
                    point: Point::scalar(i as f64),
                    weight,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Vertex-enumeration oracle: all basic solutions of the coupling LP.
    fn enumerate_vertices_min(marginals: &[DiscreteMeasure], cost: &CostTensor) -> Cost {
        let sizes: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
        let cells: usize = sizes.iter().product();
        let rows: usize = sizes.iter().sum();
        let mut matrix = vec![0.0f64; rows * cells];
        let mut rhs = vec![0.0f64; rows];
        let mut row0 = 0;
        for (a, m) in marginals.iter().enumerate() {
            for (i, atom) in m.atoms().iter().enumerate() {
                rhs[row0 + i] = atom.weight;
                let _ = a;
            }
            row0 += m.len();
        }
        let mut idx = vec![0usize; sizes.len()];
        for j in 0..cells {
            let mut row0 = 0;
            for (a, &i) in idx.iter().enumerate() {
                matrix[(row0 + i) * cells + j] = 1.0;
                row0 += sizes[a];
            }
            advance(&mut idx, &sizes);
        }
        // Choose every subset of columns of size = rank guess (rows - (axes-1)),
        // solve, keep feasible basic solutions.
        let rank = rows - (marginals.len() - 1);
        let mut best = Cost::Infinite;
        let mut subset: Vec<usize> = (0..rank).collect();
        loop {
            if let Some(x) = basic_solution(&matrix, &rhs, rows, cells, &subset) {
                let mut total = Cost::ZERO;
                for (&j, &v) in subset.iter().zip(&x) {
                    if v > 1e-9 {
                        total = total + cost.entries[j].scale(v);
                    }
                }
                best = best.min(total);
            }
            // next combination
            let mut i = rank;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if subset[i] != i + cells - rank {
                    subset[i] += 1;
                    for k in i + 1..rank {
                        subset[k] = subset[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn basic_solution(
        matrix: &[f64],
        rhs: &[f64],
        rows: usize,
        cells: usize,
        subset: &[usize],
    ) -> Option<Vec<f64>> {
        let k = subset.len();
        // Least-squares-free direct solve on a square subsystem: use the first
        // k independent rows via full elimination of the rows x k system.
        let mut a = vec![0.0f64; rows * (k + 1)];
        for r in 0..rows {
            for (c, &j) in subset.iter().enumerate() {
                a[r * (k + 1) + c] = matrix[r * cells + j];
            }
            a[r * (k + 1) + k] = rhs[r];
        }
        // Gaussian elimination with row pivoting over a possibly tall system.
        let w = k + 1;
        let mut pivot_rows = Vec::new();
        let mut r0 = 0;
        for c in 0..k {
            let mut best = None;
            for r in r0..rows {
                let v = a[r * w + c].abs();
                if v > 1e-9 && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((r, v));
                }
            }
            let (pr, _) = best?;
            for j in 0..w {
                a.swap(r0 * w + j, pr * w + j);
            }
            let piv = a[r0 * w + c];
            for j in 0..w {
                a[r0 * w + j] /= piv;
            }
            for r in 0..rows {
                if r != r0 {
                    let f = a[r * w + c];
                    if f != 0.0 {
                        for j in 0..w {
                            a[r * w + j] -= f * a[r0 * w + j];
                        }
                    }
                }
            }
            pivot_rows.push(r0);
            r0 += 1;
        }
        // Remaining rows must be consistent.
        for r in r0..rows {
            if a[r * w + k].abs() > 1e-9 {
                return None;
            }
        }
        let x: Vec<f64> = (0..k).map(|c| a[c * w + k]).collect();
        if x.iter().any(|&v| v < -1e-9) {
            return None;
        }
        Some(x)
    }

    #[test]
    fn mmot_matches_vertex_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let axes = rng.gen_range(2..=3);
            let marginals: Vec<DiscreteMeasure> =
                (0..axes).map(|_| random_measure(&mut rng, 2)).collect();
            let shape: Vec<usize> = vec![2; axes];
            let cost = CostTensor::from_fn(shape, |_| Cost::Finite(rng.gen_range(0.0..8.0)));
            let plan = mmot(&marginals, &cost).unwrap();
            let brute = enumerate_vertices_min(&marginals, &cost);
            assert!(
                plan.value.approx_eq(brute, 1e-9),
                "mmot {:?} vs vertex enumeration {:?}",
                plan.value,
                brute
            );
        }
    }

    #[test]
    fn assignment_route_matches_lp_route() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let n = rng.gen_range(2..=6);
            let mu = DiscreteMeasure::uniform(
                (0..n).map(|i| Point::scalar(i as f64 + rng.gen_range(0.0..0.4))).collect(),
            )
            .unwrap();
            let nu = DiscreteMeasure::uniform(
                (0..n).map(|i| Point::scalar(i as f64 + rng.gen_range(0.5..0.9))).collect(),
            )
            .unwrap();
            let cost = sq_dist(&mu, &nu);
            let via_lp = ot2(&mu, &nu, &cost).unwrap();
            let via_assignment = ot2_assignment(&mu, &nu, &cost).unwrap();
            assert!(via_lp.value.approx_eq(via_assignment.value, 1e-9));
        }
    }

    #[test]
    fn map_extraction_on_map_plan() {
        let mu = pm_half();
        // Plan (id, id, -id, id)#mu over four axes.
        let atoms: Vec<Atom> = mu
            .atoms()
            .iter()
            .map(|a| {
                let x = a.point.as_euclid().unwrap()[0];
                Atom {
                    point: Point::tuple(vec![
                        Point::scalar(x),
                        Point::scalar(x),
                        Point::scalar(-x),
                        Point::scalar(x),
                    ]),
                    weight: a.weight,
                }
            })
            .collect();
        let joint = DiscreteMeasure::new(atoms).unwrap();
        let plan = TransportPlan {
            joint: Some(joint),
            marginals: vec![mu.clone(), mu.clone(), mu.clone(), mu],
            value: Cost::ZERO,
            epsilon: 0.0,
        };
        let map = as_map(&plan).expect("map-induced plan");
        for (src, dst) in map {
            let x = src.as_euclid().unwrap()[0];
            assert!(dst[0].same_as(&Point::scalar(x)));
            assert!(dst[1].same_as(&Point::scalar(-x)));
            assert!(dst[2].same_as(&Point::scalar(x)));
        }
    }

    #[test]
    fn gaussian_identical_is_zero() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = gaussian_w2_sq(&[0.5, -1.0], &s, &[0.5, -1.0], &s).unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn gaussian_scalar_parameterization() {
        // (m, sigma) = (1, 2) vs (3, 5): (1-3)^2 + (2-5)^2 = 13.
        let sa = DMatrix::from_element(1, 1, 4.0);
        let sb = DMatrix::from_element(1, 1, 25.0);
        let v = gaussian_w2_sq(&[1.0], &sa, &[3.0], &sb).unwrap();
        assert!((v - 13.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_mean_shift_only() {
        let s = DMatrix::from_element(1, 1, 2.25);
        let v = gaussian_w2_sq(&[0.0], &s, &[4.0], &s).unwrap();
        assert!((v - 16.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let id = DMatrix::identity(2, 2);
        assert!(matches!(
            gaussian_w2_sq(&[0.0, 0.0], &s, &[0.0, 0.0], &id),
            Err(TransportError::NotPsd(_))
        ));
    }
}
