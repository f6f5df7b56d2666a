//! Closed-form ground-space solvers for linear-quadratic instances.
//!
//! These produce the transportation costs for continuous-state lifting: the
//! integrator steering formula, the classical finite-horizon Riccati
//! recursion, the variance-aware pair of recursions, and the coupled
//! `(P_x, P_y, P_xy)` recursion whose quadratic `c_k(x, y)` prices steering a
//! particle from `x` to a target point `y`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LqrError {
    #[error("stage index {k} out of range for horizon {n}")]
    StageOutOfRange { k: usize, n: usize },
    #[error("matrix dimensions are inconsistent: {0}")]
    Dimensions(String),
    #[error("R + B^T P B is singular; R must be positive definite")]
    SingularInnerMatrix,
    #[error("{0} must be symmetric positive semidefinite")]
    NotPsd(&'static str),
}

/// Finite-horizon linear-quadratic data, time-varying per stage.
///
/// `q` is optional: the pair recursion prices pure input effort and does not
/// use it; the classical recursion requires it.
#[derive(Debug, Clone)]
pub struct LqrSystem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub q: Option<Vec<DMatrix<f64>>>,
    pub p_terminal: DMatrix<f64>,
}

impl LqrSystem {
    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.p_terminal.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.first().map_or(0, |b| b.ncols())
    }

    fn validate(&self) -> Result<(), LqrError> {
        let n = self.a.len();
        let dim = self.state_dim();
        if n == 0 {
            return Err(LqrError::Dimensions("horizon must be at least 1".into()));
        }
        if self.b.len() != n || self.r.len() != n {
            return Err(LqrError::Dimensions("A, B, R must cover every stage".into()));
        }
        if let Some(q) = &self.q {
            if q.len() != n {
                return Err(LqrError::Dimensions("Q must cover every stage".into()));
            }
            for qk in q {
                check_psd(qk, "Q")?;
            }
        }
        for k in 0..n {
            if self.a[k].nrows() != dim || self.a[k].ncols() != dim {
                return Err(LqrError::Dimensions(format!("A[{k}] is not {dim}x{dim}")));
            }
            if self.b[k].nrows() != dim {
                return Err(LqrError::Dimensions(format!("B[{k}] row count differs from A")));
            }
            let p = self.b[k].ncols();
            if self.r[k].nrows() != p || self.r[k].ncols() != p {
                return Err(LqrError::Dimensions(format!("R[{k}] does not match B[{k}]")));
            }
            check_pd(&self.r[k], "R")?;
        }
        check_psd(&self.p_terminal, "terminal P")?;
        Ok(())
    }
}

fn check_pd(m: &DMatrix<f64>, name: &'static str) -> Result<(), LqrError> {
    let sym = (m + m.transpose()) * 0.5;
    if sym.clone().cholesky().is_none() {
        return Err(LqrError::Dimensions(format!("{name} must be positive definite")));
    }
    Ok(())
}

fn check_psd(m: &DMatrix<f64>, name: &'static str) -> Result<(), LqrError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |acc, &v| acc.max(v.abs()));
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
        return Err(LqrError::NotPsd(name));
    }
    Ok(())
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn solve_spd(g: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, LqrError> {
    let chol = symmetrize(g).cholesky().ok_or(LqrError::SingularInnerMatrix)?;
    Ok(chol.solve(rhs))
}

/// Steering cost for integrator dynamics with pure input effort and a hard
/// terminal constraint: `((N - k) / N^2) * |r - x|^2`, with companion
/// feedback `(r - x) / (N - k)`.
///
/// The equal-split feedback realizes `|r - x|^2 / (N - k)` from stage `k`;
/// along the optimal trajectory from stage 0 the two expressions agree, and
/// they are proportional by `((N - k) / N)^2` in general, so either one
/// induces the same transport plans.
pub fn integrator_cost_to_go(n: usize, k: usize, x: &[f64], r: &[f64]) -> Result<f64, LqrError> {
    if k >= n {
        return Err(LqrError::StageOutOfRange { k, n });
    }
    if x.len() != r.len() {
        return Err(LqrError::Dimensions("x and r dimensions differ".into()));
    }
    let gap: f64 = x.iter().zip(r).map(|(a, b)| (b - a).powi(2)).sum();
    Ok(gap * (n - k) as f64 / (n * n) as f64)
}

/// The equal-split integrator feedback `(r - x) / (N - k)`.
pub fn integrator_feedback(n: usize, k: usize, x: &[f64], r: &[f64]) -> Result<Vec<f64>, LqrError> {
    if k >= n {
        return Err(LqrError::StageOutOfRange { k, n });
    }
    let steps = (n - k) as f64;
    Ok(x.iter().zip(r).map(|(a, b)| (b - a) / steps).collect())
}

/// Quadratic two-point cost-to-go tables
/// `c_k(x, y) = x^T P_x x + y^T P_y y + 2 x^T P_xy y`
/// with the feedback `u_k(x, y) = -K_x x - K_y y`.
#[derive(Debug, Clone)]
pub struct QuadraticCostToGo {
    /// `P_x`, `P_y`, `P_xy` per stage `0..=N`.
    pub p_x: Vec<DMatrix<f64>>,
    pub p_y: Vec<DMatrix<f64>>,
    pub p_xy: Vec<DMatrix<f64>>,
    /// Gains per stage `0..N`.
    pub k_x: Vec<DMatrix<f64>>,
    pub k_y: Vec<DMatrix<f64>>,
}

impl QuadraticCostToGo {
    pub fn cost(&self, k: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let quad = |m: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * m * b)[(0, 0)];
        quad(&self.p_x[k], x, x) + quad(&self.p_y[k], y, y) + 2.0 * quad(&self.p_xy[k], x, y)
    }

    pub fn feedback(&self, k: usize, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        -(&self.k_x[k] * x) - &self.k_y[k] * y
    }
}

/// Coupled backward recursion for the cost of steering a particle at `x` to a
/// fixed target point `y` over the remaining horizon, paying `|u|^2_R` per
/// stage and `|x_N - y|^2_{P_N}` at the end.
///
/// Initialization `P_x = P_y = -P_xy = P_N`; at each stage, with
/// `G = R + B^T P_x^+ B` and `K = G^-1 B^T`:
/// `K_x = K P_x^+ A`, `K_y = K P_xy^+`,
/// `P_x = A^T P_x^+ A - A^T P_x^+ B K_x`,
/// `P_y = P_y^+ - (B K_y)^T P_xy^+`,
/// `P_xy = (A - B K_x)^T P_xy^+`.
pub fn lqr_pair_recursion(sys: &LqrSystem) -> Result<QuadraticCostToGo, LqrError> {
    sys.validate()?;
    let n = sys.horizon();
    let pn = symmetrize(&sys.p_terminal);
    let mut p_x = vec![pn.clone()];
    let mut p_y = vec![pn.clone()];
    let mut p_xy = vec![-&pn];
    let mut k_x: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut k_y: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let (a, b, r) = (&sys.a[k], &sys.b[k], &sys.r[k]);
        let (px_next, py_next, pxy_next) = (&p_x[0], &p_y[0], &p_xy[0]);
        let g = r + b.transpose() * px_next * b;
        let kx = solve_spd(&g, &(b.transpose() * px_next * a))?;
        let ky = solve_spd(&g, &(b.transpose() * pxy_next))?;
        let closed = a - b * &kx;
        let px = symmetrize(&(a.transpose() * px_next * a - a.transpose() * px_next * b * &kx));
        let py = symmetrize(&(py_next - (b * &ky).transpose() * pxy_next));
        let pxy = closed.transpose() * pxy_next;
        p_x.insert(0, px);
        p_y.insert(0, py);
        p_xy.insert(0, pxy);
        k_x.insert(0, kx);
        k_y.insert(0, ky);
    }
    Ok(QuadraticCostToGo { p_x, p_y, p_xy, k_x, k_y })
}

/// Classical finite-horizon Riccati recursion.
///
/// Returns `(P_0..=P_N, K_0..K_{N-1})` with `u_k = -K_k x_k` and
/// `P_k = Q_k + A^T P_{k+1} A - A^T P_{k+1} B (R + B^T P_{k+1} B)^-1 B^T P_{k+1} A`.
pub fn lqr_classic(sys: &LqrSystem) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), LqrError> {
    sys.validate()?;
    let q = sys
        .q
        .as_ref()
        .ok_or_else(|| LqrError::Dimensions("classical recursion requires Q".into()))?;
    let n = sys.horizon();
    let mut p = vec![symmetrize(&sys.p_terminal)];
    let mut gains: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let (a, b, r) = (&sys.a[k], &sys.b[k], &sys.r[k]);
        let p_next = &p[0];
        let g = r + b.transpose() * p_next * b;
        let kk = solve_spd(&g, &(b.transpose() * p_next * a))?;
        let pk = symmetrize(&(&q[k] + a.transpose() * p_next * a - a.transpose() * p_next * b * &kk));
        p.insert(0, pk);
        gains.insert(0, kk);
    }
    Ok((p, gains))
}

/// Variance-aware recursion: two decoupled classical recursions, one for the
/// mean (weights `Q_1`, terminal `P_1N`) and one for the deviation from the
/// mean (weights `Q_2`, terminal `P_2N`).
///
/// The combined control law is `u(x) = -K_2 (x - m) - K_1 m` where `m` is the
/// ensemble mean; the mean then evolves as `m' = (A - B K_1) m` and the
/// deviation as `(A - B K_2)(x - m)`.
#[allow(clippy::type_complexity)]
pub fn lqr_variance_aware(
    sys: &LqrSystem,
    q1: &[DMatrix<f64>],
    q2: &[DMatrix<f64>],
    p1_terminal: &DMatrix<f64>,
    p2_terminal: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>), LqrError> {
    let mean_sys = LqrSystem {
        a: sys.a.clone(),
        b: sys.b.clone(),
        r: sys.r.clone(),
        q: Some(q1.to_vec()),
        p_terminal: p1_terminal.clone(),
    };
    let dev_sys = LqrSystem {
        a: sys.a.clone(),
        b: sys.b.clone(),
        r: sys.r.clone(),
        q: Some(q2.to_vec()),
        p_terminal: p2_terminal.clone(),
    };
    let (p1, k1) = lqr_classic(&mean_sys)?;
    let (p2, k2) = lqr_classic(&dev_sys)?;
    Ok((p1, p2, k1, k2))
}

/// Pair recursion extended with a per-stage tracking weight `Q`, additive
/// noise of mean `m` and covariance `S`, and the resulting linear and
/// constant cost terms:
/// `c_k(x, y) = x^T P_x x + y^T P_y y + 2 x^T P_xy y + x^T c_x + y^T c_y + c_w`,
/// with feedback `u = -K_x x - K_y y - k_w`.
#[derive(Debug, Clone)]
pub struct NoisyQuadraticCostToGo {
    pub pair: QuadraticCostToGo,
    pub c_x: Vec<DVector<f64>>,
    pub c_y: Vec<DVector<f64>>,
    pub c_w: Vec<f64>,
    pub k_w: Vec<DVector<f64>>,
}

impl NoisyQuadraticCostToGo {
    pub fn cost(&self, k: usize, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.pair.cost(k, x, y)
            + x.dot(&self.c_x[k])
            + y.dot(&self.c_y[k])
            + self.c_w[k]
    }

    pub fn feedback(&self, k: usize, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.pair.feedback(k, x, y) - &self.k_w[k]
    }
}

/// Noisy variant of [`lqr_pair_recursion`] with stage cost
/// `|x - y|^2_Q + |u|^2_R` and dynamics `x' = A x + B u + w`,
/// `w ~ (m, S)`. With `Q = 0`, `m = 0`, `S = 0` it reproduces the
/// deterministic recursion exactly.
pub fn lqr_pair_recursion_noisy(
    sys: &LqrSystem,
    q: &DMatrix<f64>,
    noise_mean: &DVector<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<NoisyQuadraticCostToGo, LqrError> {
    sys.validate()?;
    check_psd(q, "Q")?;
    check_psd(noise_cov, "noise covariance")?;
    let n = sys.horizon();
    let dim = sys.state_dim();
    if noise_mean.len() != dim || noise_cov.nrows() != dim || q.nrows() != dim {
        return Err(LqrError::Dimensions("noise terms must match the state dimension".into()));
    }
    let pn = symmetrize(&sys.p_terminal);
    let mut p_x = vec![pn.clone()];
    let mut p_y = vec![pn.clone()];
    let mut p_xy = vec![-&pn];
    let mut c_x = vec![DVector::zeros(dim)];
    let mut c_y = vec![DVector::zeros(dim)];
    let mut c_w = vec![0.0f64];
    let mut k_x: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut k_y: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut k_w: Vec<DVector<f64>> = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let (a, b, r) = (&sys.a[k], &sys.b[k], &sys.r[k]);
        let (px_next, pxy_next) = (p_x[0].clone(), p_xy[0].clone());
        let (py_next, cx_next, cy_next, cw_next) =
            (p_y[0].clone(), c_x[0].clone(), c_y[0].clone(), c_w[0]);
        let g = r + b.transpose() * &px_next * b;
        let kx = solve_spd(&g, &(b.transpose() * &px_next * a))?;
        let ky = solve_spd(&g, &(b.transpose() * &pxy_next))?;
        let lin = &px_next * noise_mean + &cx_next * 0.5;
        let kw_rhs = b.transpose() * &lin;
        let kw = solve_spd(&g, &DMatrix::from_column_slice(kw_rhs.len(), 1, kw_rhs.as_slice()))?
            .column(0)
            .into_owned();
        let closed = a - b * &kx;

        let px = symmetrize(&(q + a.transpose() * &px_next * a - a.transpose() * &px_next * b * &kx));
        let py = symmetrize(&(q + &py_next - (b * &ky).transpose() * &pxy_next));
        let pxy = -q + closed.transpose() * &pxy_next;
        let drive = &cx_next + 2.0 * &px_next * noise_mean;
        let cx = closed.transpose() * &drive;
        let cy = &cy_next - (b * &ky).transpose() * &drive + 2.0 * pxy_next.transpose() * noise_mean;
        let g_kw = &g * &kw;
        let cw = cw_next
            + noise_mean.dot(&cx_next)
            + (noise_mean.transpose() * &px_next * noise_mean)[(0, 0)]
            + (&px_next * noise_cov).trace()
            - kw.dot(&g_kw);

        p_x.insert(0, px);
        p_y.insert(0, py);
        p_xy.insert(0, pxy);
        c_x.insert(0, cx);
        c_y.insert(0, cy);
        c_w.insert(0, cw);
        k_x.insert(0, kx);
        k_y.insert(0, ky);
        k_w.insert(0, kw);
    }
    Ok(NoisyQuadraticCostToGo {
        pair: QuadraticCostToGo { p_x, p_y, p_xy, k_x, k_y },
        c_x,
        c_y,
        c_w,
        k_w,
    })
}

/// Golden-section minimization of a unimodal scalar function on `[lo, hi]`.
pub fn golden_section(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_sys(n: usize, a: f64, b: f64, r: f64, p: f64) -> LqrSystem {
        LqrSystem {
            a: vec![DMatrix::from_element(1, 1, a); n],
            b: vec![DMatrix::from_element(1, 1, b); n],
            r: vec![DMatrix::from_element(1, 1, r); n],
            q: None,
            p_terminal: DMatrix::from_element(1, 1, p),
        }
    }

    #[test]
    fn integrator_formula_values() {
        assert_relative_eq!(integrator_cost_to_go(2, 0, &[0.0], &[1.0]).unwrap(), 0.5);
        assert_relative_eq!(integrator_cost_to_go(3, 1, &[0.7, -0.2], &[0.7, -0.2]).unwrap(), 0.0);
        assert_relative_eq!(integrator_cost_to_go(4, 2, &[0.0], &[2.0]).unwrap(), 0.5);
        assert!(integrator_cost_to_go(3, 3, &[0.0], &[1.0]).is_err());
    }

    /// One-step Bellman check on the realized ("residual") form
    /// `|r - x|^2 / (N - k)`: golden-section over the input confirms the
    /// equal-split feedback, and the tabulated form is its `((N-k)/N)^2`
    /// rescaling, with equality at `k = 0`.
    #[test]
    fn integrator_bellman_consistency() {
        for n in 2..=5usize {
            for k in 0..n - 1 {
                let d = 1.7;
                let steps = (n - k) as f64;
                let residual_next = |gap: f64| {
                    if n - k - 1 == 0 { 0.0 } else { gap * gap / (n - k - 1) as f64 }
                };
                let (u_star, val) =
                    golden_section(-3.0, 3.0, 1e-10, |u| u * u + residual_next(d - u));
                assert!((u_star - d / steps).abs() < 1e-6, "feedback at n={n}, k={k}");
                assert!((val - d * d / steps).abs() < 1e-8, "residual value at n={n}, k={k}");
                // Tabulated form is the residual rescaled by ((N-k)/N)^2.
                let tab = integrator_cost_to_go(n, k, &[0.0], &[d]).unwrap();
                let scale = (steps / n as f64).powi(2);
                assert_relative_eq!(tab, scale * val, epsilon = 1e-8);
            }
            let tab0 = integrator_cost_to_go(n, 0, &[0.0], &[1.7]).unwrap();
            assert_relative_eq!(tab0, 1.7f64.powi(2) / n as f64, epsilon = 1e-12);
        }
    }

    /// 1-D, N=1, A=B=R=1, P_N=1: c0(x,y) = (x-y)^2 / 2, gains +-1/2.
    /// Frozen from minimizing u^2 + (x + u - y)^2 by hand.
    #[test]
    fn pair_recursion_one_step_scalar() {
        let tab = lqr_pair_recursion(&scalar_sys(1, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(tab.k_x[0][(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(tab.k_y[0][(0, 0)], -0.5, epsilon = 1e-12);
        assert_relative_eq!(tab.p_x[0][(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(tab.p_y[0][(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(tab.p_xy[0][(0, 0)], -0.5, epsilon = 1e-12);
        let (x, y) = (DVector::from_element(1, 2.0), DVector::from_element(1, -1.0));
        assert_relative_eq!(tab.cost(0, &x, &y), 0.5 * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn pair_recursion_uncontrollable() {
        let tab = lqr_pair_recursion(&scalar_sys(3, 1.3, 0.0, 2.0, 1.0)).unwrap();
        for k in 0..3 {
            assert_eq!(tab.k_x[k][(0, 0)], 0.0);
            assert_eq!(tab.k_y[k][(0, 0)], 0.0);
        }
        // P_x propagates as A^T P A.
        assert_relative_eq!(tab.p_x[0][(0, 0)], 1.3f64.powi(6), epsilon = 1e-10);
    }

    fn simulate_pair_cost(
        sys: &LqrSystem,
        tab: &QuadraticCostToGo,
        x0: &DVector<f64>,
        y: &DVector<f64>,
    ) -> f64 {
        let n = sys.horizon();
        let mut x = x0.clone();
        let mut total = 0.0;
        for k in 0..n {
            let u = tab.feedback(k, &x, y);
            total += (u.transpose() * &sys.r[k] * &u)[(0, 0)];
            x = &sys.a[k] * &x + &sys.b[k] * &u;
        }
        let gap = &x - y;
        total + (gap.transpose() * &sys.p_terminal * &gap)[(0, 0)]
    }

    #[test]
    fn pair_rollout_identity_small() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..40 {
            let dim = if trial % 2 == 0 { 1 } else { 2 };
            let n = rng.gen_range(1..=4);
            let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng, r: usize, c: usize| {
                DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
            };
            let spd = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| {
                let m = rand_mat(rng, d, d);
                &m * m.transpose() + DMatrix::identity(d, d) * 0.3
            };
            let sys = LqrSystem {
                a: (0..n).map(|_| rand_mat(&mut rng, dim, dim)).collect(),
                b: (0..n).map(|_| rand_mat(&mut rng, dim, dim)).collect(),
                r: (0..n).map(|_| spd(&mut rng, dim)).collect(),
                q: None,
                p_terminal: spd(&mut rng, dim),
            };
            let tab = lqr_pair_recursion(&sys).unwrap();
            let x0 = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));
            let y = DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..2.0));
            let rolled = simulate_pair_cost(&sys, &tab, &x0, &y);
            let tabulated = tab.cost(0, &x0, &y);
            assert!(
                (rolled - tabulated).abs() <= 1e-8 * (1.0 + tabulated.abs()),
                "trial {trial}: rollout {rolled} vs table {tabulated}"
            );
            // Same-point cost is nonnegative.
            assert!(tab.cost(0, &y, &y) >= -1e-9);
        }
    }

    /// The cancellation -A^T Px+ B K_y + K_x^T (R + B^T Px+ B) K_y = 0 at
    /// every stage.
    #[test]
    fn pair_cross_term_cancellation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let dim = 2;
            let n = 3;
            let rand_mat = |rng: &mut rand_chacha::ChaCha8Rng| {
                DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0))
            };
            let spd = |rng: &mut rand_chacha::ChaCha8Rng| {
                let m = rand_mat(rng);
                &m * m.transpose() + DMatrix::identity(dim, dim) * 0.4
            };
            let sys = LqrSystem {
                a: (0..n).map(|_| rand_mat(&mut rng)).collect(),
                b: (0..n).map(|_| rand_mat(&mut rng)).collect(),
                r: (0..n).map(|_| spd(&mut rng)).collect(),
                q: None,
                p_terminal: spd(&mut rng),
            };
            let tab = lqr_pair_recursion(&sys).unwrap();
            for k in 0..n {
                let g = &sys.r[k] + sys.b[k].transpose() * &tab.p_x[k + 1] * &sys.b[k];
                let lhs = -sys.a[k].transpose() * &tab.p_x[k + 1] * &sys.b[k] * &tab.k_y[k]
                    + tab.k_x[k].transpose() * g * &tab.k_y[k];
                assert!(lhs.amax() < 1e-10, "stage {k} cancellation");
                // Symmetry within 1e-10.
                assert!((&tab.p_x[k] - tab.p_x[k].transpose()).amax() < 1e-10);
                assert!((&tab.p_y[k] - tab.p_y[k].transpose()).amax() < 1e-10);
            }
        }
    }

    /// Scalar hand value: Q=0, N=1, A=B=R=P_N=1 gives P_0 = 1 - 1/2 = 1/2.
    #[test]
    fn classic_scalar_step() {
        let mut sys = scalar_sys(1, 1.0, 1.0, 1.0, 1.0);
        sys.q = Some(vec![DMatrix::zeros(1, 1)]);
        let (p, k) = lqr_classic(&sys).unwrap();
        assert_relative_eq!(p[0][(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(k[0][(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn classic_drift_free() {
        let mut sys = scalar_sys(2, 0.0, 1.0, 1.0, 2.0);
        sys.q = Some(vec![DMatrix::from_element(1, 1, 0.7); 2]);
        let (p, _) = lqr_classic(&sys).unwrap();
        // A = 0 collapses the recursion onto Q.
        assert_relative_eq!(p[0][(0, 0)], 0.7, epsilon = 1e-12);
        assert_relative_eq!(p[1][(0, 0)], 0.7, epsilon = 1e-12);
    }

    /// Grid-search oracle on one-step scalar problems.
    #[test]
    fn classic_matches_grid_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(0.2..2.0));
            let r = rng.gen_range(0.2..2.0);
            let q = rng.gen_range(0.0..2.0);
            let pn = rng.gen_range(0.1..2.0);
            let mut sys = scalar_sys(1, a, b, r, pn);
            sys.q = Some(vec![DMatrix::from_element(1, 1, q)]);
            let (p, _) = lqr_classic(&sys).unwrap();
            let x = 1.3;
            let want = p[0][(0, 0)] * x * x;
            let mut best = f64::INFINITY;
            let mut u = -30.0;
            while u <= 30.0 {
                let next = a * x + b * u;
                best = best.min(q * x * x + r * u * u + pn * next * next);
                u += 1e-4;
            }
            assert!((best - want).abs() < 1e-6, "grid {best} vs riccati {want}");
        }
    }

    #[test]
    fn variance_aware_degenerates_to_classic() {
        let sys = scalar_sys(3, 1.1, 0.8, 0.5, 1.0);
        let q = vec![DMatrix::from_element(1, 1, 0.3); 3];
        let pn = DMatrix::from_element(1, 1, 1.0);
        let (p1, p2, k1, k2) = lqr_variance_aware(&sys, &q, &q, &pn, &pn).unwrap();
        let mut classic = sys.clone();
        classic.q = Some(q.clone());
        let (p, k) = lqr_classic(&classic).unwrap();
        for i in 0..=3 {
            assert_relative_eq!(p1[i][(0, 0)], p[i][(0, 0)], epsilon = 1e-12);
            assert_relative_eq!(p2[i][(0, 0)], p[i][(0, 0)], epsilon = 1e-12);
        }
        for i in 0..3 {
            assert_relative_eq!(k1[i][(0, 0)], k[i][(0, 0)], epsilon = 1e-12);
            assert_relative_eq!(k2[i][(0, 0)], k[i][(0, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn variance_aware_uncontrollable() {
        let sys = scalar_sys(2, 1.2, 0.0, 1.0, 1.0);
        let q1 = vec![DMatrix::from_element(1, 1, 0.4); 2];
        let q2 = vec![DMatrix::from_element(1, 1, 0.9); 2];
        let pn = DMatrix::from_element(1, 1, 1.0);
        let (p1, p2, _, _) = lqr_variance_aware(&sys, &q1, &q2, &pn, &pn).unwrap();
        // B = 0: P_i = Q_i + A^T P_i^+ A.
        assert_relative_eq!(p1[1][(0, 0)], 0.4 + 1.44, epsilon = 1e-12);
        assert_relative_eq!(p2[1][(0, 0)], 0.9 + 1.44, epsilon = 1e-12);
    }

    /// Mean propagation: u = -K2 (x - m) - K1 m moves a symmetric two-particle
    /// ensemble's mean by (A - B K1).
    #[test]
    fn variance_aware_mean_propagation() {
        let sys = scalar_sys(1, 1.4, 0.9, 0.6, 1.0);
        let q1 = vec![DMatrix::from_element(1, 1, 0.2)];
        let q2 = vec![DMatrix::from_element(1, 1, 1.1)];
        let p1n = DMatrix::from_element(1, 1, 0.8);
        let p2n = DMatrix::from_element(1, 1, 1.7);
        let (_, _, k1, k2) = lqr_variance_aware(&sys, &q1, &q2, &p1n, &p2n).unwrap();
        let (a, b) = (1.4, 0.9);
        let m = 2.0;
        let spread = 0.7;
        let particles = [m - spread, m + spread];
        let next: Vec<f64> = particles
            .iter()
            .map(|&x| {
                let u = -k2[0][(0, 0)] * (x - m) - k1[0][(0, 0)] * m;
                a * x + b * u
            })
            .collect();
        let next_mean = 0.5 * (next[0] + next[1]);
        let want = (a - b * k1[0][(0, 0)]) * m;
        assert_relative_eq!(next_mean, want, epsilon = 1e-10);
        // Deviation contracts by (A - B K2).
        let next_spread = 0.5 * (next[1] - next[0]);
        assert_relative_eq!(next_spread, (a - b * k2[0][(0, 0)]) * spread, epsilon = 1e-10);
    }

    #[test]
    fn noisy_pair_zero_noise_reduces_exactly() {
        let sys = scalar_sys(3, 1.2, 0.7, 0.9, 1.4);
        let det = lqr_pair_recursion(&sys).unwrap();
        let noisy = lqr_pair_recursion_noisy(
            &sys,
            &DMatrix::zeros(1, 1),
            &DVector::zeros(1),
            &DMatrix::zeros(1, 1),
        )
        .unwrap();
        for k in 0..=3 {
            assert_eq!(noisy.pair.p_x[k][(0, 0)], det.p_x[k][(0, 0)]);
            assert_eq!(noisy.pair.p_y[k][(0, 0)], det.p_y[k][(0, 0)]);
            assert_eq!(noisy.pair.p_xy[k][(0, 0)], det.p_xy[k][(0, 0)]);
            assert_eq!(noisy.c_x[k][0], 0.0);
            assert_eq!(noisy.c_y[k][0], 0.0);
            assert_eq!(noisy.c_w[k], 0.0);
        }
    }

    /// Scalar Bellman residual with exact noise expectation: the recursion's
    /// c_k must equal min_u E_w[|x-y|^2_Q + u^2 R + c_{k+1}(Ax+Bu+w, y)],
    /// where the expectation is explicit because c_{k+1} is quadratic.
    #[test]
    fn noisy_pair_bellman_residual() {
        let sys = scalar_sys(2, 1.1, 0.8, 0.7, 1.3);
        let q = DMatrix::from_element(1, 1, 0.4);
        let (m_w, s_w) = (0.3, 0.2);
        let tab = lqr_pair_recursion_noisy(
            &sys,
            &q,
            &DVector::from_element(1, m_w),
            &DMatrix::from_element(1, 1, s_w),
        )
        .unwrap();
        for k in 0..2 {
            for &x in &[-1.5, 0.4, 2.0] {
                for &y in &[-0.7, 1.1] {
                    let expected_next = |u: f64| {
                        let z = 1.1 * x + 0.8 * u;
                        // E[c_{k+1}(z + w, y)] over w ~ (m_w, s_w).
                        let px = tab.pair.p_x[k + 1][(0, 0)];
                        let py = tab.pair.p_y[k + 1][(0, 0)];
                        let pxy = tab.pair.p_xy[k + 1][(0, 0)];
                        let (cx, cy, cw) = (tab.c_x[k + 1][0], tab.c_y[k + 1][0], tab.c_w[k + 1]);
                        px * ((z + m_w).powi(2) + s_w)
                            + py * y * y
                            + 2.0 * (z + m_w) * pxy * y
                            + (z + m_w) * cx
                            + y * cy
                            + cw
                    };
                    let stage = |u: f64| 0.4 * (x - y).powi(2) + 0.7 * u * u;
                    let (_, bell) = golden_section(-20.0, 20.0, 1e-11, |u| stage(u) + expected_next(u));
                    let stored = tab.cost(k, &DVector::from_element(1, x), &DVector::from_element(1, y));
                    assert!(
                        (bell - stored).abs() < 1e-7,
                        "stage {k} x={x} y={y}: bellman {bell} vs stored {stored}"
                    );
                }
            }
        }
    }
}
