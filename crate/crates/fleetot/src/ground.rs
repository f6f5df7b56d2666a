//! Finite ground systems and backward dynamic programming.
//!
//! Three recursions produce cost-to-go tables over the ground space:
//!
//! * [`dpa_multi`] indexes the table by the state and the whole residual
//!   reference trajectory `(x, r_k, ..., r_N)` — the general recursion that
//!   reference-dependent stage costs require.
//! * [`dpa_frozen`] holds one reference label fixed through the horizon and
//!   indexes by `(x, r_N)`; with reference-independent stage costs this is the
//!   legitimate simplification, otherwise it is the naive baseline that the
//!   multi-marginal formulation improves on.
//! * [`dpa_stochastic`] averages a noisy system over its per-stage noise law,
//!   again indexed by `(x, r_N)`.
//!
//! Tables store an argmin input per cell so rollouts replay the recursion
//! exactly; all arithmetic is extended-real, so hard constraints stay exact.

use thiserror::Error;

use crate::cost::Cost;

/// Default cap on the total number of cost-to-go cells (2^26).
pub const DEFAULT_MEM_CAP: u64 = 1 << 26;

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("invalid system: {0}")]
    Invalid(String),
    #[error("cost-to-go table needs {needed} cells, cap is {cap}; use the terminal-reference mode or raise the cap")]
    Capacity { needed: u128, cap: u64 },
    #[error("stage cost at stage {stage} depends on the reference; the terminal-reference recursion does not apply, use the full recursion")]
    ReferenceDependent { stage: usize },
    #[error("terminal reference label {0:?} is missing from the stage-{1} reference space; cannot freeze the reference")]
    FrozenReference(String, usize),
    #[error("unknown {kind} label {label:?} at stage {stage}")]
    UnknownLabel { kind: &'static str, label: String, stage: usize },
    #[error("cost-to-go is infinite at the start tuple; no feasible trajectory")]
    InfeasibleStart,
    #[error("table was built for a different system shape")]
    TableMismatch,
}

/// A finite-horizon control system on labeled finite spaces.
///
/// Per-stage label sets may vary; `dynamics[k]` maps `(x, u)` indices into the
/// stage-`k+1` state set, `stage_cost[k]` is indexed `(x, u, r)` over
/// `X_k x U_k x Y_k`, `terminal_cost` is indexed `(x, r)` over `X_N x Y_N`.
#[derive(Debug, Clone)]
pub struct GroundSystem {
    horizon: usize,
    states: Vec<Vec<String>>,
    inputs: Vec<Vec<String>>,
    refs: Vec<Vec<String>>,
    dynamics: Vec<Vec<usize>>,
    stage_cost: Vec<Vec<Cost>>,
    terminal_cost: Vec<Cost>,
}

impl GroundSystem {
    pub fn new(
        states: Vec<Vec<String>>,
        inputs: Vec<Vec<String>>,
        refs: Vec<Vec<String>>,
        dynamics: Vec<Vec<usize>>,
        stage_cost: Vec<Vec<Cost>>,
        terminal_cost: Vec<Cost>,
    ) -> Result<GroundSystem, GroundError> {
        let n = inputs.len();
        if n == 0 {
            return Err(GroundError::Invalid("horizon must be at least 1".into()));
        }
        if states.len() != n + 1 || refs.len() != n + 1 {
            return Err(GroundError::Invalid(format!(
                "with {n} input stages there must be {} state and reference sets",
                n + 1
            )));
        }
        if dynamics.len() != n || stage_cost.len() != n {
            return Err(GroundError::Invalid(
                "dynamics and stage costs must cover every stage".into(),
            ));
        }
        for k in 0..n {
            let (nx, nu, nr) = (states[k].len(), inputs[k].len(), refs[k].len());
            if nx == 0 || nu == 0 || nr == 0 {
                return Err(GroundError::Invalid(format!("empty space at stage {k}")));
            }
            if dynamics[k].len() != nx * nu {
                return Err(GroundError::Invalid(format!(
                    "dynamics table at stage {k} has {} entries, expected {}",
                    dynamics[k].len(),
                    nx * nu
                )));
            }
            if dynamics[k].iter().any(|&x| x >= states[k + 1].len()) {
                return Err(GroundError::Invalid(format!(
                    "dynamics at stage {k} leave the stage-{} state set",
                    k + 1
                )));
            }
            if stage_cost[k].len() != nx * nu * nr {
                return Err(GroundError::Invalid(format!(
                    "stage cost table at stage {k} has {} entries, expected {}",
                    stage_cost[k].len(),
                    nx * nu * nr
                )));
            }
            if stage_cost[k].iter().any(|c| matches!(c, Cost::Finite(v) if *v < 0.0)) {
                return Err(GroundError::Invalid(format!("negative stage cost at stage {k}")));
            }
        }
        let (nx, nr) = (states[n].len(), refs[n].len());
        if terminal_cost.len() != nx * nr {
            return Err(GroundError::Invalid(format!(
                "terminal cost table has {} entries, expected {}",
                terminal_cost.len(),
                nx * nr
            )));
        }
        if terminal_cost.iter().any(|c| matches!(c, Cost::Finite(v) if *v < 0.0)) {
            return Err(GroundError::Invalid("negative terminal cost".into()));
        }
        Ok(GroundSystem {
            horizon: n,
            states,
            inputs,
            refs,
            dynamics,
            stage_cost,
            terminal_cost,
        })
    }

    /// Convenience constructor for time-invariant spaces with closures over
    /// label strings.
    pub fn time_invariant(
        horizon: usize,
        states: &[&str],
        inputs: &[&str],
        refs: &[&str],
        dynamics: impl Fn(&str, &str) -> String,
        stage_cost: impl Fn(usize, &str, &str, &str) -> Cost,
        terminal_cost: impl Fn(&str, &str) -> Cost,
    ) -> Result<GroundSystem, GroundError> {
        let state_v: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        let input_v: Vec<String> = inputs.iter().map(|s| s.to_string()).collect();
        let ref_v: Vec<String> = refs.iter().map(|s| s.to_string()).collect();
        let mut dyn_tables = Vec::with_capacity(horizon);
        let mut cost_tables = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let mut d = Vec::with_capacity(states.len() * inputs.len());
            let mut g = Vec::with_capacity(states.len() * inputs.len() * refs.len());
            for x in states {
                for u in inputs {
                    let next = dynamics(x, u);
                    let idx = state_v
                        .iter()
                        .position(|s| *s == next)
                        .ok_or_else(|| GroundError::Invalid(format!(
                            "dynamics image {next:?} is not a state"
                        )))?;
                    d.push(idx);
                    for r in refs {
                        g.push(stage_cost(k, x, u, r));
                    }
                }
            }
            dyn_tables.push(d);
            cost_tables.push(g);
        }
        let mut terminal = Vec::with_capacity(states.len() * refs.len());
        for x in states {
            for r in refs {
                terminal.push(terminal_cost(x, r));
            }
        }
        GroundSystem::new(
            vec![state_v; horizon + 1],
            vec![input_v; horizon],
            vec![ref_v; horizon + 1],
            dyn_tables,
            cost_tables,
            terminal,
        )
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self, k: usize) -> &[String] {
        &self.states[k]
    }

    pub fn inputs(&self, k: usize) -> &[String] {
        &self.inputs[k]
    }

    pub fn refs(&self, k: usize) -> &[String] {
        &self.refs[k]
    }

    pub fn state_index(&self, k: usize, label: &str) -> Result<usize, GroundError> {
        self.states[k]
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| GroundError::UnknownLabel { kind: "state", label: label.into(), stage: k })
    }

    pub fn ref_index(&self, k: usize, label: &str) -> Result<usize, GroundError> {
        self.refs[k]
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| GroundError::UnknownLabel { kind: "reference", label: label.into(), stage: k })
    }

    pub fn next_state(&self, k: usize, x: usize, u: usize) -> usize {
        self.dynamics[k][x * self.inputs[k].len() + u]
    }

    pub fn stage_cost(&self, k: usize, x: usize, u: usize, r: usize) -> Cost {
        let (nu, nr) = (self.inputs[k].len(), self.refs[k].len());
        self.stage_cost[k][(x * nu + u) * nr + r]
    }

    pub fn terminal_cost(&self, x: usize, r: usize) -> Cost {
        self.terminal_cost[x * self.refs[self.horizon].len() + r]
    }

    /// True when no stage cost entry varies with the reference coordinate.
    pub fn stage_costs_reference_free(&self) -> bool {
        (0..self.horizon).all(|k| self.stage_reference_free(k))
    }

    fn stage_reference_free(&self, k: usize) -> bool {
        let nr = self.refs[k].len();
        self.stage_cost[k]
            .chunks(nr)
            .all(|chunk| chunk.iter().all(|c| *c == chunk[0]))
    }
}

/// How a cost-to-go table is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMode {
    /// `(x, r_k, ..., r_N)`: one axis per residual reference stage.
    Multi,
    /// `(x, r_N)`: terminal reference only.
    Terminal,
}

/// Per-stage cost-to-go values with the minimizing input per cell.
#[derive(Debug, Clone)]
pub struct StageTable {
    pub dims: Vec<usize>,
    pub values: Vec<Cost>,
    /// Argmin input index; `None` where the cell is infinite (stage `N` has
    /// no inputs and stores an empty vector).
    pub argmin: Vec<Option<usize>>,
}

impl StageTable {
    pub fn flat(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut out = 0usize;
        for (i, n) in idx.iter().zip(&self.dims) {
            debug_assert!(i < n);
            out = out * n + i;
        }
        out
    }

    pub fn value(&self, idx: &[usize]) -> Cost {
        self.values[self.flat(idx)]
    }

    pub fn argmin(&self, idx: &[usize]) -> Option<usize> {
        self.argmin[self.flat(idx)]
    }
}

/// Cost-to-go tables for every stage `0..=N`.
#[derive(Debug, Clone)]
pub struct CostToGoTable {
    pub mode: TableMode,
    pub stages: Vec<StageTable>,
}

impl CostToGoTable {
    pub fn stage(&self, k: usize) -> &StageTable {
        &self.stages[k]
    }
}

/// Full backward recursion indexed by the residual reference trajectory.
pub fn dpa_multi(sys: &GroundSystem, mem_cap: u64) -> Result<CostToGoTable, GroundError> {
    let n = sys.horizon;
    let mut needed: u128 = 0;
    for k in 0..=n {
        let mut cells: u128 = sys.states[k].len() as u128;
        for i in k..=n {
            cells = cells.saturating_mul(sys.refs[i].len() as u128);
        }
        needed = needed.saturating_add(cells);
    }
    if needed > mem_cap as u128 {
        return Err(GroundError::Capacity { needed, cap: mem_cap });
    }

    let mut stages: Vec<StageTable> = Vec::with_capacity(n + 1);
    // Terminal stage.
    {
        let dims = vec![sys.states[n].len(), sys.refs[n].len()];
        let values: Vec<Cost> = (0..sys.states[n].len())
            .flat_map(|x| (0..sys.refs[n].len()).map(move |r| (x, r)))
            .map(|(x, r)| sys.terminal_cost(x, r))
            .collect();
        stages.push(StageTable { dims, values, argmin: Vec::new() });
    }
    for k in (0..n).rev() {
        let next = &stages[0];
        let mut dims = vec![sys.states[k].len()];
        dims.extend((k..=n).map(|i| sys.refs[i].len()));
        let cells: usize = dims.iter().product();
        let mut values = vec![Cost::Infinite; cells];
        let mut argmin = vec![None; cells];
        let mut idx = vec![0usize; dims.len()];
        for flat in 0..cells {
            let x = idx[0];
            let r_now = idx[1];
            // Tail (r_{k+1}, ..., r_N) indexes the next stage table after its
            // own state coordinate.
            let mut best = Cost::Infinite;
            let mut best_u = None;
            for u in 0..sys.inputs[k].len() {
                let x_next = sys.next_state(k, x, u);
                let mut next_idx = Vec::with_capacity(dims.len() - 1);
                next_idx.push(x_next);
                next_idx.extend_from_slice(&idx[2..]);
                let cand = sys.stage_cost(k, x, u, r_now) + next.value(&next_idx);
                if best_u.is_none() || cand < best {
                    best = cand;
                    best_u = Some(u);
                }
            }
            values[flat] = best;
            argmin[flat] = if best.is_finite() { best_u } else { None };
            bump(&mut idx, &dims);
        }
        stages.insert(0, StageTable { dims, values, argmin });
    }
    Ok(CostToGoTable { mode: TableMode::Multi, stages })
}

/// Terminal-reference recursion, valid when stage costs ignore the reference.
///
/// Errors with [`GroundError::ReferenceDependent`] otherwise; the frozen
/// variant below computes the same table shape without that guard.
pub fn dpa_simple(sys: &GroundSystem) -> Result<CostToGoTable, GroundError> {
    for k in 0..sys.horizon {
        if !sys.stage_reference_free(k) {
            return Err(GroundError::ReferenceDependent { stage: k });
        }
    }
    frozen_recursion(sys, false)
}

/// Terminal-reference recursion with the reference frozen through the whole
/// horizon: stage `k` prices `g_k(x, u, r)` at the terminal label `r`.
///
/// With reference-free stage costs this coincides with [`dpa_simple`]; with
/// reference-dependent costs it is the naive two-marginal baseline.
pub fn dpa_frozen(sys: &GroundSystem) -> Result<CostToGoTable, GroundError> {
    frozen_recursion(sys, true)
}

fn frozen_recursion(sys: &GroundSystem, frozen: bool) -> Result<CostToGoTable, GroundError> {
    let n = sys.horizon;
    // Map each terminal reference label into every stage reference set.
    let terminal_refs = &sys.refs[n];
    let mut stage_ref_idx: Vec<Vec<usize>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut ids = Vec::with_capacity(terminal_refs.len());
        for label in terminal_refs {
            match sys.refs[k].iter().position(|s| s == label) {
                Some(i) => ids.push(i),
                None if frozen => return Err(GroundError::FrozenReference(label.clone(), k)),
                // Reference-free costs: any index prices identically.
                None => ids.push(0),
            }
        }
        stage_ref_idx.push(ids);
    }

    let mut stages: Vec<StageTable> = Vec::with_capacity(n + 1);
    {
        let dims = vec![sys.states[n].len(), terminal_refs.len()];
        let values: Vec<Cost> = (0..sys.states[n].len())
            .flat_map(|x| (0..terminal_refs.len()).map(move |r| (x, r)))
            .map(|(x, r)| sys.terminal_cost(x, r))
            .collect();
        stages.push(StageTable { dims, values, argmin: Vec::new() });
    }
    for k in (0..n).rev() {
        let next = &stages[0];
        let dims = vec![sys.states[k].len(), terminal_refs.len()];
        let mut values = vec![Cost::Infinite; dims[0] * dims[1]];
        let mut argmin = vec![None; dims[0] * dims[1]];
        for x in 0..dims[0] {
            for r in 0..dims[1] {
                let mut best = Cost::Infinite;
                let mut best_u = None;
                for u in 0..sys.inputs[k].len() {
                    let x_next = sys.next_state(k, x, u);
                    let cand = sys.stage_cost(k, x, u, stage_ref_idx[k][r])
                        + next.value(&[x_next, r]);
                    if best_u.is_none() || cand < best {
                        best = cand;
                        best_u = Some(u);
                    }
                }
                let flat = x * dims[1] + r;
                values[flat] = best;
                argmin[flat] = if best.is_finite() { best_u } else { None };
            }
        }
        stages.insert(0, StageTable { dims, values, argmin });
    }
    Ok(CostToGoTable { mode: TableMode::Terminal, stages })
}

fn bump(idx: &mut [usize], dims: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// A ground system with per-stage additive noise on dynamics and stage cost.
///
/// Stage costs depend on `(x, u, w)` — not on the reference — matching the
/// expected-cost recursion this system exists to feed; only the terminal cost
/// sees the (terminal) reference.
#[derive(Debug, Clone)]
pub struct NoisyGroundSystem {
    horizon: usize,
    states: Vec<Vec<String>>,
    inputs: Vec<Vec<String>>,
    terminal_refs: Vec<String>,
    noise: Vec<Vec<String>>,
    noise_law: Vec<Vec<f64>>,
    dynamics: Vec<Vec<usize>>,
    stage_cost: Vec<Vec<Cost>>,
    terminal_cost: Vec<Cost>,
}

impl NoisyGroundSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        states: Vec<Vec<String>>,
        inputs: Vec<Vec<String>>,
        terminal_refs: Vec<String>,
        noise: Vec<Vec<String>>,
        noise_law: Vec<Vec<f64>>,
        dynamics: Vec<Vec<usize>>,
        stage_cost: Vec<Vec<Cost>>,
        terminal_cost: Vec<Cost>,
    ) -> Result<NoisyGroundSystem, GroundError> {
        let n = inputs.len();
        if n == 0 || states.len() != n + 1 {
            return Err(GroundError::Invalid("horizon/state sets mismatch".into()));
        }
        if noise.len() != n || noise_law.len() != n || dynamics.len() != n || stage_cost.len() != n {
            return Err(GroundError::Invalid("per-stage noise tables must cover every stage".into()));
        }
        for k in 0..n {
            let (nx, nu, nw) = (states[k].len(), inputs[k].len(), noise[k].len());
            if nw == 0 || noise_law[k].len() != nw {
                return Err(GroundError::Invalid(format!("noise law at stage {k} is malformed")));
            }
            let mass: f64 = noise_law[k].iter().sum();
            if noise_law[k].iter().any(|&w| w < 0.0) || (mass - 1.0).abs() > 1e-12 {
                return Err(GroundError::Invalid(format!(
                    "noise law at stage {k} is not a probability vector"
                )));
            }
            if dynamics[k].len() != nx * nu * nw || stage_cost[k].len() != nx * nu * nw {
                return Err(GroundError::Invalid(format!("tables at stage {k} have wrong size")));
            }
            if dynamics[k].iter().any(|&x| x >= states[k + 1].len()) {
                return Err(GroundError::Invalid(format!(
                    "noisy dynamics at stage {k} leave the next state set"
                )));
            }
        }
        if terminal_cost.len() != states[n].len() * terminal_refs.len() {
            return Err(GroundError::Invalid("terminal cost table has wrong size".into()));
        }
        Ok(NoisyGroundSystem {
            horizon: n,
            states,
            inputs,
            terminal_refs,
            noise,
            noise_law,
            dynamics,
            stage_cost,
            terminal_cost,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self, k: usize) -> &[String] {
        &self.states[k]
    }

    pub fn inputs(&self, k: usize) -> &[String] {
        &self.inputs[k]
    }

    pub fn terminal_refs(&self) -> &[String] {
        &self.terminal_refs
    }

    pub fn noise(&self, k: usize) -> &[String] {
        &self.noise[k]
    }

    pub fn noise_law(&self, k: usize) -> &[f64] {
        &self.noise_law[k]
    }

    pub fn next_state(&self, k: usize, x: usize, u: usize, w: usize) -> usize {
        let (nu, nw) = (self.inputs[k].len(), self.noise[k].len());
        self.dynamics[k][(x * nu + u) * nw + w]
    }

    pub fn stage_cost(&self, k: usize, x: usize, u: usize, w: usize) -> Cost {
        let (nu, nw) = (self.inputs[k].len(), self.noise[k].len());
        self.stage_cost[k][(x * nu + u) * nw + w]
    }

    pub fn terminal_cost(&self, x: usize, r: usize) -> Cost {
        self.terminal_cost[x * self.terminal_refs.len() + r]
    }

    pub fn state_index(&self, k: usize, label: &str) -> Result<usize, GroundError> {
        self.states[k]
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| GroundError::UnknownLabel { kind: "state", label: label.into(), stage: k })
    }

    /// With every noise law a Dirac, the induced deterministic system.
    pub fn induced_deterministic(&self) -> Option<GroundSystem> {
        let mut fixed = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            let w = self.noise_law[k].iter().position(|&p| (p - 1.0).abs() <= 1e-12)?;
            fixed.push(w);
        }
        let nr = self.terminal_refs.len();
        let mut dynamics = Vec::with_capacity(self.horizon);
        let mut stage_cost = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            let (nx, nu) = (self.states[k].len(), self.inputs[k].len());
            let mut d = Vec::with_capacity(nx * nu);
            let mut g = Vec::with_capacity(nx * nu * nr);
            for x in 0..nx {
                for u in 0..nu {
                    d.push(self.next_state(k, x, u, fixed[k]));
                    // Reference-free by construction: replicate across r.
                    g.extend(std::iter::repeat(self.stage_cost(k, x, u, fixed[k])).take(nr));
                }
            }
            dynamics.push(d);
            stage_cost.push(g);
        }
        GroundSystem::new(
            self.states.clone(),
            self.inputs.clone(),
            vec![self.terminal_refs.clone(); self.horizon + 1],
            dynamics,
            stage_cost,
            self.terminal_cost.clone(),
        )
        .ok()
    }
}

/// Expected-cost recursion over the noise laws, indexed `(x, r_N)`.
pub fn dpa_stochastic(sys: &NoisyGroundSystem) -> Result<CostToGoTable, GroundError> {
    let n = sys.horizon;
    let nr = sys.terminal_refs.len();
    let mut stages: Vec<StageTable> = Vec::with_capacity(n + 1);
    {
        let dims = vec![sys.states[n].len(), nr];
        let values: Vec<Cost> = (0..sys.states[n].len())
            .flat_map(|x| (0..nr).map(move |r| (x, r)))
            .map(|(x, r)| sys.terminal_cost(x, r))
            .collect();
        stages.push(StageTable { dims, values, argmin: Vec::new() });
    }
    for k in (0..n).rev() {
        let next = &stages[0];
        let dims = vec![sys.states[k].len(), nr];
        let mut values = vec![Cost::Infinite; dims[0] * nr];
        let mut argmin = vec![None; dims[0] * nr];
        for x in 0..dims[0] {
            for r in 0..nr {
                let mut best = Cost::Infinite;
                let mut best_u = None;
                for u in 0..sys.inputs[k].len() {
                    let mut expected = Cost::ZERO;
                    for (w, &pw) in sys.noise_law[k].iter().enumerate() {
                        let contrib = sys.stage_cost(k, x, u, w)
                            + next.value(&[sys.next_state(k, x, u, w), r]);
                        expected = expected + contrib.scale(pw);
                    }
                    if best_u.is_none() || expected < best {
                        best = expected;
                        best_u = Some(u);
                    }
                }
                let flat = x * nr + r;
                values[flat] = best;
                argmin[flat] = if best.is_finite() { best_u } else { None };
            }
        }
        stages.insert(0, StageTable { dims, values, argmin });
    }
    Ok(CostToGoTable { mode: TableMode::Terminal, stages })
}

/// A single-particle trajectory from a greedy argmin rollout.
#[derive(Debug, Clone)]
pub struct ParticleRollout {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub cost: Cost,
}

/// Replays the stored argmins from `x0` along a reference tuple.
///
/// `ref_labels` carries one label per table axis: the residual trajectory
/// `(r_0, ..., r_N)` in multi mode, the single terminal label otherwise. The
/// realized cost reproduces `j_0` exactly when the table's minima are exact,
/// which they are by construction here.
pub fn rollout_particle(
    sys: &GroundSystem,
    table: &CostToGoTable,
    x0: &str,
    ref_labels: &[&str],
) -> Result<ParticleRollout, GroundError> {
    let n = sys.horizon;
    let ref_idx: Vec<usize> = match table.mode {
        TableMode::Multi => {
            if ref_labels.len() != n + 1 {
                return Err(GroundError::TableMismatch);
            }
            (0..=n)
                .map(|k| sys.ref_index(k, ref_labels[k]))
                .collect::<Result<_, _>>()?
        }
        TableMode::Terminal => {
            if ref_labels.len() != 1 {
                return Err(GroundError::TableMismatch);
            }
            vec![sys.ref_index(n, ref_labels[0])?]
        }
    };

    let mut x = sys.state_index(0, x0)?;
    let start_idx = table_index(table.mode, 0, x, &ref_idx);
    if table.stage(0).value(&start_idx).is_infinite() {
        return Err(GroundError::InfeasibleStart);
    }

    let mut states = vec![sys.states[0][x].clone()];
    let mut inputs = Vec::with_capacity(n);
    let mut stage_costs = Vec::with_capacity(n);
    for k in 0..n {
        let idx = table_index(table.mode, k, x, &ref_idx);
        let u = table
            .stage(k)
            .argmin(&idx)
            .ok_or(GroundError::InfeasibleStart)?;
        let r_now = match table.mode {
            TableMode::Multi => ref_idx[k],
            TableMode::Terminal => {
                // Stage costs are reference-free in a valid terminal-mode
                // rollout; price at the frozen label when it exists.
                sys.refs[k]
                    .iter()
                    .position(|s| *s == sys.refs[n][ref_idx[ref_idx.len() - 1]])
                    .unwrap_or(0)
            }
        };
        stage_costs.push(sys.stage_cost(k, x, u, r_now));
        inputs.push(sys.inputs[k][u].clone());
        x = sys.next_state(k, x, u);
        states.push(sys.states[k][x].clone());
    }
    let terminal = sys.terminal_cost(x, ref_idx[ref_idx.len() - 1]);
    // Right fold mirrors the backward recursion's addition order, so the
    // realized cost is bit-identical to the table entry.
    let cost = stage_costs
        .into_iter()
        .rev()
        .fold(terminal, |acc, g| g + acc);
    Ok(ParticleRollout { states, inputs, cost })
}

fn table_index(mode: TableMode, k: usize, x: usize, ref_idx: &[usize]) -> Vec<usize> {
    match mode {
        TableMode::Multi => {
            let mut idx = Vec::with_capacity(ref_idx.len() - k + 1);
            idx.push(x);
            idx.extend_from_slice(&ref_idx[k..]);
            idx
        }
        TableMode::Terminal => vec![x, ref_idx[ref_idx.len() - 1]],
    }
}
