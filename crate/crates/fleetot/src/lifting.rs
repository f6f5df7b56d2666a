//! Lifting ground-space cost-to-go tables into the probability space.
//!
//! The probability-space cost-to-go at a measure is one (multi-marginal)
//! optimal transport problem whose transportation cost is the ground
//! cost-to-go table; the optimal state-input distribution is the pushforward
//! of the optimal plan through the table's argmin inputs. Rollouts either
//! re-solve the allocation at every stage (feedback mode, the default) or
//! pin the stage-0 allocation and track particles (open-loop mode).

use thiserror::Error;

use crate::cost::Cost;
use crate::ground::{
    dpa_stochastic, CostToGoTable, GroundError, GroundSystem, NoisyGroundSystem, TableMode,
};
use crate::measures::{Atom, DiscreteMeasure, MeasureError, Point, StateInputDistribution};
use crate::oracle::{self, OracleCaps, OracleError};
use crate::transport::{self, CostTensor, TransportError, TransportPlan};

#[derive(Debug, Error)]
pub enum LiftError {
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("expected {want} reference measures for this table at stage {stage}, got {got}")]
    RefCount { stage: usize, want: usize, got: usize },
    #[error("measure atom {0:?} is not a label of the underlying space")]
    NotALabelMeasure(String),
    #[error("stage {stage} is infeasible: every allocation has infinite cost")]
    InfeasibleStage { stage: usize },
    #[error("argmin undefined on positive-mass tuple {0}; the cost-to-go is infinite there")]
    InfeasibleTuple(String),
    #[error("open-loop rollout needs a map-induced plan or a uniform empirical initial measure with plan mass in multiples of 1/M")]
    OpenLoopNeedsParticles,
    #[error("empirical instance is malformed: {0}")]
    Empirical(String),
}

/// The probability-space cost-to-go at one stage, with the plan attaining it.
#[derive(Debug, Clone)]
pub struct LiftedValue {
    pub stage: usize,
    pub value: Cost,
    pub plan: TransportPlan,
    pub mode: TableMode,
}

fn label_of(p: &Point) -> Result<&str, LiftError> {
    p.as_label()
        .ok_or_else(|| LiftError::NotALabelMeasure(p.to_string()))
}

fn measure_indices(m: &DiscreteMeasure, labels: &[String]) -> Result<Vec<usize>, LiftError> {
    m.points()
        .map(|p| {
            let l = label_of(p)?;
            labels
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| LiftError::NotALabelMeasure(l.to_string()))
        })
        .collect()
}

/// Cost-to-go of the fleet at stage `k`: the transport value of coupling
/// `mu` with the reference measures under the table's cost.
///
/// In multi mode `refs` carries one measure per residual stage `k..=N`; in
/// terminal mode a single measure over the terminal references. A `+inf`
/// value (no finite-cost coupling) is a legal outcome.
pub fn lifted_value(
    sys: &GroundSystem,
    table: &CostToGoTable,
    mu: &DiscreteMeasure,
    refs: &[DiscreteMeasure],
    k: usize,
) -> Result<LiftedValue, LiftError> {
    let n = sys.horizon();
    let want_refs = match table.mode {
        TableMode::Multi => n - k + 1,
        TableMode::Terminal => 1,
    };
    if refs.len() != want_refs {
        return Err(LiftError::RefCount { stage: k, want: want_refs, got: refs.len() });
    }
    let mu_idx = measure_indices(mu, sys.states(k))?;
    let ref_idx: Vec<Vec<usize>> = match table.mode {
        TableMode::Multi => refs
            .iter()
            .enumerate()
            .map(|(i, r)| measure_indices(r, sys.refs(k + i)))
            .collect::<Result<_, _>>()?,
        TableMode::Terminal => vec![measure_indices(&refs[0], sys.refs(n))?],
    };

    let mut shape = vec![mu.len()];
    shape.extend(ref_idx.iter().map(|v| v.len()));
    let stage_table = table.stage(k);
    let cost = CostTensor::from_fn(shape, |idx| {
        let mut table_idx = Vec::with_capacity(idx.len());
        table_idx.push(mu_idx[idx[0]]);
        for (axis, &i) in idx[1..].iter().enumerate() {
            table_idx.push(ref_idx[axis][i]);
        }
        stage_table.value(&table_idx)
    });

    let mut marginals = vec![mu.clone()];
    marginals.extend(refs.iter().cloned());
    let plan = transport::mmot(&marginals, &cost)?;
    Ok(LiftedValue { stage: k, value: plan.value, plan, mode: table.mode })
}

/// Pushes an optimal plan through the table's argmin inputs: the state-input
/// distribution `(proj_X, u)#plan` whose state marginal is the plan's first
/// marginal.
pub fn lift_input(
    sys: &GroundSystem,
    table: &CostToGoTable,
    k: usize,
    plan: &TransportPlan,
) -> Result<StateInputDistribution, LiftError> {
    let stage_table = table.stage(k);
    let n = sys.horizon();
    let mut atoms = Vec::new();
    for (parts, weight) in plan.support() {
        let x_label = label_of(&parts[0])?;
        let x = sys.state_index(k, x_label)?;
        let mut idx = vec![x];
        match table.mode {
            TableMode::Multi => {
                for (axis, p) in parts[1..].iter().enumerate() {
                    idx.push(sys.ref_index(k + axis, label_of(p)?)?);
                }
            }
            TableMode::Terminal => {
                idx.push(sys.ref_index(n, label_of(&parts[1])?)?);
            }
        }
        let u = stage_table
            .argmin(&idx)
            .ok_or_else(|| LiftError::InfeasibleTuple(Point::Tuple(parts.to_vec()).to_string()))?;
        atoms.push(Atom {
            point: Point::pair(
                Point::label(x_label),
                Point::label(sys.inputs(k)[u].clone()),
            ),
            weight,
        });
    }
    let joint = DiscreteMeasure::new(atoms)?;
    Ok(StateInputDistribution::new(joint, &plan.marginals[0])?)
}

/// Per-stage cost attribution of a rollout.
///
/// `ot_cost` is the stage objective `K_{g_k}(state-input distribution, rho_k)`
/// re-coupled optimally; `plan_cost` is the plan-weighted stage integrand
/// along the allocation. They can differ when stage costs are
/// reference-dependent and the allocation changes between stages; `mismatch`
/// flags any gap beyond tolerance instead of choosing silently.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub ot_cost: Cost,
    pub plan_cost: Cost,
    pub mismatch: bool,
}

/// A full fleet trajectory in the probability space.
#[derive(Debug, Clone)]
pub struct FleetRollout {
    /// Fleet measures `mu_0 ..= mu_N`.
    pub measures: Vec<DiscreteMeasure>,
    /// State-input distributions per stage.
    pub inputs: Vec<StateInputDistribution>,
    /// Re-solved probability-space values per stage (feedback mode re-solves,
    /// open-loop mode evaluates stage 0 only and repeats the remaining plan).
    pub values: Vec<Cost>,
    pub stages: Vec<StageReport>,
    pub terminal_cost: Cost,
    /// Sum of per-stage `ot_cost` plus the terminal transport cost.
    pub total: Cost,
}

fn stage_cost_tensor(
    sys: &GroundSystem,
    k: usize,
    joint: &DiscreteMeasure,
    rho: &DiscreteMeasure,
) -> Result<CostTensor, LiftError> {
    let pair_idx: Vec<(usize, usize)> = joint
        .points()
        .map(|p| {
            let parts = p.as_tuple().expect("state-input atoms are pairs");
            Ok((
                sys.state_index(k, label_of(&parts[0])?)?,
                sys.inputs(k)
                    .iter()
                    .position(|u| u == label_of(&parts[1]).unwrap_or(""))
                    .ok_or_else(|| LiftError::NotALabelMeasure(parts[1].to_string()))?,
            ))
        })
        .collect::<Result<_, LiftError>>()?;
    let rho_idx = measure_indices(rho, sys.refs(k))?;
    Ok(CostTensor::from_fn(vec![joint.len(), rho.len()], |idx| {
        let (x, u) = pair_idx[idx[0]];
        sys.stage_cost(k, x, u, rho_idx[idx[1]])
    }))
}

/// Stage objective `K_{g_k}(Lambda_k, rho_k)` by optimal re-coupling.
pub fn stage_ot_cost(
    sys: &GroundSystem,
    k: usize,
    input: &StateInputDistribution,
    rho: &DiscreteMeasure,
) -> Result<Cost, LiftError> {
    let cost = stage_cost_tensor(sys, k, input.joint(), rho)?;
    Ok(transport::ot2(input.joint(), rho, &cost)?.value)
}

/// Terminal objective `K_{g_N}(mu_N, rho_N)`.
pub fn terminal_ot_cost(
    sys: &GroundSystem,
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
) -> Result<Cost, LiftError> {
    let n = sys.horizon();
    let mu_idx = measure_indices(mu, sys.states(n))?;
    let rho_idx = measure_indices(rho, sys.refs(n))?;
    let cost = CostTensor::from_fn(vec![mu.len(), rho.len()], |idx| {
        sys.terminal_cost(mu_idx[idx[0]], rho_idx[idx[1]])
    });
    Ok(transport::ot2(mu, rho, &cost)?.value)
}

fn push_dynamics(
    sys: &GroundSystem,
    k: usize,
    input: &StateInputDistribution,
) -> Result<DiscreteMeasure, LiftError> {
    let next = input.joint().pushforward(|p| {
        let parts = p.as_tuple()?;
        let x = sys.state_index(k, parts[0].as_label()?).ok()?;
        let u = sys
            .inputs(k)
            .iter()
            .position(|u| u == parts[1].as_label().unwrap_or(""))?;
        Some(Point::label(sys.states(k + 1)[sys.next_state(k, x, u)].clone()))
    })?;
    Ok(next)
}

/// Plan-weighted stage integrand `sum_plan w * g_k(x, u(x, r...), r_k)`.
fn plan_stage_integrand(
    sys: &GroundSystem,
    table: &CostToGoTable,
    k: usize,
    plan: &TransportPlan,
) -> Result<Cost, LiftError> {
    let stage_table = table.stage(k);
    let n = sys.horizon();
    let mut total = Cost::ZERO;
    for (parts, weight) in plan.support() {
        let x = sys.state_index(k, label_of(&parts[0])?)?;
        let mut idx = vec![x];
        let r_now;
        match table.mode {
            TableMode::Multi => {
                for (axis, p) in parts[1..].iter().enumerate() {
                    idx.push(sys.ref_index(k + axis, label_of(p)?)?);
                }
                r_now = idx[1];
            }
            TableMode::Terminal => {
                let rn = sys.ref_index(n, label_of(&parts[1])?)?;
                idx.push(rn);
                // Price at the frozen label when it exists at this stage.
                r_now = sys.refs(k)
                    .iter()
                    .position(|s| *s == sys.refs(n)[rn])
                    .unwrap_or(0);
            }
        }
        let u = stage_table
            .argmin(&idx)
            .ok_or_else(|| LiftError::InfeasibleTuple(Point::Tuple(parts.to_vec()).to_string()))?;
        total = total + sys.stage_cost(k, x, u, r_now).scale(weight);
    }
    Ok(total)
}

fn refs_slice(table_mode: TableMode, refs: &[DiscreteMeasure], k: usize) -> &[DiscreteMeasure] {
    match table_mode {
        TableMode::Multi => &refs[k..],
        TableMode::Terminal => &refs[refs.len() - 1..],
    }
}

/// Feedback rollout: re-solve the transport problem at every stage, lift the
/// plan to a state-input distribution, push the fleet forward.
///
/// `refs` carries one reference measure per stage `0..=N` (pricing of stage
/// objectives needs them even in terminal mode; pass the terminal measure
/// replicated when the scenario only fixes a terminal target).
pub fn rollout_feedback(
    sys: &GroundSystem,
    table: &CostToGoTable,
    mu0: &DiscreteMeasure,
    refs: &[DiscreteMeasure],
) -> Result<FleetRollout, LiftError> {
    let n = sys.horizon();
    if refs.len() != n + 1 {
        return Err(LiftError::RefCount { stage: 0, want: n + 1, got: refs.len() });
    }
    let mut measures = vec![mu0.clone()];
    let mut inputs = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut stages = Vec::with_capacity(n);
    let mut mu = mu0.clone();
    for k in 0..n {
        let lifted = lifted_value(sys, table, &mu, refs_slice(table.mode, refs, k), k)?;
        if lifted.value.is_infinite() {
            return Err(LiftError::InfeasibleStage { stage: k });
        }
        values.push(lifted.value);
        let input = lift_input(sys, table, k, &lifted.plan)?;
        let ot_cost = stage_ot_cost(sys, k, &input, &refs[k])?;
        let plan_cost = plan_stage_integrand(sys, table, k, &lifted.plan)?;
        let mismatch = !ot_cost.approx_eq(plan_cost, 1e-9);
        stages.push(StageReport { ot_cost, plan_cost, mismatch });
        mu = push_dynamics(sys, k, &input)?;
        measures.push(mu.clone());
        inputs.push(input);
    }
    let terminal_cost = terminal_ot_cost(sys, &mu, &refs[n])?;
    let total = stages
        .iter()
        .map(|s| s.ot_cost)
        .fold(Cost::ZERO, |a, b| a + b)
        + terminal_cost;
    Ok(FleetRollout { measures, inputs, values, stages, terminal_cost, total })
}

/// Open-loop rollout: fix the stage-0 allocation and keep every particle on
/// its assigned reference trajectory, reading inputs from the argmin table.
///
/// Works when the stage-0 plan is induced by a map, or when `mu0` is uniform
/// empirical and the plan splits in multiples of `1/M` (per-particle
/// tracking); anything else is a mode error.
pub fn rollout_openloop(
    sys: &GroundSystem,
    table: &CostToGoTable,
    mu0: &DiscreteMeasure,
    refs: &[DiscreteMeasure],
) -> Result<FleetRollout, LiftError> {
    let n = sys.horizon();
    if refs.len() != n + 1 {
        return Err(LiftError::RefCount { stage: 0, want: n + 1, got: refs.len() });
    }
    let lifted = lifted_value(sys, table, mu0, refs_slice(table.mode, refs, 0), 0)?;
    if lifted.value.is_infinite() {
        return Err(LiftError::InfeasibleStage { stage: 0 });
    }

    // Decompose the plan into unit streams: (mass, assigned reference labels).
    let mut streams: Vec<(f64, Vec<String>)> = Vec::new();
    if let Some(map) = transport::as_map(&lifted.plan) {
        for (src, dst) in &map {
            let mass = mu0.weight_at(src);
            let mut labels = vec![label_of(src)?.to_string()];
            for p in dst {
                labels.push(label_of(p)?.to_string());
            }
            streams.push((mass, labels));
        }
    } else {
        // Per-particle tracking: mass quantum 1/M.
        let m = mu0
            .atoms()
            .iter()
            .map(|a| a.weight)
            .fold(f64::INFINITY, f64::min);
        let fleet = (1.0 / m).round() as usize;
        let quantum = 1.0 / fleet as f64;
        let uniform_ok = mu0
            .atoms()
            .iter()
            .all(|a| (a.weight * fleet as f64 - (a.weight * fleet as f64).round()).abs() < 1e-9);
        if !uniform_ok {
            return Err(LiftError::OpenLoopNeedsParticles);
        }
        for (parts, weight) in lifted.plan.support() {
            let copies = weight * fleet as f64;
            if (copies - copies.round()).abs() > 1e-6 {
                return Err(LiftError::OpenLoopNeedsParticles);
            }
            let mut labels = Vec::with_capacity(parts.len());
            for p in parts {
                labels.push(label_of(p)?.to_string());
            }
            for _ in 0..copies.round() as usize {
                streams.push((quantum, labels.clone()));
            }
        }
    }

    // Advance every stream along its fixed allocation.
    let mut positions: Vec<usize> = streams
        .iter()
        .map(|(_, labels)| sys.state_index(0, &labels[0]))
        .collect::<Result<_, _>>()?;
    let ref_indices: Vec<Vec<usize>> = streams
        .iter()
        .map(|(_, labels)| match table.mode {
            TableMode::Multi => labels[1..]
                .iter()
                .enumerate()
                .map(|(axis, l)| sys.ref_index(axis, l))
                .collect::<Result<Vec<usize>, _>>(),
            TableMode::Terminal => Ok(vec![sys.ref_index(n, &labels[1])?]),
        })
        .collect::<Result<_, _>>()?;

    let mut measures = vec![mu0.clone()];
    let mut inputs = Vec::with_capacity(n);
    let mut stages = Vec::with_capacity(n);
    for k in 0..n {
        let stage_table = table.stage(k);
        let mut pair_atoms = Vec::with_capacity(streams.len());
        let mut plan_cost = Cost::ZERO;
        for (s, (mass, _)) in streams.iter().enumerate() {
            let x = positions[s];
            let mut idx = vec![x];
            match table.mode {
                TableMode::Multi => idx.extend_from_slice(&ref_indices[s][k..]),
                TableMode::Terminal => idx.push(ref_indices[s][0]),
            }
            let u = stage_table.argmin(&idx).ok_or_else(|| {
                LiftError::InfeasibleTuple(format!("stream {s} at stage {k}"))
            })?;
            let r_now = match table.mode {
                TableMode::Multi => ref_indices[s][k],
                TableMode::Terminal => {
                    let rn = ref_indices[s][0];
                    sys.refs(k)
                        .iter()
                        .position(|l| *l == sys.refs(n)[rn])
                        .unwrap_or(0)
                }
            };
            plan_cost = plan_cost + sys.stage_cost(k, x, u, r_now).scale(*mass);
            pair_atoms.push(Atom {
                point: Point::pair(
                    Point::label(sys.states(k)[x].clone()),
                    Point::label(sys.inputs(k)[u].clone()),
                ),
                weight: *mass,
            });
            positions[s] = sys.next_state(k, x, u);
        }
        let joint = DiscreteMeasure::new(pair_atoms)?;
        let input = StateInputDistribution::new(joint, &measures[k])?;
        let ot_cost = stage_ot_cost(sys, k, &input, &refs[k])?;
        let mismatch = !ot_cost.approx_eq(plan_cost, 1e-9);
        stages.push(StageReport { ot_cost, plan_cost, mismatch });
        let mu_next = DiscreteMeasure::new(
            streams
                .iter()
                .zip(&positions)
                .map(|((mass, _), &x)| Atom {
                    point: Point::label(sys.states(k + 1)[x].clone()),
                    weight: *mass,
                })
                .collect(),
        )?;
        measures.push(mu_next);
        inputs.push(input);
    }
    let terminal_cost = terminal_ot_cost(sys, &measures[n], &refs[n])?;
    let total = stages
        .iter()
        .map(|s| s.ot_cost)
        .fold(Cost::ZERO, |a, b| a + b)
        + terminal_cost;
    Ok(FleetRollout {
        measures,
        inputs,
        values: vec![lifted.value],
        stages,
        terminal_cost,
        total,
    })
}

/// Whether an empirical rollout re-solves the matching at every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratorMode {
    Feedback,
    OpenLoop,
}

/// Empirical integrator steering: particle trajectories, per-stage lifted
/// values, and the realized input effort.
#[derive(Debug, Clone)]
pub struct IntegratorRollout {
    /// Particle positions per stage `0..=N` (raw, particle-indexed).
    pub stages: Vec<Vec<Vec<f64>>>,
    /// Lifted cost-to-go at each stage `0..N`, solved as a transport LP with
    /// the closed-form steering cost.
    pub stage_values: Vec<f64>,
    /// Per-stage mean input effort.
    pub input_costs: Vec<f64>,
    pub total_input_cost: f64,
    /// Whether the final positions coincide with the target support.
    pub landed: bool,
}

fn euclid_measure(points: &[Vec<f64>]) -> Result<DiscreteMeasure, LiftError> {
    DiscreteMeasure::uniform(points.iter().map(|p| Point::euclid(p.clone())).collect())
        .map_err(LiftError::from)
}

/// Steers a uniform empirical cloud onto a uniform empirical target with
/// integrator particle dynamics, pure input effort and a hard terminal
/// constraint.
///
/// The per-stage allocation comes from the assignment solver (equal-size
/// uniform marginals admit a transport map); the reported stage values come
/// from the transport LP, so the two routes check each other. Inputs follow
/// the equal-split feedback toward each particle's assigned target.
pub fn integrator_rollout(
    n: usize,
    starts: &[Vec<f64>],
    targets: &[Vec<f64>],
    mode: IntegratorMode,
) -> Result<IntegratorRollout, LiftError> {
    use crate::linprog::{self, LinProgError};
    use crate::lqr;

    let m = starts.len();
    if m == 0 || targets.len() != m || n == 0 {
        return Err(LiftError::Empirical(format!(
            "need matching nonempty clouds and a positive horizon; got {m} starts, {} targets, N={n}",
            targets.len()
        )));
    }
    let d = starts[0].len();
    if starts.iter().chain(targets).any(|p| p.len() != d) {
        return Err(LiftError::Empirical("points of mixed dimension".into()));
    }

    let target_measure = euclid_measure(targets)?;
    let mut points: Vec<Vec<f64>> = starts.to_vec();
    let mut stages = vec![points.clone()];
    let mut stage_values = Vec::with_capacity(n);
    let mut input_costs = Vec::with_capacity(n);
    let mut fixed_assignment: Option<Vec<usize>> = None;
    for k in 0..n {
        let mu = euclid_measure(&points)?;
        let cost = CostTensor::from_fn(vec![mu.len(), target_measure.len()], |idx| {
            let x = mu.atoms()[idx[0]].point.as_euclid().unwrap();
            let r = target_measure.atoms()[idx[1]].point.as_euclid().unwrap();
            Cost::Finite(lqr::integrator_cost_to_go(n, k, x, r).expect("stage in range"))
        });
        let lifted = transport::ot2(&mu, &target_measure, &cost)?;
        stage_values.push(match lifted.value {
            Cost::Finite(v) => v,
            Cost::Infinite => return Err(LiftError::InfeasibleStage { stage: k }),
        });

        let assignment = match (&fixed_assignment, mode) {
            (Some(a), IntegratorMode::OpenLoop) => a.clone(),
            _ => {
                let matrix: Vec<Vec<Cost>> = points
                    .iter()
                    .map(|x| {
                        targets
                            .iter()
                            .map(|r| {
                                Cost::Finite(
                                    lqr::integrator_cost_to_go(n, k, x, r).expect("stage in range"),
                                )
                            })
                            .collect()
                    })
                    .collect();
                match linprog::solve_assignment(&matrix) {
                    Ok((perm, _)) => perm,
                    Err(LinProgError::InfeasibleAssignment) => {
                        return Err(LiftError::InfeasibleStage { stage: k })
                    }
                    Err(e) => return Err(TransportError::Solver(e).into()),
                }
            }
        };
        if mode == IntegratorMode::OpenLoop && fixed_assignment.is_none() {
            fixed_assignment = Some(assignment.clone());
        }

        let mut effort = 0.0;
        for (i, point) in points.iter_mut().enumerate() {
            let u = lqr::integrator_feedback(n, k, point, &targets[assignment[i]])
                .expect("stage in range");
            effort += u.iter().map(|v| v * v).sum::<f64>();
            for (c, step) in point.iter_mut().zip(&u) {
                *c += step;
            }
        }
        input_costs.push(effort / m as f64);
        stages.push(points.clone());
    }

    let final_measure = euclid_measure(&points)?;
    let landed = final_measure.approx_eq(&target_measure, 1e-9);
    let total_input_cost = input_costs.iter().sum();
    Ok(IntegratorRollout { stages, stage_values, input_costs, total_input_cost, landed })
}

/// Outcome of the noisy-lifting comparison.
#[derive(Debug, Clone)]
pub struct NoisyLiftReport {
    /// Transport value of the stochastic ground cost-to-go: the naive lift.
    pub naive: Cost,
    /// Exact-expectation optimum of the fleet problem itself.
    pub true_value: Cost,
}

/// Prices the naive lift of a noisy system against the true fleet optimum.
///
/// The naive value couples `mu0` with `rho_n` under the expected-cost
/// recursion's table; the true value re-solves the fleet problem stage by
/// stage with the noise expectation taken exactly (mean-field pushforward).
pub fn naive_noisy_lift(
    sys: &NoisyGroundSystem,
    mu0: &DiscreteMeasure,
    rho_n: &DiscreteMeasure,
    fleet_size: usize,
    caps: &OracleCaps,
) -> Result<NoisyLiftReport, LiftError> {
    let table = dpa_stochastic(sys)?;
    let mu_idx: Vec<usize> = mu0
        .points()
        .map(|p| sys.state_index(0, label_of(p)?).map_err(LiftError::from))
        .collect::<Result<_, _>>()?;
    let rho_idx: Vec<usize> = rho_n
        .points()
        .map(|p| {
            let l = label_of(p)?;
            sys.terminal_refs()
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| LiftError::NotALabelMeasure(l.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let cost = CostTensor::from_fn(vec![mu0.len(), rho_n.len()], |idx| {
        table.stage(0).value(&[mu_idx[idx[0]], rho_idx[idx[1]]])
    });
    let naive = transport::ot2(mu0, rho_n, &cost)?.value;
    let true_value = oracle::noisy_fleet_optimum(sys, mu0, rho_n, fleet_size, caps)?;
    Ok(NoisyLiftReport { naive, true_value })
}
