//! Brute-force dynamic programming directly in the probability space.
//!
//! The fleet state is a multiset of particle states (canonical sorted form);
//! the recursion minimizes over deterministic per-particle input vectors,
//! prices stage objectives by optimal transport, and memoizes on
//! configurations. It exists as the independent ground truth that the lifted
//! construction is checked against on desk-scale instances, so it shares no
//! code path with the lifting itself beyond the transport solver.

use std::collections::HashMap;

use num_bigint::BigUint;
use thiserror::Error;

use crate::cost::Cost;
use crate::ground::{GroundSystem, NoisyGroundSystem};
use crate::measures::{Atom, DiscreteMeasure, Point};
use crate::transport::{self, CostTensor, TransportError};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance exceeds the oracle caps: {0}")]
    CapExceeded(String),
    #[error("initial measure is not uniform empirical over {0} particles")]
    NotUniformEmpirical(usize),
    #[error("measure atom {0:?} is not a label of the state space")]
    UnknownLabel(String),
    #[error("noisy fleet optimum requires uniform noise laws")]
    NonUniformNoise,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Size limits keeping the brute force at desk scale.
#[derive(Debug, Clone, Copy)]
pub struct OracleCaps {
    pub max_particles: usize,
    pub max_states: usize,
    pub max_inputs: usize,
    pub max_horizon: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps { max_particles: 4, max_states: 4, max_inputs: 3, max_horizon: 4 }
    }
}

/// Memoized fleet values: configuration (sorted state indices) to optimal
/// cost and a minimizing per-particle input vector.
#[derive(Debug, Clone)]
pub struct OracleEntry {
    pub value: Cost,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct OracleTable {
    entries: HashMap<(usize, Vec<usize>), OracleEntry>,
}

impl OracleTable {
    pub fn get(&self, stage: usize, config: &[usize]) -> Option<&OracleEntry> {
        self.entries.get(&(stage, config.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Number of fleet configurations of `m` particles over `nstates` states:
/// the binomial coefficient `C(m + nstates - 1, m)` in exact arithmetic.
pub fn config_count(m: u64, nstates: u64) -> BigUint {
    debug_assert!(nstates >= 1);
    let mut out = BigUint::from(1u32);
    // Multiply and divide alternately; each prefix is itself a binomial, so
    // the division stays exact.
    for i in 1..=m {
        out *= BigUint::from(nstates - 1 + i);
        out /= BigUint::from(i);
    }
    out
}

fn config_of(
    mu: &DiscreteMeasure,
    labels: &[String],
    m: usize,
) -> Result<Vec<usize>, OracleError> {
    let mut config = Vec::with_capacity(m);
    for atom in mu.atoms() {
        let label = atom
            .point
            .as_label()
            .ok_or_else(|| OracleError::UnknownLabel(atom.point.to_string()))?;
        let idx = labels
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| OracleError::UnknownLabel(label.to_string()))?;
        let copies = atom.weight * m as f64;
        if (copies - copies.round()).abs() > 1e-6 || copies < 0.5 {
            return Err(OracleError::NotUniformEmpirical(m));
        }
        for _ in 0..copies.round() as usize {
            config.push(idx);
        }
    }
    if config.len() != m {
        return Err(OracleError::NotUniformEmpirical(m));
    }
    config.sort_unstable();
    Ok(config)
}

fn measure_of_config(config: &[usize], labels: &[String]) -> DiscreteMeasure {
    let w = 1.0 / config.len() as f64;
    DiscreteMeasure::new(
        config
            .iter()
            .map(|&i| Atom { point: Point::label(labels[i].clone()), weight: w })
            .collect(),
    )
    .expect("configuration induces a valid measure")
}

/// Exact fleet optimum over uniform empirical measures by backward recursion
/// on configurations.
///
/// Stage objectives `K_{g_k}` and the terminal objective `K_{g_N}` are full
/// transport solves against the reference measures; only the input choice is
/// restricted to deterministic per-particle vectors (mass splits finer than
/// `1/M` are excluded).
pub fn oracle_solve(
    sys: &GroundSystem,
    m: usize,
    mu0: &DiscreteMeasure,
    refs: &[DiscreteMeasure],
    caps: &OracleCaps,
) -> Result<(Cost, OracleTable), OracleError> {
    let n = sys.horizon();
    if refs.len() != n + 1 {
        return Err(OracleError::CapExceeded(format!(
            "need {} reference measures, got {}",
            n + 1,
            refs.len()
        )));
    }
    if m > caps.max_particles || n > caps.max_horizon {
        return Err(OracleError::CapExceeded(format!("M={m}, N={n}")));
    }
    for k in 0..=n {
        if sys.states(k).len() > caps.max_states {
            return Err(OracleError::CapExceeded(format!("|X_{k}|={}", sys.states(k).len())));
        }
        if k < n && sys.inputs(k).len() > caps.max_inputs {
            return Err(OracleError::CapExceeded(format!("|U_{k}|={}", sys.inputs(k).len())));
        }
    }
    let config0 = config_of(mu0, sys.states(0), m)?;
    let mut table = OracleTable::default();
    let mut stage_cost_memo: HashMap<(usize, Vec<(usize, usize)>), Cost> = HashMap::new();
    let value = solve_config(sys, refs, 0, &config0, &mut table, &mut stage_cost_memo)?;
    Ok((value, table))
}

fn solve_config(
    sys: &GroundSystem,
    refs: &[DiscreteMeasure],
    k: usize,
    config: &[usize],
    table: &mut OracleTable,
    stage_memo: &mut HashMap<(usize, Vec<(usize, usize)>), Cost>,
) -> Result<Cost, OracleError> {
    if let Some(entry) = table.entries.get(&(k, config.to_vec())) {
        return Ok(entry.value);
    }
    let n = sys.horizon();
    if k == n {
        let mu = measure_of_config(config, sys.states(n));
        let value = terminal_transport(sys, &mu, &refs[n])?;
        table
            .entries
            .insert((k, config.to_vec()), OracleEntry { value, inputs: Vec::new() });
        return Ok(value);
    }

    let m = config.len();
    let n_inputs = sys.inputs(k).len();
    let mut best = Cost::Infinite;
    let mut best_inputs: Vec<usize> = Vec::new();
    let mut inputs = vec![0usize; m];
    loop {
        // Identical particles: skip input vectors that are not sorted within
        // runs of equal states (they duplicate an already-seen multiset).
        let mut canonical = true;
        for i in 1..m {
            if config[i] == config[i - 1] && inputs[i] < inputs[i - 1] {
                canonical = false;
                break;
            }
        }
        if canonical {
            let mut pairs: Vec<(usize, usize)> =
                config.iter().copied().zip(inputs.iter().copied()).collect();
            pairs.sort_unstable();
            let stage = match stage_memo.get(&(k, pairs.clone())) {
                Some(&c) => c,
                None => {
                    let c = stage_transport(sys, k, &pairs, &refs[k])?;
                    stage_memo.insert((k, pairs.clone()), c);
                    c
                }
            };
            if stage < best {
                let mut next: Vec<usize> = pairs
                    .iter()
                    .map(|&(x, u)| sys.next_state(k, x, u))
                    .collect();
                next.sort_unstable();
                let cont = solve_config(sys, refs, k + 1, &next, table, stage_memo)?;
                let total = stage + cont;
                if best_inputs.is_empty() || total < best {
                    best = total;
                    best_inputs = inputs.clone();
                }
            }
        }
        // Next input vector.
        let mut i = m;
        loop {
            if i == 0 {
                let entry = OracleEntry { value: best, inputs: best_inputs };
                table.entries.insert((k, config.to_vec()), entry);
                return Ok(best);
            }
            i -= 1;
            inputs[i] += 1;
            if inputs[i] < n_inputs {
                break;
            }
            inputs[i] = 0;
        }
    }
}

fn stage_transport(
    sys: &GroundSystem,
    k: usize,
    pairs: &[(usize, usize)],
    rho: &DiscreteMeasure,
) -> Result<Cost, OracleError> {
    let m = pairs.len();
    let w = 1.0 / m as f64;
    let joint = DiscreteMeasure::new(
        pairs
            .iter()
            .map(|&(x, u)| Atom {
                point: Point::pair(
                    Point::label(sys.states(k)[x].clone()),
                    Point::label(sys.inputs(k)[u].clone()),
                ),
                weight: w,
            })
            .collect(),
    )
    .expect("pairs form a measure");
    // Re-derive the (x, u) index per merged atom from its labels.
    let atom_idx: Vec<(usize, usize)> = joint
        .points()
        .map(|p| {
            let parts = p.as_tuple().expect("pair atoms");
            let x = sys
                .states(k)
                .iter()
                .position(|s| s == parts[0].as_label().unwrap())
                .unwrap();
            let u = sys
                .inputs(k)
                .iter()
                .position(|s| s == parts[1].as_label().unwrap())
                .unwrap();
            (x, u)
        })
        .collect();
    let rho_idx: Vec<usize> = rho
        .points()
        .map(|p| {
            let l = p.as_label().ok_or_else(|| OracleError::UnknownLabel(p.to_string()))?;
            sys.refs(k)
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| OracleError::UnknownLabel(l.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let cost = CostTensor::from_fn(vec![joint.len(), rho.len()], |idx| {
        let (x, u) = atom_idx[idx[0]];
        sys.stage_cost(k, x, u, rho_idx[idx[1]])
    });
    Ok(transport::ot2(&joint, rho, &cost)?.value)
}

fn terminal_transport(
    sys: &GroundSystem,
    mu: &DiscreteMeasure,
    rho: &DiscreteMeasure,
) -> Result<Cost, OracleError> {
    let n = sys.horizon();
    let mu_idx: Vec<usize> = mu
        .points()
        .map(|p| {
            let l = p.as_label().ok_or_else(|| OracleError::UnknownLabel(p.to_string()))?;
            sys.states(n)
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| OracleError::UnknownLabel(l.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let rho_idx: Vec<usize> = rho
        .points()
        .map(|p| {
            let l = p.as_label().ok_or_else(|| OracleError::UnknownLabel(p.to_string()))?;
            sys.refs(n)
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| OracleError::UnknownLabel(l.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let cost = CostTensor::from_fn(vec![mu.len(), rho.len()], |idx| {
        sys.terminal_cost(mu_idx[idx[0]], rho_idx[idx[1]])
    });
    Ok(transport::ot2(mu, rho, &cost)?.value)
}

/// Exact-expectation optimum of a noisy fleet problem.
///
/// Mass is quantized at `1/(M * prod_k |W_k|)`: noise branching multiplies
/// virtual particles, each stage assigns one input per virtual particle, and
/// the measure is pushed forward by the exact noise expectation. Requires
/// uniform noise laws so the quantization stays integral.
pub fn noisy_fleet_optimum(
    sys: &NoisyGroundSystem,
    mu0: &DiscreteMeasure,
    rho_n: &DiscreteMeasure,
    fleet_size: usize,
    caps: &OracleCaps,
) -> Result<Cost, OracleError> {
    let n = sys.horizon();
    if n > caps.max_horizon || fleet_size > caps.max_particles {
        return Err(OracleError::CapExceeded(format!("M={fleet_size}, N={n}")));
    }
    let mut units: u64 = fleet_size as u64;
    for k in 0..n {
        let nw = sys.noise(k).len();
        let p = 1.0 / nw as f64;
        if sys.noise_law(k).iter().any(|&w| (w - p).abs() > 1e-12) {
            return Err(OracleError::NonUniformNoise);
        }
        units = units.saturating_mul(nw as u64);
    }
    if units > 64 {
        return Err(OracleError::CapExceeded(format!("{units} mass quanta")));
    }
    let total_units = units as usize;

    // Initial unit vector over states.
    let mut start = vec![0usize; sys.states(0).len()];
    for atom in mu0.atoms() {
        let label = atom
            .point
            .as_label()
            .ok_or_else(|| OracleError::UnknownLabel(atom.point.to_string()))?;
        let idx = sys.state_index(0, label).map_err(|_| OracleError::UnknownLabel(label.into()))?;
        let mass = atom.weight * total_units as f64;
        if (mass - mass.round()).abs() > 1e-6 {
            return Err(OracleError::NotUniformEmpirical(fleet_size));
        }
        start[idx] += mass.round() as usize;
    }
    if start.iter().sum::<usize>() != total_units {
        return Err(OracleError::NotUniformEmpirical(fleet_size));
    }

    let rho_idx: Vec<usize> = rho_n
        .points()
        .map(|p| {
            let l = p.as_label().ok_or_else(|| OracleError::UnknownLabel(p.to_string()))?;
            sys.terminal_refs()
                .iter()
                .position(|s| s == l)
                .ok_or_else(|| OracleError::UnknownLabel(l.to_string()))
        })
        .collect::<Result<_, _>>()?;

    // Virtual-particle block size per stage: units per particle shrink as
    // noise branches.
    let mut block = vec![1usize; n + 1];
    for k in (0..n).rev() {
        block[k] = block[k + 1] * sys.noise(k).len();
    }

    let mut memo: HashMap<(usize, Vec<usize>), Cost> = HashMap::new();
    noisy_value(sys, rho_n, &rho_idx, 0, &start, total_units, &block, &mut memo)
}

#[allow(clippy::too_many_arguments)]
fn noisy_value(
    sys: &NoisyGroundSystem,
    rho_n: &DiscreteMeasure,
    rho_idx: &[usize],
    k: usize,
    units: &[usize],
    total_units: usize,
    block: &[usize],
    memo: &mut HashMap<(usize, Vec<usize>), Cost>,
) -> Result<Cost, OracleError> {
    if let Some(&v) = memo.get(&(k, units.to_vec())) {
        return Ok(v);
    }
    let n = sys.horizon();
    if k == n {
        let atoms: Vec<Atom> = units
            .iter()
            .enumerate()
            .filter(|(_, &q)| q > 0)
            .map(|(x, &q)| Atom {
                point: Point::label(sys.states(n)[x].clone()),
                weight: q as f64 / total_units as f64,
            })
            .collect();
        let mu = DiscreteMeasure::new(atoms).expect("units form a measure");
        let mu_idx: Vec<usize> = mu
            .points()
            .map(|p| sys.state_index(n, p.as_label().unwrap()).unwrap())
            .collect();
        let cost = CostTensor::from_fn(vec![mu.len(), rho_n.len()], |idx| {
            sys.terminal_cost(mu_idx[idx[0]], rho_idx[idx[1]])
        });
        let value = transport::ot2(&mu, rho_n, &cost)?.value;
        memo.insert((k, units.to_vec()), value);
        return Ok(value);
    }

    let n_inputs = sys.inputs(k).len();
    let nw = sys.noise(k).len();
    let unit_mass = 1.0 / total_units as f64;
    // Per-state virtual particle counts at this stage.
    let vps: Vec<usize> = units.iter().map(|&q| q / block[k]).collect();
    debug_assert!(units.iter().zip(&vps).all(|(&q, &v)| v * block[k] == q));

    // Enumerate input compositions per state and recurse over their product.
    let mut best = Cost::Infinite;
    let mut composition: Vec<Vec<usize>> = vps
        .iter()
        .map(|&v| {
            let mut c = vec![0usize; n_inputs];
            c[0] = v;
            c
        })
        .collect();
    loop {
        // Evaluate the current joint composition.
        let mut stage = Cost::ZERO;
        let mut next_units = vec![0usize; sys.states(k + 1).len()];
        for (x, comp) in composition.iter().enumerate() {
            for (u, &count) in comp.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let mass = count as f64 * block[k] as f64 * unit_mass;
                for w in 0..nw {
                    stage = stage + sys.stage_cost(k, x, u, w).scale(mass / nw as f64);
                    next_units[sys.next_state(k, x, u, w)] += count * block[k] / nw;
                }
            }
        }
        if stage < best {
            let cont = noisy_value(sys, rho_n, rho_idx, k + 1, &next_units, total_units, block, memo)?;
            best = best.min(stage + cont);
        }

        if !advance_compositions(&mut composition, &vps) {
            break;
        }
    }
    memo.insert((k, units.to_vec()), best);
    Ok(best)
}

/// Steps a vector of per-state compositions through all combinations.
fn advance_compositions(composition: &mut [Vec<usize>], totals: &[usize]) -> bool {
    for (comp, &total) in composition.iter_mut().zip(totals) {
        if next_composition(comp, total) {
            return true;
        }
        // Wrapped: reset to the first composition and carry.
        comp.iter_mut().for_each(|c| *c = 0);
        comp[0] = total;
    }
    false
}

/// Next weak composition of `total` over the slots, lexicographic carry.
fn next_composition(comp: &mut [usize], total: usize) -> bool {
    if comp.len() <= 1 || total == 0 {
        return false;
    }
    // Move one unit from the first nonzero slot to the next slot; classic
    // colex enumeration of weak compositions.
    let first_nonzero = match comp.iter().position(|&c| c > 0) {
        Some(i) => i,
        None => return false,
    };
    if first_nonzero + 1 == comp.len() {
        return false;
    }
    let head = comp[first_nonzero];
    comp[first_nonzero] = 0;
    comp[0] = head - 1;
    comp[first_nonzero + 1] += 1;
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_counts() {
        assert_eq!(config_count(10, 10), BigUint::from(92378u64));
        assert_eq!(config_count(1, 7), BigUint::from(7u64));
        assert_eq!(config_count(0, 5), BigUint::from(1u64));
        // M = 2 over 3 states: multisets {aa, ab, ac, bb, bc, cc}.
        assert_eq!(config_count(2, 3), BigUint::from(6u64));
    }

    #[test]
    fn config_count_large_exceeds_f64() {
        let big = config_count(1000, 10_000_000);
        assert!(big.bits() > 1024);
    }

    #[test]
    fn compositions_enumerate_all() {
        let mut comp = vec![3usize, 0, 0];
        let mut seen = vec![comp.clone()];
        while next_composition(&mut comp, 3) {
            seen.push(comp.clone());
        }
        // C(3 + 2, 2) = 10 weak compositions of 3 over 3 slots.
        assert_eq!(seen.len(), 10);
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }
}
