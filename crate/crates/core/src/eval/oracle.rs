//! Exhaustive search over discretized action sequences on tiny instances.
//!
//! Demand is frozen by the episode seed, so the best action sequence is found
//! by dynamic programming over reachable states; this visits every action
//! sequence implicitly.

use std::collections::HashMap;

use thiserror::Error;

use crate::env::{Action, AmodState, EnvError, Scenario};

pub const MAX_NODES: usize = 3;
pub const MAX_FLEET: u64 = 6;
pub const MAX_HORIZON: usize = 12;
pub const MAX_RESOLUTION: usize = 12;
/// Default simplex-grid denominator.
pub const DEFAULT_RESOLUTION: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(
        "instance too large for exhaustive search: {nodes} nodes, fleet {fleet}, horizon {horizon}, \
         resolution {resolution} (limits: nodes <= {MAX_NODES}, fleet <= {MAX_FLEET}, \
         horizon <= {MAX_HORIZON}, 1 <= resolution <= {MAX_RESOLUTION})"
    )]
    TooLarge {
        nodes: usize,
        fleet: u64,
        horizon: usize,
        resolution: usize,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub reward: f64,
    pub actions: Vec<Action>,
}

/// `Hold` followed by every composition of `resolution` into `n` parts, as
/// simplex vectors in lexicographic order.
pub fn action_grid(n: usize, resolution: usize) -> Vec<Action> {
    fn compositions(n: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            compositions(n, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut parts = Vec::new();
    compositions(n, resolution, &mut Vec::new(), &mut parts);
    let mut out = vec![Action::Hold];
    out.extend(parts.into_iter().map(|p| {
        Action::Target(p.into_iter().map(|k| k as f64 / resolution as f64).collect())
    }));
    out
}

/// Best total reward over all action sequences from the grid, for the demand
/// realized by `seed`.
pub fn oracle_search(sc: &Scenario, seed: u64, resolution: usize) -> Result<OracleResult, OracleError> {
    let (nodes, fleet, horizon) = (sc.n(), sc.fleet_size(), sc.horizon());
    if nodes > MAX_NODES || fleet > MAX_FLEET || horizon > MAX_HORIZON || resolution == 0 || resolution > MAX_RESOLUTION
    {
        return Err(OracleError::TooLarge {
            nodes,
            fleet,
            horizon,
            resolution,
        });
    }
    let grid = action_grid(nodes, resolution);
    let mut memo = HashMap::new();
    let start = sc.reset(seed);
    let reward = best_value(sc, &grid, &start, &mut memo)?;

    let mut actions = Vec::with_capacity(horizon);
    let mut state = start;
    while state.t < horizon {
        let (_, idx) = memo[&state];
        actions.push(grid[idx].clone());
        state = sc.step(&state, &grid[idx])?.0;
    }
    Ok(OracleResult { reward, actions })
}

fn best_value(
    sc: &Scenario,
    grid: &[Action],
    state: &AmodState,
    memo: &mut HashMap<AmodState, (f64, usize)>,
) -> Result<f64, OracleError> {
    if state.t >= sc.horizon() {
        return Ok(0.0);
    }
    if let Some(&(v, _)) = memo.get(state) {
        return Ok(v);
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (idx, action) in grid.iter().enumerate() {
        let (next, out) = sc.step(state, action)?;
        let v = out.reward + best_value(sc, grid, &next, memo)?;
        if v > best.0 {
            best = (v, idx);
        }
    }
    memo.insert(state.clone(), best);
    Ok(best.0)
}
