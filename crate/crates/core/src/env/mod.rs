//! Grid-city fleet simulator: demand synthesis, passenger matching,
//! rebalancing and reward accounting.

mod scenario;
pub mod transport;

use std::io::{self, Write};

use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::graph::GraphError;
use crate::scalar::Scalar;
use crate::streams;
use crate::tapegrad::Tensor;

pub use scenario::{DemandConfig, DemandPattern, Scenario, ScenarioConfig};
pub use transport::{largest_remainder, transport, Flow};

/// Number of per-node features.
pub const FEATURES: usize = 4;

/// Simplex tolerance for actions.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid action: {0}")]
    Action(String),
    #[error("episode complete: step {t} is past the horizon {horizon}")]
    EpisodeComplete { t: usize, horizon: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AmodState {
    pub t: usize,
    pub vehicles: Vec<u64>,
    /// Trip requests for the current step, indexed like `Scenario::directed_edges`.
    pub pending: Vec<u64>,
    /// Episode seed keying the demand streams.
    pub seed: u64,
}

/// Rebalancing decision for one step.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Leave vehicles where matching put them.
    Hold,
    /// Desired global fleet distribution (a simplex over nodes).
    Target(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub served: u64,
    pub revenue: f64,
    pub rebal_cost: f64,
    pub flows: Vec<Flow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub served: Vec<u64>,
    pub total_served: u64,
    pub revenue: f64,
    pub vehicles: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RebalanceOutcome {
    pub flows: Vec<Flow>,
    pub cost: f64,
    pub vehicles: Vec<u64>,
}

/// One Poisson draw; zero rate gives zero.
pub fn poisson(rng: &mut impl rand::Rng, rate: f64) -> u64 {
    if rate > 0.0 {
        Poisson::new(rate).expect("positive finite rate").sample(rng) as u64
    } else {
        0
    }
}

impl Scenario {
    pub fn reset(&self, seed: u64) -> AmodState {
        AmodState {
            t: 0,
            vehicles: self.initial_vehicles(),
            pending: self.synthesize_demand(0, seed),
            seed,
        }
    }

    /// Independent Poisson requests per directed edge for step `t`.
    pub fn synthesize_demand(&self, t: usize, seed: u64) -> Vec<u64> {
        (0..self.directed_edges.len())
            .map(|e| {
                let rate = self.rate(t, e);
                if rate > 0.0 {
                    poisson(&mut streams::stream(seed, streams::DEMAND, &[t as u64, e as u64]), rate)
                } else {
                    0
                }
            })
            .collect()
    }

    /// Serves pending requests from each origin, rationing proportionally when
    /// requests exceed the vehicles there. Served vehicles move to their
    /// destinations.
    pub fn match_demand(&self, state: &AmodState) -> MatchOutcome {
        let mut served = vec![0u64; self.directed_edges.len()];
        let mut vehicles = state.vehicles.clone();
        for (i, out) in self.outgoing.iter().enumerate() {
            let available = state.vehicles[i];
            let requests: Vec<u64> = out.iter().map(|&e| state.pending[e]).collect();
            let total: u64 = requests.iter().sum();
            let granted = if total <= available {
                requests
            } else if available == 0 {
                vec![0; out.len()]
            } else {
                transport::apportion(&requests, available)
            };
            for (&e, g) in out.iter().zip(granted) {
                served[e] = g;
                vehicles[i] -= g;
                vehicles[self.directed_edges[e].1] += g;
            }
        }
        let total_served = served.iter().sum();
        MatchOutcome {
            served,
            total_served,
            revenue: self.price() * total_served as f64,
            vehicles,
        }
    }

    /// Integer targets for a desired distribution.
    pub fn targets(&self, desired: &[f64]) -> Result<Vec<u64>, EnvError> {
        let n = self.n();
        if desired.len() != n {
            return Err(EnvError::Action(format!("expected {n} entries, got {}", desired.len())));
        }
        if let Some(x) = desired.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(EnvError::Action(format!("entries must be finite and nonnegative, got {x}")));
        }
        let sum: f64 = desired.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(EnvError::Action(format!("entries must sum to 1, got {sum}")));
        }
        let f = self.fleet_size();
        let quota: Vec<f64> = desired.iter().map(|&x| x / sum * f as f64).collect();
        Ok(largest_remainder(&quota, f))
    }

    pub fn rebalance(&self, vehicles: &[u64], desired: &[f64]) -> Result<RebalanceOutcome, EnvError> {
        let target = self.targets(desired)?;
        let (flows, cost) = transport(vehicles, &target, &self.path_cost);
        Ok(RebalanceOutcome { flows, cost, vehicles: target })
    }

    /// Match, rebalance, advance the clock, then draw the next requests.
    pub fn step(&self, state: &AmodState, action: &Action) -> Result<(AmodState, StepOutcome), EnvError> {
        let horizon = self.horizon();
        if state.t >= horizon {
            return Err(EnvError::EpisodeComplete { t: state.t, horizon });
        }
        let matched = self.match_demand(state);
        let (flows, rebal_cost, vehicles) = match action {
            Action::Hold => (Vec::new(), 0.0, matched.vehicles),
            Action::Target(desired) => {
                let r = self.rebalance(&matched.vehicles, desired)?;
                (r.flows, r.cost, r.vehicles)
            }
        };
        let t = state.t + 1;
        let mut pending = if t < horizon {
            self.synthesize_demand(t, state.seed)
        } else {
            vec![0; self.directed_edges.len()]
        };
        if self.config.carry_over && t < horizon {
            for (p, (&old, &s)) in pending.iter_mut().zip(state.pending.iter().zip(&matched.served)) {
                *p += old - s;
            }
        }
        let next = AmodState {
            t,
            vehicles,
            pending,
            seed: state.seed,
        };
        let outcome = StepOutcome {
            reward: matched.revenue - rebal_cost,
            served: matched.total_served,
            revenue: matched.revenue,
            rebal_cost,
            flows,
        };
        Ok((next, outcome))
    }

    /// `[vehicles_i, outgoing requests_i, incoming requests_i] / fleet` and `t / T`.
    pub fn node_features<S: Scalar>(&self, state: &AmodState) -> Tensor<S> {
        let n = self.n();
        let f = self.fleet_size() as f64;
        let mut out_req = vec![0u64; n];
        let mut in_req = vec![0u64; n];
        for (&(i, j), &p) in self.directed_edges.iter().zip(&state.pending) {
            out_req[i] += p;
            in_req[j] += p;
        }
        let clock = state.t as f64 / self.horizon() as f64;
        let mut data = Vec::with_capacity(n * FEATURES);
        for i in 0..n {
            data.extend([
                S::lit(state.vehicles[i] as f64 / f),
                S::lit(out_req[i] as f64 / f),
                S::lit(in_req[i] as f64 / f),
                S::lit(clock),
            ]);
        }
        Tensor::matrix(n, FEATURES, data).expect("feature shape")
    }
}

/// One row of a trajectory dump: the state at the start of the step and
/// what the step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub vehicles: Vec<u64>,
    pub outcome: StepOutcome,
}

/// Writes `t,v0..v{n-1},served,revenue,rebal_cost,reward`.
pub fn write_trajectory_csv(out: &mut impl Write, rows: &[TrajectoryRow]) -> io::Result<()> {
    let n = rows.first().map_or(0, |r| r.vehicles.len());
    write!(out, "t")?;
    for i in 0..n {
        write!(out, ",v{i}")?;
    }
    writeln!(out, ",served,revenue,rebal_cost,reward")?;
    for row in rows {
        write!(out, "{}", row.t)?;
        for v in &row.vehicles {
            write!(out, ",{v}")?;
        }
        let o = &row.outcome;
        writeln!(out, ",{},{},{},{}", o.served, o.revenue, o.rebal_cost, o.reward)?;
    }
    Ok(())
}
