use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphConfig};
use crate::tapegrad::Tensor;

use super::EnvError;

/// Spatial shape of the demand rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandPattern {
    Uniform,
    /// Trips heading toward `center` are boosted by `1 + strength` during the
    /// first half of the horizon, trips heading away during the second half.
    CommuterPulse {
        strength: f64,
        /// `(row, col)` of the center; defaults to the grid midpoint.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    /// Trips per step on every directed edge.
    #[serde(default)]
    pub base_rate: f64,
    /// `(origin, destination, rate)` replacing the base rate on one directed edge.
    #[serde(default)]
    pub rate_overrides: Vec<(usize, usize, f64)>,
    /// Time multiplier `m(t)`, cycled; empty means constant 1.
    #[serde(default)]
    pub profile: Vec<f64>,
    #[serde(default = "uniform")]
    pub pattern: DemandPattern,
}

fn uniform() -> DemandPattern {
    DemandPattern::Uniform
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            base_rate: 0.0,
            rate_overrides: Vec::new(),
            profile: Vec::new(),
            pattern: DemandPattern::Uniform,
        }
    }
}

/// Scenario description as found in JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub graph: GraphConfig,
    pub fleet_size: u64,
    pub horizon: usize,
    pub price_per_trip: f64,
    #[serde(default)]
    pub demand: DemandConfig,
    /// Keep unserved requests for the next step instead of dropping them.
    #[serde(default)]
    pub carry_over: bool,
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario, EnvError> {
        Scenario::new(self.graph.build()?, self)
    }

    /// The commuter-pulse family on a `k × k` grid.
    pub fn commuter_pulse(k: usize) -> Self {
        Self {
            graph: GraphConfig::square(k),
            fleet_size: 4 * (k * k) as u64,
            horizon: 12,
            price_per_trip: 5.0,
            demand: DemandConfig {
                base_rate: 0.5,
                rate_overrides: Vec::new(),
                profile: Vec::new(),
                pattern: DemandPattern::CommuterPulse {
                    strength: 3.0,
                    center: None,
                },
            },
            carry_over: false,
        }
    }

    /// The same scenario on a `k × k` grid, with the fleet scaled by node
    /// count. Node-indexed overrides have no meaning at another size and are
    /// rejected.
    pub fn with_granularity(&self, k: usize) -> Result<Self, EnvError> {
        if k == 0 {
            return Err(EnvError::Scenario("granularity k must be at least 1".into()));
        }
        if !self.demand.rate_overrides.is_empty() || !self.graph.cost_overrides.is_empty() {
            return Err(EnvError::Scenario(
                "cannot rescale a scenario with node-indexed rate or cost overrides".into(),
            ));
        }
        let n0 = (self.graph.k * self.graph.cols.unwrap_or(self.graph.k)) as u64;
        let n1 = (k * k) as u64;
        let mut out = self.clone();
        out.graph.k = k;
        out.graph.cols = None;
        out.fleet_size = (self.fleet_size * n1).div_ceil(n0.max(1));
        Ok(out)
    }

    /// Two stations with every request going from station 0 to station 1.
    pub fn two_node_skewed() -> Self {
        Self {
            graph: GraphConfig {
                k: 1,
                cols: Some(2),
                ..GraphConfig::square(1)
            },
            fleet_size: 4,
            horizon: 10,
            price_per_trip: 10.0,
            demand: DemandConfig {
                base_rate: 0.0,
                rate_overrides: vec![(0, 1, 6.0)],
                profile: Vec::new(),
                pattern: DemandPattern::Uniform,
            },
            carry_over: false,
        }
    }
}

/// A validated scenario with derived lookup tables.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub graph: Graph,
    /// Shortest-path travel cost between every pair of stations.
    pub path_cost: Tensor<f64>,
    /// Directed edges, sorted; demand vectors are indexed by position here.
    pub directed_edges: Vec<(usize, usize)>,
    /// Outgoing directed-edge indices per node.
    pub outgoing: Vec<Vec<usize>>,
    base_rates: Vec<f64>,
    pulse: Option<PulseBoost>,
}

#[derive(Debug, Clone)]
struct PulseBoost {
    factor: f64,
    inbound: Vec<bool>,
    outbound: Vec<bool>,
}

fn check_rate(what: &str, x: f64) -> Result<(), EnvError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(EnvError::Scenario(format!("{what} must be finite and nonnegative, got {x}")))
    }
}

impl Scenario {
    pub fn new(graph: Graph, config: &ScenarioConfig) -> Result<Self, EnvError> {
        if config.fleet_size == 0 {
            return Err(EnvError::Scenario("fleet_size must be at least 1".into()));
        }
        if config.horizon == 0 {
            return Err(EnvError::Scenario("horizon must be at least 1".into()));
        }
        check_rate("price_per_trip", config.price_per_trip)?;
        let demand = &config.demand;
        check_rate("demand.base_rate", demand.base_rate)?;
        for &m in &demand.profile {
            check_rate("demand.profile entry", m)?;
        }

        let path_cost = graph.shortest_path_costs()?;
        let directed_edges = graph.directed_edges();
        let n = graph.n();
        let mut outgoing = vec![Vec::new(); n];
        for (e, &(i, _)) in directed_edges.iter().enumerate() {
            outgoing[i].push(e);
        }

        let mut base_rates = vec![demand.base_rate; directed_edges.len()];
        for &(i, j, rate) in &demand.rate_overrides {
            check_rate("demand.rate_overrides rate", rate)?;
            let e = directed_edges.binary_search(&(i, j)).map_err(|_| {
                EnvError::Scenario(format!("demand override ({i}, {j}) is not an edge of the graph"))
            })?;
            base_rates[e] = rate;
        }

        let pulse = match demand.pattern {
            DemandPattern::Uniform => None,
            DemandPattern::CommuterPulse { strength, center } => {
                check_rate("demand.pattern.strength", strength)?;
                let (rows, cols) = graph.grid_dims();
                let (cr, cc) = center.unwrap_or(((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0));
                let dist = |v: usize| {
                    let (r, c) = ((v / cols) as f64, (v % cols) as f64);
                    (r - cr).hypot(c - cc)
                };
                Some(PulseBoost {
                    factor: 1.0 + strength,
                    inbound: directed_edges.iter().map(|&(i, j)| dist(j) < dist(i)).collect(),
                    outbound: directed_edges.iter().map(|&(i, j)| dist(j) > dist(i)).collect(),
                })
            }
        };

        Ok(Self {
            config: config.clone(),
            graph,
            path_cost,
            directed_edges,
            outgoing,
            base_rates,
            pulse,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn fleet_size(&self) -> u64 {
        self.config.fleet_size
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn price(&self) -> f64 {
        self.config.price_per_trip
    }

    pub fn profile(&self, t: usize) -> f64 {
        let p = &self.config.demand.profile;
        if p.is_empty() {
            1.0
        } else {
            p[t % p.len()]
        }
    }

    /// Poisson rate `λ_e · m(t)` (with the pulse boost) on directed edge `e`.
    pub fn rate(&self, t: usize, e: usize) -> f64 {
        let mut rate = self.base_rates[e] * self.profile(t);
        if let Some(p) = &self.pulse {
            let boosted = if 2 * t < self.horizon() { p.inbound[e] } else { p.outbound[e] };
            if boosted {
                rate *= p.factor;
            }
        }
        rate
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.directed_edges.binary_search(&(i, j)).ok()
    }

    /// Vehicle counts after reset: floor division, remainder to low indices.
    pub fn initial_vehicles(&self) -> Vec<u64> {
        let n = self.n() as u64;
        let f = self.fleet_size();
        (0..n).map(|i| f / n + u64::from(i < f % n)).collect()
    }
}
