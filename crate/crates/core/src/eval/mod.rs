//! Baselines, learned-policy rollouts, the exhaustive oracle and evaluation
//! reports.

pub mod oracle;
pub mod report;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, AmodState, Scenario, ScenarioConfig, StepOutcome, TrajectoryRow};
use crate::gnn::ptdnet::draw_edge_noise;
use crate::gnn::{BackboneKind, GraphTensors, SampleMode};
use crate::policy::{dirichlet, Observation, PolicyError, PolicyNets, StepRecord};
use crate::scalar::Scalar;
use crate::streams;
use crate::tapegrad::Tensor;

pub use oracle::{action_grid, oracle_search, OracleError, OracleResult};
pub use report::{write_results_csv, write_sweep_csv, write_sweep_runs_csv, write_sweep_svg, ResultRow, SweepRow};

/// Aggregates of one episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    pub demand_served: u64,
    pub rebal_cost: f64,
    pub dev_vs_oracle: Option<f64>,
}

impl EpisodeMetrics {
    pub fn add(&mut self, out: &StepOutcome) {
        self.total_reward += out.reward;
        self.demand_served += out.served;
        self.rebal_cost += out.rebal_cost;
    }
}

/// Anything that picks a rebalancing action from a state.
pub trait Policy: Sync {
    fn act(&self, sc: &Scenario, state: &AmodState) -> Result<Action, PolicyError>;

    /// Label for reports.
    fn name(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselinePolicy {
    NoRebalance,
    UniformDistribution,
    RandomDirichlet,
}

impl BaselinePolicy {
    pub const ALL: [BaselinePolicy; 3] = [
        BaselinePolicy::NoRebalance,
        BaselinePolicy::UniformDistribution,
        BaselinePolicy::RandomDirichlet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselinePolicy::NoRebalance => "no_rebalance",
            BaselinePolicy::UniformDistribution => "uniform_distribution",
            BaselinePolicy::RandomDirichlet => "random_dirichlet",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.as_str() == s)
    }
}

impl Policy for BaselinePolicy {
    fn act(&self, sc: &Scenario, state: &AmodState) -> Result<Action, PolicyError> {
        let n = sc.n();
        Ok(match self {
            BaselinePolicy::NoRebalance => Action::Hold,
            BaselinePolicy::UniformDistribution => Action::Target(vec![1.0 / n as f64; n]),
            BaselinePolicy::RandomDirichlet => {
                let mut rng = streams::stream(state.seed, streams::ACTION, &[state.t as u64]);
                Action::Target(dirichlet::sample(&mut rng, &vec![1.0; n])?.0)
            }
        })
    }

    fn name(&self) -> String {
        self.as_str().to_string()
    }
}

/// A trained actor bound to one scenario's graph.
pub struct LearnedPolicy<'a, S> {
    pub nets: &'a PolicyNets<S>,
    pub graph: GraphTensors<S>,
    /// Refined structure, used only on the graph it was learned on.
    pub structure: Option<Tensor<S>>,
    /// Sample from the Dirichlet instead of using its mean.
    pub stochastic: bool,
    /// Edge-sampler temperature for stochastic rollouts.
    pub temperature: f64,
    pub label: String,
}

impl<'a, S: Scalar> LearnedPolicy<'a, S> {
    pub fn new(nets: &'a PolicyNets<S>, sc: &Scenario, structure: Option<&Tensor<S>>) -> Result<Self, PolicyError> {
        let graph = GraphTensors::new(&sc.graph).map_err(crate::env::EnvError::from)?;
        let structure = structure.filter(|s| fits_graph(s, &graph)).cloned();
        Ok(Self {
            nets,
            graph,
            structure,
            stochastic: false,
            temperature: nets.backbone.ptdnet.tau_end,
            label: format!("a2c-{}", nets.backbone.backbone),
        })
    }

    /// Chooses an action and keeps what the update rule needs.
    pub fn record_step(&self, sc: &Scenario, state: &AmodState) -> Result<(Action, StepRecord<S>), PolicyError> {
        let features = sc.node_features::<S>(state);
        let noise: Option<Vec<S>> = (self.stochastic && self.nets.backbone.backbone == BackboneKind::Ptdnet).then(|| {
            let mut rng = streams::stream(state.seed, streams::EDGE_NOISE, &[state.t as u64]);
            draw_edge_noise(&mut rng, self.graph.edges.len()).into_iter().map(S::lit).collect()
        });
        let sample = match &noise {
            Some(noise) => SampleMode::Stochastic {
                noise,
                temperature: S::lit(self.temperature),
            },
            None => SampleMode::Deterministic,
        };
        let obs = Observation {
            graph: &self.graph,
            features: &features,
            structure: self.structure.as_ref(),
            sample,
        };
        let (c, value) = self.nets.evaluate(&obs)?;
        let (action, log_density) = if self.stochastic {
            let mut rng = streams::stream(state.seed, streams::ACTION, &[state.t as u64]);
            dirichlet::sample(&mut rng, &c)?
        } else {
            let a = dirichlet::mean(&c);
            let logp = dirichlet::log_density(&c, &a)?;
            (a, logp)
        };
        let record = StepRecord {
            features,
            action: action.clone(),
            log_density,
            reward: 0.0,
            value,
            noise,
        };
        Ok((Action::Target(action), record))
    }
}

fn fits_graph<S: Scalar>(s: &Tensor<S>, graph: &GraphTensors<S>) -> bool {
    s.shape() == graph.adjacency.shape()
        && s
            .data()
            .iter()
            .zip(graph.adjacency.data())
            .all(|(&x, &a)| a != S::zero() || x == S::zero())
}

impl<S: Scalar> Policy for LearnedPolicy<'_, S> {
    fn act(&self, sc: &Scenario, state: &AmodState) -> Result<Action, PolicyError> {
        Ok(self.record_step(sc, state)?.0)
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Plays one episode from `reset(seed)` to the horizon.
pub fn run_episode(
    sc: &Scenario,
    policy: &dyn Policy,
    seed: u64,
) -> Result<(EpisodeMetrics, Vec<TrajectoryRow>), PolicyError> {
    let mut state = sc.reset(seed);
    let mut metrics = EpisodeMetrics::default();
    let mut rows = Vec::with_capacity(sc.horizon());
    while state.t < sc.horizon() {
        let action = policy.act(sc, &state)?;
        let (next, outcome) = sc.step(&state, &action)?;
        metrics.add(&outcome);
        rows.push(TrajectoryRow {
            t: state.t,
            vehicles: state.vehicles.clone(),
            outcome,
        });
        state = next;
    }
    Ok((metrics, rows))
}

/// Seed of evaluation episode `episode` under evaluation seed `seed`.
pub fn eval_episode_seed(seed: u64, episode: u64) -> u64 {
    streams::key(seed, streams::EVAL, &[episode])
}

/// Per-episode metrics for `episodes` episodes under each seed, in
/// `(seed, episode)` order. Episodes run in parallel.
pub fn evaluate_episodes(
    sc: &Scenario,
    policy: &dyn Policy,
    episodes: u64,
    seeds: &[u64],
) -> Result<Vec<EpisodeMetrics>, PolicyError> {
    let jobs: Vec<u64> = seeds
        .iter()
        .flat_map(|&s| (0..episodes).map(move |e| eval_episode_seed(s, e)))
        .collect();
    jobs.par_iter()
        .map(|&seed| run_episode(sc, policy, seed).map(|(m, _)| m))
        .collect()
}

/// Mean oracle reward over the same episodes `evaluate_episodes` would play.
pub fn oracle_rewards(sc: &Scenario, episodes: u64, seeds: &[u64], resolution: usize) -> Result<Vec<f64>, OracleError> {
    let jobs: Vec<u64> = seeds
        .iter()
        .flat_map(|&s| (0..episodes).map(move |e| eval_episode_seed(s, e)))
        .collect();
    jobs.par_iter()
        .map(|&seed| oracle_search(sc, seed, resolution).map(|r| r.reward))
        .collect()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `100 (reward − oracle) / oracle`, undefined for a zero oracle.
pub fn dev_pct(reward: f64, oracle: f64) -> Option<f64> {
    (oracle != 0.0).then(|| 100.0 * (reward - oracle) / oracle)
}

/// Evaluates `policy` and summarizes into one results row.
pub fn evaluate(
    sc: &Scenario,
    policy: &dyn Policy,
    backbone: &str,
    episodes: u64,
    seeds: &[u64],
    oracle_resolution: Option<usize>,
) -> Result<ResultRow, EvalError> {
    let metrics = evaluate_episodes(sc, policy, episodes, seeds)?;
    let rewards: Vec<f64> = metrics.iter().map(|m| m.total_reward).collect();
    let (reward_mean, reward_se) = mean_and_se(&rewards);
    let count = metrics.len() as f64;
    let served_mean = metrics.iter().map(|m| m.demand_served as f64).sum::<f64>() / count;
    let cost_mean = metrics.iter().map(|m| m.rebal_cost).sum::<f64>() / count;
    let dev_pct = match oracle_resolution {
        Some(res) => {
            let oracle = oracle_rewards(sc, episodes, seeds, res)?;
            dev_pct(reward_mean, oracle.iter().sum::<f64>() / oracle.len() as f64)
        }
        None => None,
    };
    Ok(ResultRow {
        model: policy.name(),
        backbone: backbone.to_string(),
        k: sc.config.graph.k,
        seeds: seeds.to_vec(),
        episodes,
        reward_mean,
        reward_se,
        served_mean,
        cost_mean,
        dev_pct,
    })
}

/// Evaluates one set of weights zero-shot on every granularity in `ks`.
pub fn sweep_granularity<S: Scalar>(
    nets: &PolicyNets<S>,
    structure: Option<&Tensor<S>>,
    base: &ScenarioConfig,
    ks: &[usize],
    episodes: u64,
    seeds: &[u64],
    stochastic: bool,
) -> Result<Vec<SweepRow>, EvalError> {
    let backbone = nets.backbone.backbone.to_string();
    ks.iter()
        .map(|&k| {
            let sc = base.with_granularity(k).and_then(|c| c.build()).map_err(PolicyError::from)?;
            let mut policy = LearnedPolicy::new(nets, &sc, structure)?;
            policy.stochastic = stochastic;
            let row = evaluate(&sc, &policy, &backbone, episodes, seeds, None)?;
            Ok(SweepRow {
                k,
                backbone: backbone.clone(),
                reward: row.reward_mean,
                served: row.served_mean,
                cost: row.cost_mean,
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}
