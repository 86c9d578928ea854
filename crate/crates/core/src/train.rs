//! Episodic A2C training loop with checkpointing.

use std::io::{self, Write};
use std::path::Path;

use crate::env::{Scenario, FEATURES};
use rayon::prelude::*;

use crate::env::ScenarioConfig;
use crate::eval::{sweep_granularity, EpisodeMetrics, EvalError, LearnedPolicy, SweepRow};
use crate::gnn::{refine_step, BackboneConfig, BackboneKind, GraphTensors, ProGnnState};
use crate::policy::{a2c_loss, a2c_update, LossReport, PolicyError, PolicyNets, TrainConfig, Trajectory};
use crate::scalar::Scalar;
use crate::streams;
use crate::tapegrad::checkpoint::{self, CheckpointError, Entry};
use crate::tapegrad::{Adam, AdamConfig, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub metrics: EpisodeMetrics,
    pub loss: LossReport,
}

pub const TRAINING_LOG_HEADER: &str = "episode,reward,served,rebal_cost,policy_loss,value_loss,entropy";

pub fn write_log_row(out: &mut impl Write, log: &EpisodeLog) -> io::Result<()> {
    writeln!(
        out,
        "{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
        log.episode,
        log.metrics.total_reward,
        log.metrics.demand_served,
        log.metrics.rebal_cost,
        log.loss.policy_loss,
        log.loss.value_loss,
        log.loss.entropy
    )
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

pub struct Trainer<S> {
    pub scenario: Scenario,
    pub graph: GraphTensors<S>,
    pub nets: PolicyNets<S>,
    pub adam: Adam<S>,
    pub config: TrainConfig,
    /// Refined structure for the Pro-GNN backbone.
    pub prognn: Option<ProGnnState<S>>,
    pub root_seed: u64,
    /// Episodes completed so far.
    pub episode: u64,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(scenario: Scenario, backbone: &BackboneConfig, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let graph = GraphTensors::new(&scenario.graph).map_err(|e| PolicyError::Env(e.into()))?;
        let mut rng = streams::stream(seed, streams::INIT, &[]);
        let nets = PolicyNets::new(backbone, FEATURES, config.kappa, &mut rng);
        let adam = Adam::new(AdamConfig::with_lr(config.lr), nets.store.values());
        let prognn = (backbone.backbone == BackboneKind::Prognn)
            .then(|| ProGnnState::new(&graph.adjacency, backbone.prognn.clone()));
        Ok(Self {
            scenario,
            graph,
            nets,
            adam,
            config,
            prognn,
            root_seed: seed,
            episode: 0,
        })
    }

    pub fn structure(&self) -> Option<&Tensor<S>> {
        self.prognn.as_ref().map(|p| &p.structure)
    }

    /// Edge-sampler temperature for the current episode.
    pub fn temperature(&self) -> f64 {
        let progress = self.episode as f64 / self.config.episodes.max(1) as f64;
        self.nets.backbone.ptdnet.temperature(progress)
    }

    /// Plays one stochastic training episode.
    pub fn rollout(&self, seed: u64) -> Result<(Trajectory<S>, EpisodeMetrics), PolicyError> {
        let mut policy = LearnedPolicy::new(&self.nets, &self.scenario, self.structure())?;
        policy.stochastic = true;
        policy.temperature = self.temperature();
        let sc = &self.scenario;
        let mut state = sc.reset(seed);
        let mut traj = Trajectory {
            steps: Vec::with_capacity(sc.horizon()),
            temperature: policy.temperature,
        };
        let mut metrics = EpisodeMetrics::default();
        while state.t < sc.horizon() {
            let (action, mut record) = policy.record_step(sc, &state)?;
            let (next, outcome) = sc.step(&state, &action)?;
            record.reward = outcome.reward;
            metrics.add(&outcome);
            traj.steps.push(record);
            state = next;
        }
        Ok((traj, metrics))
    }

    /// One episode: rollout, weight updates, then structure updates.
    pub fn train_episode(&mut self) -> Result<EpisodeLog, PolicyError> {
        let seed = streams::episode_seed(self.root_seed, self.episode);
        let (traj, metrics) = self.rollout(seed)?;

        let (tau_w, tau_s, joint) = match &self.prognn {
            Some(p) => (p.config.tau_w.max(1), p.config.tau_s, p.config.joint),
            None => (1, 0, false),
        };
        let mut loss = LossReport::default();
        for _ in 0..tau_w {
            let structure = self.prognn.as_ref().map(|p| p.structure.clone());
            loss = a2c_update(
                &mut self.nets,
                &mut self.adam,
                &self.graph,
                &traj,
                structure.as_ref(),
                false,
                &self.config,
            )?
            .0;
        }
        for _ in 0..tau_s {
            let state = self.prognn.as_ref().expect("structure steps imply Pro-GNN");
            let grad = if joint {
                Some(self.structure_gradient(&traj, &state.structure)?)
            } else {
                None
            };
            let (next, report) = refine_step(&self.graph.adjacency, state, grad.as_ref())
                .map_err(|e| PolicyError::NonFinite { what: e.to_string() })?;
            if report.collapsed {
                log::warn!("episode {}: refined structure collapsed", self.episode);
            }
            self.prognn = Some(next);
        }

        let log = EpisodeLog {
            episode: self.episode,
            metrics,
            loss,
        };
        self.episode += 1;
        Ok(log)
    }

    /// Gradient of the episode loss w.r.t. the refined structure.
    fn structure_gradient(&self, traj: &Trajectory<S>, structure: &Tensor<S>) -> Result<Tensor<S>, PolicyError> {
        let mut tape = Tape::new();
        let bound = self.nets.store.bind_frozen(&mut tape);
        let s = tape.param(structure.clone());
        let (loss, _) = a2c_loss(&mut tape, &self.nets, &bound, &self.graph, traj, Some(s), &self.config)?;
        let grad = tape.backward(loss)?.wrt(s);
        if !grad.is_finite() {
            return Err(PolicyError::NonFinite {
                what: "structure gradient".into(),
            });
        }
        // The structure stays symmetric.
        Ok(grad.zip_map(&grad.transpose(), |a, b| (a + b) * S::lit(0.5)))
    }

    /// Everything needed to resume bit-for-bit.
    pub fn checkpoint_entries(&self) -> Vec<Entry> {
        let mut out: Vec<Entry> = self.nets.store.iter().map(|(n, t)| Entry::new(n, t)).collect();
        for (name, (m, v)) in self
            .nets
            .store
            .names()
            .iter()
            .zip(self.adam.state.first.iter().zip(&self.adam.state.second))
        {
            out.push(Entry::new(format!("adam.m.{name}"), m));
            out.push(Entry::new(format!("adam.v.{name}"), v));
        }
        out.push(Entry::new("adam.step", &Tensor::scalar(self.adam.state.step as f64)));
        out.push(Entry::new("train.episode", &Tensor::scalar(self.episode as f64)));
        if let Some(p) = &self.prognn {
            out.push(Entry::new(STRUCTURE_ENTRY, &p.structure));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        Ok(checkpoint::save(path, &self.checkpoint_entries())?)
    }

    /// Restores parameters, optimizer state, progress and structure.
    pub fn resume(&mut self, path: &Path) -> Result<(), TrainError> {
        let entries = checkpoint::load(path)?;
        load_params(&mut self.nets, &entries)?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.tensor.cast::<S>())
                .ok_or_else(|| TrainError::Mismatch(format!("missing entry {name}")))
        };
        let names = self.nets.store.names().to_vec();
        for (i, name) in names.iter().enumerate() {
            self.adam.state.first[i] = find(&format!("adam.m.{name}"))?;
            self.adam.state.second[i] = find(&format!("adam.v.{name}"))?;
        }
        self.adam.state.step = find("adam.step")?.item().as_f64() as u64;
        self.episode = find("train.episode")?.item().as_f64() as u64;
        if let Some(p) = &mut self.prognn {
            p.structure = find(STRUCTURE_ENTRY)?;
        }
        Ok(())
    }
}

pub const STRUCTURE_ENTRY: &str = "prognn.structure";

/// Loads network parameters by name from checkpoint entries.
pub fn load_params<S: Scalar>(nets: &mut PolicyNets<S>, entries: &[Entry]) -> Result<(), TrainError> {
    let converted: Vec<(String, Tensor<S>)> = entries.iter().map(|e| (e.name.clone(), e.tensor.cast())).collect();
    nets.store
        .load(converted.iter().map(|(n, t)| (n.as_str(), t)))
        .map_err(|e| TrainError::Mismatch(e.to_string()))
}

/// Refined structure stored in a checkpoint, if any.
pub fn stored_structure<S: Scalar>(entries: &[Entry]) -> Option<Tensor<S>> {
    entries.iter().find(|e| e.name == STRUCTURE_ENTRY).map(|e| e.tensor.cast())
}

impl<S: Scalar> Trainer<S> {
    /// Trains until the configured episode count.
    pub fn run(&mut self) -> Result<Vec<EpisodeLog>, PolicyError> {
        let mut logs = Vec::new();
        while self.episode < self.config.episodes {
            logs.push(self.train_episode()?);
        }
        Ok(logs)
    }
}

/// Settings shared by every run of a backbone comparison.
#[derive(Debug, Clone)]
pub struct Comparison<'a> {
    pub scenario: &'a ScenarioConfig,
    pub train: &'a TrainConfig,
    pub seeds: &'a [u64],
    pub ks: &'a [usize],
    pub eval_episodes: u64,
    pub eval_seeds: &'a [u64],
}

/// Per-seed sweep rows of one trained backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRun {
    pub backbone: BackboneKind,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

/// Trains every backbone under every seed on the base scenario and sweeps
/// each result over `ks`. Runs are independent and execute in parallel; the
/// output is ordered by backbone, then seed.
pub fn compare_backbones<S: Scalar>(
    cmp: &Comparison<'_>,
    backbones: &[BackboneConfig],
) -> Result<Vec<ComparisonRun>, EvalError> {
    let base = cmp.scenario.build().map_err(PolicyError::from)?;
    let jobs: Vec<(&BackboneConfig, u64)> = backbones
        .iter()
        .flat_map(|b| cmp.seeds.iter().map(move |&s| (b, s)))
        .collect();
    jobs.par_iter()
        .map(|&(bcfg, seed)| {
            let mut trainer = Trainer::<S>::new(base.clone(), bcfg, cmp.train.clone(), seed).map_err(|e| match e {
                TrainError::Policy(p) => p,
                other => PolicyError::Config(other.to_string()),
            })?;
            trainer.run()?;
            let rows = sweep_granularity(
                &trainer.nets,
                trainer.structure(),
                cmp.scenario,
                cmp.ks,
                cmp.eval_episodes,
                cmp.eval_seeds,
                false,
            )?;
            Ok(ComparisonRun {
                backbone: bcfg.backbone,
                seed,
                rows,
            })
        })
        .collect()
}

/// Seed-averaged rows, one per `(backbone, k)` in input order.
pub fn average_runs(runs: &[ComparisonRun]) -> Vec<SweepRow> {
    let mut out: Vec<(SweepRow, usize)> = Vec::new();
    for run in runs {
        for row in &run.rows {
            match out.iter_mut().find(|(r, _)| r.backbone == row.backbone && r.k == row.k) {
                Some((acc, n)) => {
                    acc.reward += row.reward;
                    acc.served += row.served;
                    acc.cost += row.cost;
                    *n += 1;
                }
                None => out.push((row.clone(), 1)),
            }
        }
    }
    out.into_iter()
        .map(|(mut r, n)| {
            let n = n as f64;
            r.reward /= n;
            r.served /= n;
            r.cost /= n;
            r
        })
        .collect()
}
