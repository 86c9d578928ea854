//! Actor and critic networks over a graph backbone, the Dirichlet action
//! head and the advantage actor-critic update.

mod a2c;
pub mod dirichlet;

use rand::Rng;
use thiserror::Error;

use crate::env::EnvError;
use crate::gnn::{Backbone, BackboneConfig, BackboneInputs, GraphTensors, Linear, Mlp, SampleMode};
use crate::scalar::Scalar;
use crate::tapegrad::{Bound, LoadError, ParamStore, Tape, TapeError, Tensor, Var};

pub use a2c::{a2c_loss, a2c_update, discounted_returns, LossReport, StepRecord, TrainConfig, Trajectory};

/// Widths of the dense trunk after the graph layer.
pub const TRUNK: [usize; 3] = [32, 32, 32];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("non-finite {what}")]
    NonFinite { what: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn trunk_width(cfg: &BackboneConfig, backbone: &Backbone, d_in: usize) -> usize {
    backbone.d_out() + if cfg.feature_skip { d_in } else { 0 }
}

fn embed<S: Scalar>(
    backbone: &Backbone,
    skip: bool,
    tape: &mut Tape<S>,
    bound: &Bound,
    inputs: &BackboneInputs<'_, S>,
) -> Result<Var, TapeError> {
    let h = backbone.forward(tape, bound, inputs)?;
    if skip {
        tape.concat_cols(h, inputs.features)
    } else {
        Ok(h)
    }
}

/// Per-node outputs `o ∈ (0, 1)` and concentrations `c = 1 + κ o`.
#[derive(Debug, Clone)]
pub struct ActorNet {
    pub backbone: Backbone,
    pub trunk: Mlp,
    pub head: Linear,
    pub skip: bool,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ActorOutput {
    pub o: Var,
    pub concentration: Var,
}

impl ActorNet {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        cfg: &BackboneConfig,
        d_in: usize,
        kappa: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let backbone = Backbone::new(store, "actor", cfg, d_in, rng);
        let trunk = Mlp::new(store, "actor.trunk", trunk_width(cfg, &backbone, d_in), &TRUNK, rng);
        let head = Linear::new(store, "actor.head", TRUNK[2], 1, rng);
        Self {
            backbone,
            trunk,
            head,
            skip: cfg.feature_skip,
            kappa,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        inputs: &BackboneInputs<'_, S>,
    ) -> Result<ActorOutput, TapeError> {
        let h = embed(&self.backbone, self.skip, tape, bound, inputs)?;
        let h = self.trunk.forward(tape, bound, h)?;
        let z = self.head.forward(tape, bound, h)?;
        let o = tape.sigmoid(z)?;
        let scaled = tape.scale(o, S::lit(self.kappa))?;
        let concentration = tape.add_scalar(scaled, S::one())?;
        Ok(ActorOutput { o, concentration })
    }
}

/// Graph-level state value: trunk, sum-pool, scalar head.
#[derive(Debug, Clone)]
pub struct CriticNet {
    pub backbone: Backbone,
    pub trunk: Mlp,
    pub head: Linear,
    pub skip: bool,
}

impl CriticNet {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &BackboneConfig, d_in: usize, rng: &mut impl Rng) -> Self {
        let backbone = Backbone::new(store, "critic", cfg, d_in, rng);
        let trunk = Mlp::new(store, "critic.trunk", trunk_width(cfg, &backbone, d_in), &TRUNK, rng);
        let head = Linear::new(store, "critic.head", TRUNK[2], 1, rng);
        Self {
            backbone,
            trunk,
            head,
            skip: cfg.feature_skip,
        }
    }

    /// `[1, 1]` value.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        inputs: &BackboneInputs<'_, S>,
    ) -> Result<Var, TapeError> {
        let h = embed(&self.backbone, self.skip, tape, bound, inputs)?;
        let h = self.trunk.forward(tape, bound, h)?;
        let pooled = tape.sum_pool(h)?;
        self.head.forward(tape, bound, pooled)
    }
}

/// Actor and critic sharing one parameter store (separate weights).
#[derive(Debug, Clone)]
pub struct PolicyNets<S> {
    pub store: ParamStore<S>,
    pub actor: ActorNet,
    pub critic: CriticNet,
    pub backbone: BackboneConfig,
}

/// What the policy sees at one step.
pub struct Observation<'a, S> {
    pub graph: &'a GraphTensors<S>,
    pub features: &'a Tensor<S>,
    /// Refined structure for the Pro-GNN backbone.
    pub structure: Option<&'a Tensor<S>>,
    pub sample: SampleMode<'a, S>,
}

impl<S: Scalar> PolicyNets<S> {
    pub fn new(cfg: &BackboneConfig, d_in: usize, kappa: f64, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let actor = ActorNet::new(&mut store, cfg, d_in, kappa, rng);
        let critic = CriticNet::new(&mut store, cfg, d_in, rng);
        Self {
            store,
            actor,
            critic,
            backbone: cfg.clone(),
        }
    }

    /// Records both networks on `tape` for one observation.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        obs: &Observation<'_, S>,
        structure: Option<Var>,
    ) -> Result<(ActorOutput, Var), TapeError> {
        let features = tape.constant(obs.features.clone());
        let inputs = BackboneInputs {
            features,
            raw_features: obs.features,
            graph: obs.graph,
            structure,
            sample: obs.sample,
        };
        let actor = self.actor.forward(tape, bound, &inputs)?;
        let value = self.critic.forward(tape, bound, &inputs)?;
        Ok((actor, value))
    }

    /// Concentrations and value without gradient tracking.
    pub fn evaluate(&self, obs: &Observation<'_, S>) -> Result<(Vec<f64>, f64), PolicyError> {
        let mut tape = Tape::new();
        let bound = self.store.bind_frozen(&mut tape);
        let structure = obs.structure.map(|s| tape.constant(s.clone()));
        let (actor, value) = self.forward(&mut tape, &bound, obs, structure)?;
        let c: Vec<f64> = tape.value(actor.concentration).data().iter().map(|x| x.as_f64()).collect();
        let v = tape.value(value).item().as_f64();
        if !c.iter().all(|x| x.is_finite()) || !v.is_finite() {
            return Err(PolicyError::NonFinite {
                what: "policy output".into(),
            });
        }
        Ok((c, v))
    }
}
