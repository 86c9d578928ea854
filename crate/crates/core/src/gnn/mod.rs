//! Graph backbones producing per-node embeddings: GCN, GAT, GCN over a
//! refined structure (Pro-GNN) and GCN over a sampled subgraph (PTDNet).

pub mod gat;
pub mod layers;
pub mod prognn;
pub mod ptdnet;
pub mod svd;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError};
use crate::scalar::Scalar;
use crate::tapegrad::{Bound, ParamStore, Tape, TapeError, Tensor, Var};

pub use gat::{GatLayer, GatOutput};
pub use layers::{GcnLayer, Linear, Mlp};
pub use prognn::{refine_step, ProGnnConfig, ProGnnState};
pub use ptdnet::{PtdNetConfig, PtdNetSampler, SampleMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gcn,
    Gat,
    Prognn,
    Ptdnet,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 4] = [
        BackboneKind::Gcn,
        BackboneKind::Gat,
        BackboneKind::Prognn,
        BackboneKind::Ptdnet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Gat => "gat",
            BackboneKind::Prognn => "prognn",
            BackboneKind::Ptdnet => "ptdnet",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown backbone {s:?} (expected gcn, gat, prognn or ptdnet)"))
    }
}

/// Backbone selection and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub backbone: BackboneKind,
    pub gat_heads: usize,
    /// Embedding width of the graph layer.
    pub hidden: usize,
    /// Append the raw node features to the embedding before the dense trunk.
    pub feature_skip: bool,
    pub prognn: ProGnnConfig,
    pub ptdnet: PtdNetConfig,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Gcn,
            gat_heads: 1,
            hidden: 32,
            feature_skip: true,
            prognn: ProGnnConfig::default(),
            ptdnet: PtdNetConfig::default(),
        }
    }
}

impl BackboneConfig {
    /// Messages start with the offending field name.
    pub fn validate(&self) -> Result<(), String> {
        let p = &self.prognn;
        let t = &self.ptdnet;
        if self.hidden == 0 {
            return Err("hidden must be at least 1".into());
        }
        if self.gat_heads == 0 {
            return Err("gat_heads must be at least 1".into());
        }
        if !(p.alpha >= 0.0 && p.alpha.is_finite()) {
            return Err("alpha must be nonnegative".into());
        }
        if !(p.beta >= 0.0 && p.beta.is_finite()) {
            return Err("beta must be nonnegative".into());
        }
        if !(p.eta > 0.0 && p.eta.is_finite()) {
            return Err("eta must be positive".into());
        }
        if t.hidden == 0 {
            return Err("hidden must be at least 1 for the edge sampler".into());
        }
        if !(t.tau_start > 0.0 && t.tau_start.is_finite()) {
            return Err("tau_start must be positive".into());
        }
        if !(t.tau_end > 0.0 && t.tau_end.is_finite()) {
            return Err("tau_end must be positive".into());
        }
        Ok(())
    }
}

/// Per-graph constants shared by every forward pass on that graph.
#[derive(Debug, Clone)]
pub struct GraphTensors<S> {
    pub n: usize,
    pub adjacency: Tensor<S>,
    pub propagation: Tensor<S>,
    pub mask: Vec<bool>,
    pub edges: Arc<Vec<(usize, usize)>>,
}

impl<S: Scalar> GraphTensors<S> {
    pub fn new(graph: &Graph) -> Result<Self, GraphError> {
        Ok(Self {
            n: graph.n(),
            adjacency: graph.adjacency().cast(),
            propagation: graph.propagation()?.into_matrix(),
            mask: graph.self_loop_mask(),
            edges: Arc::new(graph.edges().to_vec()),
        })
    }
}

/// Inputs for one backbone evaluation.
pub struct BackboneInputs<'a, S> {
    /// Node features already recorded on the tape.
    pub features: Var,
    /// Same features as a plain tensor (the edge sampler reads them directly).
    pub raw_features: &'a Tensor<S>,
    pub graph: &'a GraphTensors<S>,
    /// Refined structure leaf; `None` falls back to the physical adjacency.
    pub structure: Option<Var>,
    pub sample: SampleMode<'a, S>,
}

#[derive(Debug, Clone)]
pub enum Backbone {
    Gcn(GcnLayer),
    Gat(GatLayer),
    ProGnn(GcnLayer),
    PtdNet { sampler: PtdNetSampler, gcn: GcnLayer },
}

impl Backbone {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cfg: &BackboneConfig,
        d_in: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.hidden;
        match cfg.backbone {
            BackboneKind::Gcn => Backbone::Gcn(GcnLayer::new(store, &format!("{name}.gcn"), d_in, d, rng)),
            BackboneKind::Gat => {
                Backbone::Gat(GatLayer::new(store, &format!("{name}.gat"), d_in, d, cfg.gat_heads, rng))
            }
            BackboneKind::Prognn => {
                Backbone::ProGnn(GcnLayer::new(store, &format!("{name}.prognn"), d_in, d, rng))
            }
            BackboneKind::Ptdnet => {
                let gcn = GcnLayer::new(store, &format!("{name}.ptdnet.gcn"), d_in, d, rng);
                let sampler =
                    PtdNetSampler::new(store, &format!("{name}.ptdnet.sampler"), d_in, cfg.ptdnet.hidden, rng);
                Backbone::PtdNet { sampler, gcn }
            }
        }
    }

    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Gcn(_) => BackboneKind::Gcn,
            Backbone::Gat(_) => BackboneKind::Gat,
            Backbone::ProGnn(_) => BackboneKind::Prognn,
            Backbone::PtdNet { .. } => BackboneKind::Ptdnet,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Backbone::Gcn(l) | Backbone::ProGnn(l) => l.d_out,
            Backbone::Gat(l) => l.d_out,
            Backbone::PtdNet { gcn, .. } => gcn.d_out,
        }
    }

    /// Per-node embeddings `[n, d_out]`.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        inputs: &BackboneInputs<'_, S>,
    ) -> Result<Var, TapeError> {
        let x = inputs.features;
        match self {
            Backbone::Gcn(layer) => {
                let p = tape.constant(inputs.graph.propagation.clone());
                layer.forward(tape, bound, p, x)
            }
            Backbone::Gat(layer) => Ok(layer.forward(tape, bound, &inputs.graph.mask, x)?.embeddings),
            Backbone::ProGnn(layer) => {
                let p = match inputs.structure {
                    Some(s) => tape.normalize_adjacency(s)?,
                    None => tape.constant(inputs.graph.propagation.clone()),
                };
                layer.forward(tape, bound, p, x)
            }
            Backbone::PtdNet { sampler, gcn } => {
                let mask = sampler.sample(tape, bound, inputs.raw_features, &inputs.graph.edges, inputs.sample)?;
                let p = tape.normalize_adjacency(mask)?;
                gcn.forward(tape, bound, p, x)
            }
        }
    }
}

/// Direct GCN propagation outside a training context.
pub fn gcn_forward<S: Scalar>(
    propagation: &Tensor<S>,
    x: &Tensor<S>,
    weight: &Tensor<S>,
) -> Result<Tensor<S>, TapeError> {
    let mut tape = Tape::new();
    let p = tape.constant(propagation.clone());
    let xv = tape.constant(x.clone());
    let w = tape.constant(weight.clone());
    let px = tape.matmul(p, xv)?;
    let h = tape.matmul(px, w)?;
    let out = tape.relu(h)?;
    Ok(tape.value(out).clone())
}
