use rand::Rng;

use crate::scalar::Scalar;
use crate::tapegrad::{Activation, Bound, ParamId, ParamStore, Tape, TapeError, Var, DEFAULT_LEAKY_SLOPE};

use super::layers::glorot;

#[derive(Debug, Clone)]
pub struct GatHead {
    pub weight: ParamId,
    /// `[2 d_out, 1]`: first half scores the center node, second half the neighbor.
    pub attention: ParamId,
}

/// Multi-head graph attention with head averaging and relu output.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
    pub d_in: usize,
    pub d_out: usize,
    pub slope: f64,
}

/// Output embeddings plus one `n × n` attention matrix per head.
pub struct GatOutput {
    pub embeddings: Var,
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let heads = (0..heads.max(1))
            .map(|k| GatHead {
                weight: store.insert(format!("{name}.head{k}.weight"), glorot(rng, d_in, d_out)),
                attention: store.insert(format!("{name}.head{k}.attention"), glorot(rng, 2 * d_out, 1)),
            })
            .collect();
        Self {
            heads,
            d_in,
            d_out,
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// `mask[i * n + j]` marks `j ∈ N(i)`; the self-loop must be included.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        mask: &[bool],
        x: Var,
    ) -> Result<GatOutput, TapeError> {
        let d = self.d_out;
        let mut attention = Vec::with_capacity(self.heads.len());
        let mut total: Option<Var> = None;
        for head in &self.heads {
            let wh = tape.matmul(x, bound.var(head.weight))?;
            let a = bound.var(head.attention);
            let a_center = tape.slice_rows(a, 0, d)?;
            let a_neighbor = tape.slice_rows(a, d, d)?;
            let s_center = tape.matmul(wh, a_center)?;
            let s_neighbor = tape.matmul(wh, a_neighbor)?;
            let s_neighbor = tape.transpose(s_neighbor)?;
            let logits = tape.outer_add(s_center, s_neighbor)?;
            let e = tape.activation(logits, Activation::LeakyRelu(self.slope))?;
            let alpha = tape.row_softmax(e, Some(mask))?;
            attention.push(alpha);
            let agg = tape.matmul(alpha, wh)?;
            total = Some(match total {
                Some(t) => tape.add(t, agg)?,
                None => agg,
            });
        }
        let total = total.expect("at least one head");
        let mean = tape.scale(total, S::one() / S::lit(self.heads.len() as f64))?;
        Ok(GatOutput {
            embeddings: tape.relu(mean)?,
            attention,
        })
    }
}
