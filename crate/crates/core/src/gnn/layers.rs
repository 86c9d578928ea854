use rand::Rng;

use crate::scalar::Scalar;
use crate::tapegrad::{Bound, ParamId, ParamStore, Tape, TapeError, Tensor, Var};

/// Glorot-uniform initialized matrix.
pub fn glorot<S: Scalar>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| S::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

/// Dense affine layer applied row-wise: `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), glorot(rng, d_in, d_out));
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(1, d_out));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var, TapeError> {
        let h = tape.matmul(x, bound.var(self.weight))?;
        tape.add_row(h, bound.var(self.bias))
    }
}

/// Graph convolution `relu(P X W)`.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), glorot(rng, d_in, d_out));
        Self { weight, d_in, d_out }
    }

    /// `propagation` is an `n × n` normalized adjacency already on the tape.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        bound: &Bound,
        propagation: Var,
        x: Var,
    ) -> Result<Var, TapeError> {
        let px = tape.matmul(propagation, x)?;
        let h = tape.matmul(px, bound.var(self.weight))?;
        tape.relu(h)
    }
}

/// Stack of `Linear + relu` layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        d_in: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = d_in;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), prev, w, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, bound: &Bound, x: Var) -> Result<Var, TapeError> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(tape, bound, h)?;
            h = tape.relu(z)?;
        }
        Ok(h)
    }

    pub fn d_out(&self) -> Option<usize> {
        self.layers.last().map(|l| l.d_out)
    }
}
