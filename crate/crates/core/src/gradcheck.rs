//! Central finite-difference checks of tape gradients.
//!
//! Each check builds a scalar loss from a set of input tensors on a fresh
//! tape, differentiates it once with [`Tape::backward`], and compares every
//! input coordinate against `(f(x + ε) − f(x − ε)) / 2ε` evaluated with
//! forward passes only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tapegrad::{Tape, TapeError, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so gradients near zero are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub component: &'static str,
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of `f` w.r.t. every input against central
/// differences with step `eps`.
pub fn check<F>(
    component: &'static str,
    name: impl Into<String>,
    inputs: &[Tensor<f64>],
    eps: f64,
    f: F,
) -> Result<CheckResult, TapeError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TapeError>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (idx, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        for k in 0..inputs[idx].len() {
            let orig = inputs[idx].data()[k];
            probe[idx].data_mut()[k] = orig + eps;
            let up = eval(&probe)?;
            probe[idx].data_mut()[k] = orig - eps;
            let down = eval(&probe)?;
            probe[idx].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
            coordinates += 1;
        }
    }
    Ok(CheckResult {
        component,
        name: name.into(),
        max_rel_error: worst,
        coordinates,
    })
}

/// Uniform random matrix in `[lo, hi)`.
pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

/// Random matrix whose entries stay at least `gap` away from zero, so
/// rectifier kinks are not straddled by the finite-difference stencil.
pub fn random_tensor_off_zero(rng: &mut impl Rng, rows: usize, cols: usize, gap: f64) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let x: f64 = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// coordinate contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var, TapeError> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

const SHAPES: [(usize, usize); 3] = [(1, 1), (3, 2), (4, 5)];

/// Finite-difference checks of every differentiable tape op.
pub fn ops_suite(seed: u64) -> Result<Vec<CheckResult>, TapeError> {
    use crate::tapegrad::Activation;
    use std::sync::Arc;

    let mut rng = rng(seed);
    let mut out = Vec::new();
    let c = "ops";

    for (i, &(m, k)) in SHAPES.iter().enumerate() {
        let n = i + 2;
        let a = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let b = random_tensor(&mut rng, k, n, -1.0, 1.0);
        let w = random_tensor(&mut rng, m, n, -1.0, 1.0);
        out.push(check(c, format!("matmul {m}x{k}·{k}x{n}"), &[a, b], FD_STEP, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, &w)
        })?);
    }

    let activations = [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Sigmoid,
        Activation::Exp,
        Activation::Log,
        Activation::Tanh,
        Activation::LogGamma,
        Activation::Digamma,
    ];
    for act in activations {
        for &(m, k) in &SHAPES {
            let x = match act {
                Activation::Log | Activation::LogGamma | Activation::Digamma => {
                    random_tensor(&mut rng, m, k, 0.2, 3.0)
                }
                _ => random_tensor_off_zero(&mut rng, m, k, 1e-3),
            };
            let w = random_tensor(&mut rng, m, k, -1.0, 1.0);
            out.push(check(c, format!("{} {m}x{k}", act.name()), &[x], FD_STEP, |t, v| {
                let y = t.activation(v[0], act)?;
                weighted_sum(t, y, &w)
            })?);
        }
    }

    for (i, &(m, k)) in SHAPES.iter().enumerate() {
        let x = random_tensor(&mut rng, m, k + 1, -2.0, 2.0);
        let w = random_tensor(&mut rng, m, k + 1, -1.0, 1.0);
        let mask: Vec<bool> = (0..m * (k + 1)).map(|j| j % (k + 1) == 0 || (j + i) % 3 != 0).collect();
        out.push(check(c, format!("row_softmax {m}x{}", k + 1), std::slice::from_ref(&x), FD_STEP, |t, v| {
            let y = t.row_softmax(v[0], None)?;
            weighted_sum(t, y, &w)
        })?);
        out.push(check(c, format!("row_softmax masked {m}x{}", k + 1), &[x], FD_STEP, |t, v| {
            let y = t.row_softmax(v[0], Some(&mask))?;
            weighted_sum(t, y, &w)
        })?);
    }

    for &(m, k) in &SHAPES {
        let x = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let w = random_tensor(&mut rng, 1, k, -1.0, 1.0);
        out.push(check(c, format!("sum_pool·dot {m}x{k}"), &[x], FD_STEP, |t, v| {
            let y = t.sum_pool(v[0])?;
            weighted_sum(t, y, &w)
        })?);
    }

    for &(m, k) in &SHAPES {
        let x = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let y = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let bias = random_tensor(&mut rng, 1, k, -1.0, 1.0);
        let w = random_tensor(&mut rng, m, k, -1.0, 1.0);
        out.push(check(c, format!("add/sub/mul/scale {m}x{k}"), &[x, y, bias], FD_STEP, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(v[0], v[1])?;
            let p = t.mul(s, d)?;
            let q = t.scale(p, 0.7)?;
            let r = t.add_scalar(q, 0.3)?;
            let out = t.add_row(r, v[2])?;
            weighted_sum(t, out, &w)
        })?);
    }

    for &(m, k) in &SHAPES {
        let col = random_tensor(&mut rng, m, 1, -1.0, 1.0);
        let row = random_tensor(&mut rng, 1, k, -1.0, 1.0);
        let mat = random_tensor(&mut rng, m + 1, k, -1.0, 1.0);
        let w = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let w2 = random_tensor(&mut rng, k, m, -1.0, 1.0);
        out.push(check(c, format!("outer_add/transpose/slice {m}x{k}"), &[col, row, mat], FD_STEP, |t, v| {
            let o = t.outer_add(v[0], v[1])?;
            let s = t.slice_rows(v[2], 1, m)?;
            let sum = t.add(o, s)?;
            let tr = t.transpose(sum)?;
            let first = weighted_sum(t, sum, &w)?;
            let second = weighted_sum(t, tr, &w2)?;
            t.add(first, second)
        })?);
    }

    for &(m, k) in &SHAPES {
        let a = random_tensor(&mut rng, m, k, -1.0, 1.0);
        let b = random_tensor(&mut rng, m, 2, -1.0, 1.0);
        let w = random_tensor(&mut rng, m, k + 2, -1.0, 1.0);
        out.push(check(c, format!("concat_cols {m}x{k}"), &[a, b], FD_STEP, |t, v| {
            let cat = t.concat_cols(v[0], v[1])?;
            let sq = t.mul(cat, cat)?;
            weighted_sum(t, sq, &w)
        })?);
    }

    for n in [2usize, 3, 4] {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let pairs = Arc::new(pairs);
        let vals = random_tensor(&mut rng, pairs.len(), 1, 0.1, 1.0);
        let w = random_tensor(&mut rng, n, n, -1.0, 1.0);
        out.push(check(c, format!("scatter+normalize_adjacency n={n}"), &[vals], FD_STEP, |t, v| {
            let m = t.scatter_symmetric(v[0], pairs.clone(), n)?;
            let p = t.normalize_adjacency(m)?;
            weighted_sum(t, p, &w)
        })?);
    }

    Ok(out)
}

/// A deliberately wrong backward rule (d/dx x² reported as x instead of 2x),
/// used as a negative control for the checker.
pub fn faulty_square_check() -> Result<CheckResult, TapeError> {
    use std::sync::Arc;
    let x = Tensor::from_rows(&[&[0.5, -1.5, 2.0]])?;
    check("ops", "faulty_square", &[x], FD_STEP, |t, v| {
        let value = t.value(v[0]).map(|a| a * a);
        let y = t.custom(
            "faulty_square",
            &[v[0]],
            value,
            Arc::new(|ins, _out, g| vec![ins[0].zip_map(g, |a, gi| a * gi)]),
        )?;
        t.sum(y)
    })
}

/// Finite-difference checks of every graph backbone on random 2×2-grid
/// instances. PTDNet is checked deterministically and with frozen noise.
pub fn backbones_suite(seed: u64) -> Result<Vec<CheckResult>, TapeError> {
    use crate::gnn::{Backbone, BackboneConfig, BackboneInputs, BackboneKind, GraphTensors, SampleMode};
    use crate::graph::build_grid;
    use crate::tapegrad::{Bound, ParamStore};

    let graph = build_grid(2, 1.0).expect("2x2 grid");
    let gt = GraphTensors::<f64>::new(&graph).expect("grid tensors");
    let mut rng = rng(seed);
    let mut out = Vec::new();
    let d_in = 4;

    for kind in BackboneKind::ALL {
        let cfg = BackboneConfig {
            backbone: kind,
            gat_heads: 2,
            hidden: 3,
            ptdnet: crate::gnn::PtdNetConfig {
                hidden: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let backbone = Backbone::new(&mut store, "bb", &cfg, d_in, &mut rng);
        let x = random_tensor(&mut rng, gt.n, d_in, -1.0, 1.0);
        let np = store.len();
        let noise = crate::gnn::ptdnet::draw_edge_noise(&mut rng, gt.edges.len());

        let modes: Vec<(&str, bool)> = match kind {
            BackboneKind::Ptdnet => vec![("deterministic", false), ("frozen-noise", true)],
            _ => vec![("", false)],
        };
        for (label, stochastic) in modes {
            let mut inputs: Vec<Tensor<f64>> = store.values().to_vec();
            let with_features = kind != BackboneKind::Ptdnet;
            if with_features {
                inputs.push(x.clone());
            }
            let with_structure = kind == BackboneKind::Prognn;
            if with_structure {
                // A perturbed structure keeps the check away from the 0/1 corners.
                let mut s = Tensor::zeros(gt.n, gt.n);
                for &(i, j) in gt.edges.iter() {
                    let w = rng.random_range(0.3..0.9);
                    s.set(i, j, w);
                    s.set(j, i, w);
                }
                inputs.push(s);
            }
            let name = if label.is_empty() {
                kind.to_string()
            } else {
                format!("{kind} {label}")
            };
            let res = check("backbones", name, &inputs, FD_STEP, |t, v| {
                let bound = Bound::from_vars(v[..np].to_vec());
                let features = if with_features { v[np] } else { t.constant(x.clone()) };
                let structure = with_structure.then(|| v[v.len() - 1]);
                let sample = if stochastic {
                    SampleMode::Stochastic {
                        noise: &noise,
                        temperature: 0.7,
                    }
                } else {
                    SampleMode::Deterministic
                };
                let raw = t.value(features).clone();
                let emb = backbone.forward(
                    t,
                    &bound,
                    &BackboneInputs {
                        features,
                        raw_features: &raw,
                        graph: &gt,
                        structure,
                        sample,
                    },
                )?;
                t.sum(emb)
            })?;
            out.push(res);
        }
    }
    Ok(out)
}

/// Finite-difference checks of the actor concentrations, the critic value and
/// the Dirichlet log-density and entropy.
pub fn policy_suite(seed: u64) -> Result<Vec<CheckResult>, TapeError> {
    use crate::gnn::{BackboneConfig, BackboneInputs, BackboneKind, GraphTensors, SampleMode};
    use crate::graph::build_grid;
    use crate::policy::dirichlet::{tape_entropy, tape_log_density};
    use crate::policy::{ActorNet, CriticNet};
    use crate::tapegrad::{Bound, ParamStore};

    let graph = build_grid(2, 1.0).expect("2x2 grid");
    let gt = GraphTensors::<f64>::new(&graph).expect("grid tensors");
    let mut rng = rng(seed);
    let mut out = Vec::new();
    let d_in = 4;

    for kind in [BackboneKind::Gcn, BackboneKind::Gat] {
        let cfg = BackboneConfig {
            backbone: kind,
            hidden: 3,
            ..Default::default()
        };
        let mut store = ParamStore::<f64>::new();
        let actor = ActorNet::new(&mut store, &cfg, d_in, 10.0, &mut rng);
        let critic = CriticNet::new(&mut store, &cfg, d_in, &mut rng);
        let x = random_tensor(&mut rng, gt.n, d_in, 0.0, 1.0);
        let w = random_tensor(&mut rng, gt.n, 1, -1.0, 1.0);
        let inputs: Vec<Tensor<f64>> = store.values().to_vec();
        let np = inputs.len();
        let run = |t: &mut Tape<f64>, v: &[Var], value: bool| -> Result<Var, TapeError> {
            let bound = Bound::from_vars(v[..np].to_vec());
            let features = t.constant(x.clone());
            let bi = BackboneInputs {
                features,
                raw_features: &x,
                graph: &gt,
                structure: None,
                sample: SampleMode::Deterministic,
            };
            if value {
                critic.forward(t, &bound, &bi)
            } else {
                let c = actor.forward(t, &bound, &bi)?.concentration;
                weighted_sum(t, c, &w)
            }
        };
        out.push(check("policy", format!("actor {kind}"), &inputs, FD_STEP, |t, v| run(t, v, false))?);
        out.push(check("policy", format!("critic {kind}"), &inputs, FD_STEP, |t, v| run(t, v, true))?);
    }

    for n in [2usize, 3, 5] {
        let c = random_tensor(&mut rng, n, 1, 1.2, 8.0);
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = a.iter().sum();
        a.iter_mut().for_each(|x| *x /= total);
        out.push(check("policy", format!("dirichlet log-density n={n}"), std::slice::from_ref(&c), FD_STEP, |t, v| {
            tape_log_density(t, v[0], &a)
        })?);
        out.push(check("policy", format!("dirichlet entropy n={n}"), &[c], FD_STEP, |t, v| {
            tape_entropy(t, v[0])
        })?);
    }
    Ok(out)
}
