//! Analytic gradients versus central finite differences on small random
//! networks, for each training loss.
//!
//! ```
//! use biasaware::gradcheck::{check, LossCase};
//!
//! let r = check(LossCase::NegSqPearson, 7).unwrap();
//! assert!(r.rel_error <= 1e-4, "{r:?}");
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::{adversarial_grad, bce, cross_entropy, neg_sq_pearson, LossResult};
use crate::matrix::Matrix;
use crate::nn::{backward, finite_difference_grad, forward, Activation, Gradients, LayerSpec, ParamSet};

/// Step used for the central differences.
pub const FD_EPSILON: f64 = 1e-5;
/// Draws with a ReLU pre-activation closer than this to zero are skipped.
pub const KINK_MARGIN: f64 = 1e-3;
/// Draws whose analytic gradient norm is below this are skipped.
pub const MIN_GRAD_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossCase {
    /// Softmax cross-entropy on a 2-logit output.
    CrossEntropy,
    /// −r² against a continuous target on a 1-unit output.
    NegSqPearson,
    /// BCE against 0/1 targets on a 1-logit output.
    Bce,
    /// `L_br = −λ·L_bp` (−r²) through a frozen bias head into the encoder.
    Adversarial { lambda: f64 },
}

impl LossCase {
    pub const ALL: [LossCase; 4] = [
        LossCase::CrossEntropy,
        LossCase::NegSqPearson,
        LossCase::Bce,
        LossCase::Adversarial { lambda: 5.0 },
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossCase::CrossEntropy => "cross_entropy",
            LossCase::NegSqPearson => "neg_sq_pearson",
            LossCase::Bce => "bce",
            LossCase::Adversarial { .. } => "adversarial",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub case: LossCase,
    pub seed: u64,
    /// Layer sizes of the differentiated network, input first.
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub rel_error: f64,
    /// `‖analytic‖`.
    pub grad_norm: f64,
}

fn norm(g: &Gradients) -> f64 {
    g.values().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative error between two gradient sets.
pub fn relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    for (a, n) in analytic.values().zip(numeric.values()) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let scale = na.sqrt().max(nn.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

fn random_net(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, out_act: Activation) -> Result<ParamSet> {
    let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
    let depth = rng.random_range(2..=3);
    let mut dims = vec![in_dim];
    for _ in 1..depth {
        dims.push(rng.random_range(2..=6));
    }
    dims.push(out_dim);
    let specs: Vec<LayerSpec> = (0..depth)
        .map(|l| {
            let act = if l + 1 == depth { out_act } else { acts[rng.random_range(0..acts.len())] };
            LayerSpec::new(dims[l], dims[l + 1], act)
        })
        .collect();
    let mut layers = ParamSet::init(&specs, rng.random())?.layers().to_vec();
    // Zero biases would put a ReLU fed by dead units exactly on its kink.
    for layer in &mut layers {
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    ParamSet::from_layers(&specs, layers)
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn describe(net: &ParamSet) -> (Vec<usize>, Vec<Activation>) {
    let mut dims = vec![net.in_dim()];
    dims.extend(net.specs().iter().map(|s| s.out_dim));
    (dims, net.specs().iter().map(|s| s.activation).collect())
}

/// Builds a random 2–3 layer network and batch from `seed` and compares the
/// analytic gradient of `case` with finite differences.
///
/// Draws where the loss is not differentiable or the comparison is
/// meaningless are redrawn from the same stream: a ReLU pre-activation within
/// [`KINK_MARGIN`] of zero, a vanishing gradient (below [`MIN_GRAD_NORM`]),
/// or a constant network output that leaves −r² undefined.
pub fn check(case: LossCase, seed: u64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        match check_once(case, seed, &mut rng) {
            Ok(Some(r)) => return Ok(r),
            Ok(None) | Err(Error::DegenerateBatch(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numeric(format!("no usable draw for seed {seed}")))
}

/// Smallest `|z|` over the pre-activations of the ReLU layers.
fn relu_margin(net: &ParamSet, acts: &[Matrix]) -> f64 {
    let mut margin = f64::INFINITY;
    for (l, (spec, layer)) in net.specs().iter().zip(net.layers()).enumerate() {
        if spec.activation != Activation::Relu {
            continue;
        }
        let x = &acts[l];
        for r in 0..x.rows() {
            for o in 0..spec.out_dim {
                let z = layer.weight.row(o).iter().zip(x.row(r)).fold(layer.bias[o], |a, (w, v)| a + w * v);
                margin = margin.min(z.abs());
            }
        }
    }
    margin
}

fn check_once(case: LossCase, seed: u64, rng: &mut ChaCha8Rng) -> Result<Option<GradCheck>> {
    let in_dim = rng.random_range(2..=5);
    let batch = rng.random_range(6..=12);
    let x = normal_matrix(rng, batch, in_dim);
    let labels: Vec<u8> = (0..batch).map(|i| (i % 2) as u8).collect();
    let target: Vec<f64> = (0..batch).map(|_| rng.sample(StandardNormal)).collect();

    let loss_of = |out: &Matrix| -> Result<LossResult> {
        match case {
            LossCase::CrossEntropy => cross_entropy(out, &labels),
            LossCase::NegSqPearson | LossCase::Adversarial { .. } => neg_sq_pearson(out.as_slice(), &target),
            LossCase::Bce => bce(out.as_slice(), &labels),
        }
    };

    let (net, analytic, numeric) = match case {
        LossCase::Adversarial { lambda } => {
            let feat_dim = rng.random_range(2..=5);
            let encoder = random_net(rng, in_dim, feat_dim, Activation::Tanh)?;
            let head = ParamSet::init(&[LayerSpec::new(encoder.out_dim(), 1, Activation::Identity)], rng.random())?;
            let l_br = |enc: &ParamSet| -> Result<f64> {
                let feats = forward(enc, &x)?.pop().expect("output");
                let out = forward(&head, &feats)?.pop().expect("output");
                Ok(-lambda * loss_of(&out)?.value)
            };
            let enc_acts = forward(&encoder, &x)?;
            let head_acts = forward(&head, enc_acts.last().expect("output"))?;
            let g_out = adversarial_grad(&loss_of(head_acts.last().expect("output"))?, lambda)?;
            let (d_feats, _) = backward(&head, &head_acts, &g_out)?;
            let (_, analytic) = backward(&encoder, &enc_acts, &d_feats)?;
            if relu_margin(&encoder, &enc_acts) < KINK_MARGIN || norm(&analytic) < MIN_GRAD_NORM {
                return Ok(None);
            }
            let numeric = finite_difference_grad(|p| l_br(p).unwrap_or(f64::NAN), &encoder, FD_EPSILON)?;
            (encoder, analytic, numeric)
        }
        _ => {
            let out_dim = if case == LossCase::CrossEntropy { 2 } else { 1 };
            let net = random_net(rng, in_dim, out_dim, Activation::Identity)?;
            let value = |p: &ParamSet| -> Result<f64> { Ok(loss_of(&forward(p, &x)?.pop().expect("output"))?.value) };
            let acts = forward(&net, &x)?;
            let (_, analytic) = backward(&net, &acts, &loss_of(acts.last().expect("output"))?.grad)?;
            if relu_margin(&net, &acts) < KINK_MARGIN || norm(&analytic) < MIN_GRAD_NORM {
                return Ok(None);
            }
            let numeric = finite_difference_grad(|p| value(p).unwrap_or(f64::NAN), &net, FD_EPSILON)?;
            (net, analytic, numeric)
        }
    };
    let (dims, activations) = describe(&net);
    Ok(Some(GradCheck {
        case,
        seed,
        dims,
        activations,
        rel_error: relative_error(&analytic, &numeric),
        grad_norm: norm(&analytic),
    }))
}
