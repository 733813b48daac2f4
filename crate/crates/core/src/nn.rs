//! Fixed-stack dense networks: parameters, forward pass, exact reverse-mode
//! gradients and classic momentum SGD.
//!
//! A network is a list of [`LayerSpec`]s. Each layer computes
//! `a = act(x · Wᵀ + b)` with `W` stored as `out_dim × in_dim`. The forward
//! pass keeps every post-activation so that [`backward`] can run without
//! re-evaluating the activations; every supported activation has a derivative
//! expressible in terms of its own output.

use std::fmt;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative expressed through the post-activation value `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Checks that a layer list is non-empty, has positive dims and chains.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Config("a network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Config(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::Config(format!(
                "layer {i} outputs {} values but layer {} expects {}",
                pair[0].out_dim,
                i + 1,
                pair[1].in_dim
            )));
        }
    }
    Ok(())
}

/// Weight matrix (`out_dim × in_dim`) and bias vector of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(spec: &LayerSpec) -> Self {
        Self {
            weight: Matrix::zeros(spec.out_dim, spec.in_dim),
            bias: vec![0.0; spec.out_dim],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    fn len(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Gradients laid out exactly like the layers of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            layers: params.specs.iter().map(Dense::zeros).collect(),
        }
    }

    /// Every gradient entry in layer order, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }
}

/// Trainable parameters of one network plus their momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    specs: Vec<LayerSpec>,
    layers: Vec<Dense>,
    velocity: Vec<Dense>,
}

impl ParamSet {
    /// Scaled-uniform initialisation: weights ~ U[-s, s] with
    /// `s = sqrt(6 / (in_dim + out_dim))`, zero biases, zero velocity.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Config(format!("bad init bound: {e}")))?;
            let mut layer = Dense::zeros(spec);
            for w in layer.weight.as_mut_slice() {
                *w = dist.sample(&mut rng);
            }
            layers.push(layer);
        }
        Ok(Self {
            specs: specs.to_vec(),
            velocity: specs.iter().map(Dense::zeros).collect(),
            layers,
        })
    }

    /// Assembles a parameter set from explicit layers. Velocity starts at zero.
    pub fn from_layers(specs: &[LayerSpec], layers: Vec<Dense>) -> Result<Self> {
        validate_specs(specs)?;
        if layers.len() != specs.len() {
            return Err(Error::Shape(format!(
                "{} layers supplied for {} specs",
                layers.len(),
                specs.len()
            )));
        }
        for (i, (spec, layer)) in specs.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != (spec.out_dim, spec.in_dim) || layer.bias.len() != spec.out_dim {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {}x{} weights and {} biases",
                    spec.out_dim, spec.in_dim, spec.out_dim
                )));
            }
            layer.weight.ensure_finite("weights")?;
            if layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} bias is not finite")));
            }
        }
        Ok(Self {
            specs: specs.to_vec(),
            velocity: specs.iter().map(Dense::zeros).collect(),
            layers,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn velocity(&self) -> &[Dense] {
        &self.velocity
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Number of trainable scalars.
    pub fn len(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every parameter in layer order, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.values().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }

    /// Zeroes the momentum buffers.
    pub fn reset_velocity(&mut self) {
        self.velocity = self.specs.iter().map(Dense::zeros).collect();
    }

    /// Bitwise equality of the trainable parameters (velocity ignored).
    pub fn same_bits(&self, other: &ParamSet) -> bool {
        self.specs == other.specs
            && self.values().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_grads(&self, grads: &Gradients) -> Result<()> {
        let ok = grads.layers.len() == self.layers.len()
            && grads.layers.iter().zip(&self.layers).all(|(g, p)| {
                g.weight.shape() == p.weight.shape() && g.bias.len() == p.bias.len()
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("gradient layout does not match parameters".into()))
        }
    }

    /// Classic momentum: `v ← μ·v + g`, then `p ← p − lr·v`.
    pub fn sgd_momentum_step(&mut self, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        self.check_grads(grads)?;
        if grads.values().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        for ((layer, vel), grad) in self.layers.iter_mut().zip(&mut self.velocity).zip(&grads.layers) {
            for ((p, v), g) in layer.values_mut().zip(vel.values_mut()).zip(grad.values()) {
                *v = momentum * *v + g;
                *p -= lr * *v;
            }
        }
        if self.values().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("parameters diverged".into()));
        }
        Ok(())
    }
}

/// Evaluates the network. Returns `layers + 1` matrices: the input followed by
/// each layer's post-activation output; the last entry is the network output.
pub fn forward(params: &ParamSet, input: &Matrix) -> Result<Vec<Matrix>> {
    if input.cols() != params.in_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, network expects {}",
            input.cols(),
            params.in_dim()
        )));
    }
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(input.clone());
    for (spec, layer) in params.specs.iter().zip(&params.layers) {
        let x = acts.last().expect("input pushed above");
        let mut out = Matrix::zeros(x.rows(), spec.out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for (o, slot) in or.iter_mut().enumerate() {
                let z = layer.weight.row(o).iter().zip(xr).fold(layer.bias[o], |acc, (w, v)| acc + w * v);
                *slot = spec.activation.apply(z);
            }
        }
        out.ensure_finite("activations")?;
        acts.push(out);
    }
    Ok(acts)
}

/// Reverse-mode pass. `output_grad` is the gradient of a scalar loss with
/// respect to the network output; returns the gradient with respect to the
/// input and to every parameter.
pub fn backward(params: &ParamSet, activations: &[Matrix], output_grad: &Matrix) -> Result<(Matrix, Gradients)> {
    let n_layers = params.layers.len();
    if activations.len() != n_layers + 1 {
        return Err(Error::Shape(format!(
            "expected {} activation matrices, got {}",
            n_layers + 1,
            activations.len()
        )));
    }
    let out = &activations[n_layers];
    if output_grad.shape() != out.shape() {
        return Err(Error::Shape(format!(
            "output gradient is {}x{}, output is {}x{}",
            output_grad.rows(),
            output_grad.cols(),
            out.rows(),
            out.cols()
        )));
    }
    let batch = out.rows();
    let mut grads = Gradients::zeros_like(params);
    let mut upstream = output_grad.clone();
    for l in (0..n_layers).rev() {
        let spec = &params.specs[l];
        let x = &activations[l];
        let a = &activations[l + 1];
        if x.shape() != (batch, spec.in_dim) || a.shape() != (batch, spec.out_dim) {
            return Err(Error::Shape(format!("activation {l} does not match the layer stack")));
        }
        // dL/dz = dL/da ⊙ act'(a)
        let mut dz = upstream;
        for (g, &av) in dz.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *g *= spec.activation.derivative_from_output(av);
        }
        let g = &mut grads.layers[l];
        let mut dx = Matrix::zeros(batch, spec.in_dim);
        let weight = &params.layers[l].weight;
        for r in 0..batch {
            let dzr = dz.row(r);
            let xr = x.row(r);
            for (o, &d) in dzr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                for (gw, &xv) in g.weight.row_mut(o).iter_mut().zip(xr) {
                    *gw += d * xv;
                }
                for (dxv, &w) in dx.row_mut(r).iter_mut().zip(weight.row(o)) {
                    *dxv += d * w;
                }
            }
        }
        upstream = dx;
    }
    Ok((upstream, grads))
}

/// Central finite differences `(f(p+ε) − f(p−ε)) / 2ε` for every parameter.
pub fn finite_difference_grad<F>(loss_fn: F, params: &ParamSet, epsilon: f64) -> Result<Gradients>
where
    F: Fn(&ParamSet) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = params.clone();
    let mut grads = Gradients::zeros_like(params);
    let originals: Vec<f64> = params.values().collect();
    for (k, g) in grads.values_mut().enumerate() {
        let orig = originals[k];
        set_nth(&mut probe, k, orig + epsilon);
        let up = loss_fn(&probe);
        set_nth(&mut probe, k, orig - epsilon);
        let down = loss_fn(&probe);
        set_nth(&mut probe, k, orig);
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::Numeric(format!("loss is not finite around parameter {k}")));
        }
        *g = (up - down) / (2.0 * epsilon);
    }
    Ok(grads)
}

fn set_nth(params: &mut ParamSet, k: usize, v: f64) {
    if let Some(slot) = params.values_mut().nth(k) {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(in_dim: usize, out_dim: usize, act: Activation, w: &[f64], b: &[f64]) -> ParamSet {
        let spec = [LayerSpec::new(in_dim, out_dim, act)];
        let layer = Dense {
            weight: Matrix::from_vec(out_dim, in_dim, w.to_vec()).unwrap(),
            bias: b.to_vec(),
        };
        ParamSet::from_layers(&spec, vec![layer]).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_bias_and_velocity() {
        let spec = [LayerSpec::new(4, 2, Activation::Identity)];
        let a = ParamSet::init(&spec, 7).unwrap();
        let b = ParamSet::init(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert!(a.velocity().iter().all(|l| l.values().all(|&v| v == 0.0)));
        // s = sqrt(6 / (4 + 2)) = 1
        assert!(a.values().all(|w| (-1.0..=1.0).contains(&w)));
        assert_ne!(a, ParamSet::init(&spec, 8).unwrap());
    }

    #[test]
    fn init_rejects_broken_chain() {
        let spec = [LayerSpec::new(4, 3, Activation::Tanh), LayerSpec::new(2, 1, Activation::Identity)];
        assert!(matches!(ParamSet::init(&spec, 0), Err(Error::Config(_))));
        assert!(matches!(ParamSet::init(&[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single(2, 2, Activation::Identity, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        let x = Matrix::from_rows(&[[0.3, -2.0], [5.0, 1.5]]).unwrap();
        let acts = forward(&p, &x).unwrap();
        assert_eq!(acts.last().unwrap(), &x);
    }

    #[test]
    fn relu_kills_negative_preactivations() {
        let p = single(2, 3, Activation::Relu, &[1.0; 6], &[-10.0; 3]);
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let out = forward(&p, &x).unwrap().pop().unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_tanh_layer() {
        let p = single(1, 1, Activation::Tanh, &[0.5], &[0.1]);
        let out = forward(&p, &Matrix::column(&[1.0])).unwrap().pop().unwrap();
        assert!((out.get(0, 0) - 0.6f64.tanh()).abs() < 1e-15);
        assert!((out.get(0, 0) - 0.537050).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = single(2, 1, Activation::Identity, &[1.0, 1.0], &[0.0]);
        assert!(matches!(forward(&p, &Matrix::zeros(3, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let spec = [LayerSpec::new(3, 4, Activation::Tanh), LayerSpec::new(4, 2, Activation::Identity)];
        let p = ParamSet::init(&spec, 1).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-1.0, 0.0, 2.0]]).unwrap();
        let acts = forward(&p, &x).unwrap();
        let (dx, g) = backward(&p, &acts, &Matrix::zeros(2, 2)).unwrap();
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.values().all(|v| v == 0.0));
    }

    #[test]
    fn identity_layer_weight_grad_is_outer_product() {
        let p = single(3, 2, Activation::Identity, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], &[0.0, 0.0]);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]).unwrap();
        let go = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let acts = forward(&p, &x).unwrap();
        let (dx, g) = backward(&p, &acts, &go).unwrap();
        let expected_w = go.transpose().matmul(&x).unwrap();
        assert_eq!(g.layers[0].weight, expected_w);
        assert_eq!(g.layers[0].bias, vec![2.5, -0.75]);
        assert_eq!(dx, go.matmul(&p.layers()[0].weight).unwrap());
    }

    #[test]
    fn backward_checks_shapes() {
        let p = single(2, 1, Activation::Identity, &[1.0, 1.0], &[0.0]);
        let acts = forward(&p, &Matrix::zeros(3, 2)).unwrap();
        assert!(matches!(backward(&p, &acts, &Matrix::zeros(2, 1)), Err(Error::Shape(_))));
        assert!(matches!(backward(&p, &acts[..1], &Matrix::zeros(3, 1)), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_and_backward_do_not_mutate() {
        let spec = [LayerSpec::new(2, 2, Activation::Tanh)];
        let p = ParamSet::init(&spec, 3).unwrap();
        let before = p.clone();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let x_before = x.clone();
        let acts = forward(&p, &x).unwrap();
        let acts_before = acts.clone();
        backward(&p, &acts, &Matrix::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(p, before);
        assert_eq!(x, x_before);
        assert_eq!(acts, acts_before);
    }

    #[test]
    fn finite_difference_of_sum_of_squares() {
        let p = single(1, 1, Activation::Identity, &[3.0], &[0.0]);
        let g = finite_difference_grad(|p| p.values().map(|v| v * v).sum(), &p, 1e-5).unwrap();
        assert!((g.layers[0].weight.get(0, 0) - 6.0).abs() < 1e-8);
        assert!(g.layers[0].bias[0].abs() < 1e-8);
    }

    #[test]
    fn finite_difference_constant_and_linear() {
        let p = single(2, 1, Activation::Identity, &[0.7, -0.2], &[0.4]);
        let g = finite_difference_grad(|_| 4.0, &p, 1e-3).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        let g = finite_difference_grad(|p| 2.5 * p.layers()[0].weight.get(0, 1), &p, 1e-3).unwrap();
        assert!((g.layers[0].weight.get(0, 1) - 2.5).abs() < 1e-12);
        assert!(matches!(finite_difference_grad(|_| f64::NAN, &p, 1e-3), Err(Error::Numeric(_))));
        assert!(matches!(finite_difference_grad(|_| 0.0, &p, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn momentum_two_step_hand_calculation() {
        let mut p = single(1, 1, Activation::Identity, &[1.0], &[0.0]);
        let mut g = Gradients::zeros_like(&p);
        g.layers[0].weight.set(0, 0, 1.0);
        p.sgd_momentum_step(&g, 0.1, 0.9).unwrap();
        assert!((p.layers()[0].weight.get(0, 0) - 0.9).abs() < 1e-15);
        assert_eq!(p.velocity()[0].weight.get(0, 0), 1.0);
        p.sgd_momentum_step(&g, 0.1, 0.9).unwrap();
        assert!((p.velocity()[0].weight.get(0, 0) - 1.9).abs() < 1e-15);
        assert!((p.layers()[0].weight.get(0, 0) - 0.71).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let spec = [LayerSpec::new(3, 2, Activation::Tanh)];
        let mut p = ParamSet::init(&spec, 11).unwrap();
        let start = p.clone();
        let mut g = Gradients::zeros_like(&p);
        for (i, v) in g.values_mut().enumerate() {
            *v = i as f64 * 0.1 - 0.3;
        }
        p.sgd_momentum_step(&g, 0.05, 0.0).unwrap();
        for ((a, b), gv) in p.values().zip(start.values()).zip(g.values()) {
            assert_eq!(a, b - 0.05 * gv);
        }
    }

    #[test]
    fn zero_grad_zero_velocity_leaves_params() {
        let spec = [LayerSpec::new(3, 2, Activation::Tanh)];
        let mut p = ParamSet::init(&spec, 11).unwrap();
        let start = p.clone();
        p.sgd_momentum_step(&Gradients::zeros_like(&p), 0.1, 0.9).unwrap();
        assert_eq!(p, start);
    }

    #[test]
    fn momentum_step_validates_inputs() {
        let spec = [LayerSpec::new(3, 2, Activation::Tanh)];
        let mut p = ParamSet::init(&spec, 11).unwrap();
        let g = Gradients::zeros_like(&p);
        assert!(p.sgd_momentum_step(&g, 0.0, 0.9).is_err());
        assert!(p.sgd_momentum_step(&g, 0.1, 1.0).is_err());
        let other = ParamSet::init(&[LayerSpec::new(2, 2, Activation::Tanh)], 0).unwrap();
        assert!(matches!(
            p.sgd_momentum_step(&Gradients::zeros_like(&other), 0.1, 0.9),
            Err(Error::Shape(_))
        ));
    }
}
