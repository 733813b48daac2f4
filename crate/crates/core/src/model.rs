//! Shared encoder with a disease head and a bias-predictor head.

use crate::error::{Error, Result};
use crate::losses::softmax2;
use crate::matrix::Matrix;
use crate::nn::{forward, Activation, LayerSpec, ParamSet};

/// Seeds for the three independently initialised parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InitSeeds {
    pub encoder: u64,
    pub disease: u64,
    pub bias: u64,
}

impl Default for InitSeeds {
    fn default() -> Self {
        Self {
            encoder: 1,
            disease: 2,
            bias: 3,
        }
    }
}

/// Encoder layout. Heads are always single affine layers on the encoder
/// output: 2 logits for the disease head, 1 scalar for the bias head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleArch {
    pub input_dim: usize,
    pub encoder_dims: Vec<usize>,
    pub encoder_activation: Activation,
}

impl EnsembleArch {
    pub fn new(input_dim: usize, encoder_dims: &[usize], encoder_activation: Activation) -> Self {
        Self {
            input_dim,
            encoder_dims: encoder_dims.to_vec(),
            encoder_activation,
        }
    }

    pub fn encoder_specs(&self) -> Result<Vec<LayerSpec>> {
        if self.encoder_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one hidden layer".into()));
        }
        let mut specs = Vec::with_capacity(self.encoder_dims.len());
        let mut prev = self.input_dim;
        for &d in &self.encoder_dims {
            specs.push(LayerSpec::new(prev, d, self.encoder_activation));
            prev = d;
        }
        Ok(specs)
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder_dims.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    /// θ_e
    pub encoder: ParamSet,
    /// θ_c, two logits (control, diseased).
    pub disease_head: ParamSet,
    /// θ_bp, one output (normalised age estimate or sex logit).
    pub bias_head: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// Softmax probability of the diseased class.
    pub disease_prob: f64,
    pub bias_output: f64,
}

impl EnsembleModel {
    pub fn build(arch: &EnsembleArch, seeds: InitSeeds) -> Result<Self> {
        if seeds.encoder == seeds.disease || seeds.encoder == seeds.bias || seeds.disease == seeds.bias {
            return Err(Error::Config("encoder, disease and bias seeds must be distinct".into()));
        }
        let feat = arch.feature_dim();
        let encoder = ParamSet::init(&arch.encoder_specs()?, seeds.encoder)?;
        let disease_head = ParamSet::init(&[LayerSpec::new(feat, 2, Activation::Identity)], seeds.disease)?;
        let bias_head = ParamSet::init(&[LayerSpec::new(feat, 1, Activation::Identity)], seeds.bias)?;
        Self::from_parts(encoder, disease_head, bias_head)
    }

    /// Assembles a model from existing parameter sets, checking that the
    /// heads plug into the encoder.
    pub fn from_parts(encoder: ParamSet, disease_head: ParamSet, bias_head: ParamSet) -> Result<Self> {
        let feat = encoder.out_dim();
        if disease_head.in_dim() != feat || bias_head.in_dim() != feat {
            return Err(Error::Config(format!(
                "heads expect {} and {} inputs but the encoder produces {feat}",
                disease_head.in_dim(),
                bias_head.in_dim()
            )));
        }
        if disease_head.out_dim() != 2 {
            return Err(Error::Config("disease head must produce 2 logits".into()));
        }
        if bias_head.out_dim() != 1 {
            return Err(Error::Config("bias head must produce 1 output".into()));
        }
        Ok(Self {
            encoder,
            disease_head,
            bias_head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    /// Encoder output for a batch.
    pub fn encode(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(forward(&self.encoder, batch)?.pop().expect("forward returns the output"))
    }

    pub fn predict(&self, batch: &Matrix) -> Result<Vec<Prediction>> {
        let h = self.encode(batch)?;
        let logits = forward(&self.disease_head, &h)?.pop().expect("forward returns the output");
        let bias = forward(&self.bias_head, &h)?.pop().expect("forward returns the output");
        Ok((0..batch.rows())
            .map(|r| Prediction {
                disease_prob: softmax2(logits.get(r, 0), logits.get(r, 1)).1,
                bias_output: bias.get(r, 0),
            })
            .collect())
    }

    /// Disease probabilities only, the score used for AUC.
    pub fn disease_scores(&self, batch: &Matrix) -> Result<Vec<f64>> {
        let h = self.encode(batch)?;
        let logits = forward(&self.disease_head, &h)?.pop().expect("forward returns the output");
        Ok((0..batch.rows())
            .map(|r| softmax2(logits.get(r, 0), logits.get(r, 1)).1)
            .collect())
    }

    pub fn reset_velocity(&mut self) {
        self.encoder.reset_velocity();
        self.disease_head.reset_velocity();
        self.bias_head.reset_velocity();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    fn arch() -> EnsembleArch {
        EnsembleArch::new(16, &[8, 4], Activation::Tanh)
    }

    #[test]
    fn build_shapes() {
        let m = EnsembleModel::build(&arch(), InitSeeds::default()).unwrap();
        let dims: Vec<_> = m.encoder.specs().iter().map(|s| (s.in_dim, s.out_dim)).collect();
        assert_eq!(dims, vec![(16, 8), (8, 4)]);
        assert_eq!((m.disease_head.in_dim(), m.disease_head.out_dim()), (4, 2));
        assert_eq!((m.bias_head.in_dim(), m.bias_head.out_dim()), (4, 1));
    }

    #[test]
    fn build_is_deterministic_and_seeds_must_differ() {
        let a = EnsembleModel::build(&arch(), InitSeeds::default()).unwrap();
        let b = EnsembleModel::build(&arch(), InitSeeds::default()).unwrap();
        assert_eq!(a, b);
        let same = InitSeeds {
            encoder: 4,
            disease: 4,
            bias: 5,
        };
        assert!(matches!(EnsembleModel::build(&arch(), same), Err(Error::Config(_))));
        let empty = EnsembleArch::new(3, &[], Activation::Tanh);
        assert!(EnsembleModel::build(&empty, InitSeeds::default()).is_err());
    }

    fn zeroed(m: &EnsembleModel) -> EnsembleModel {
        let mut z = m.clone();
        for p in [&mut z.encoder, &mut z.disease_head, &mut z.bias_head] {
            p.values_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let m = zeroed(&EnsembleModel::build(&arch(), InitSeeds::default()).unwrap());
        let x = Matrix::from_vec(3, 16, (0..48).map(|i| i as f64 - 20.0).collect()).unwrap();
        assert!(m.predict(&x).unwrap().iter().all(|p| p.disease_prob == 0.5 && p.bias_output == 0.0));
    }

    #[test]
    fn hand_built_two_parameter_net() {
        // encoder: h = 2x (identity); disease logits (0, 0.5h + 0.25)
        let enc = ParamSet::from_layers(
            &[LayerSpec::new(1, 1, Activation::Identity)],
            vec![Dense {
                weight: Matrix::column(&[2.0]),
                bias: vec![0.0],
            }],
        )
        .unwrap();
        let dis = ParamSet::from_layers(
            &[LayerSpec::new(1, 2, Activation::Identity)],
            vec![Dense {
                weight: Matrix::column(&[0.0, 0.5]),
                bias: vec![0.0, 0.25],
            }],
        )
        .unwrap();
        let bias = ParamSet::from_layers(
            &[LayerSpec::new(1, 1, Activation::Identity)],
            vec![Dense {
                weight: Matrix::column(&[-1.0]),
                bias: vec![3.0],
            }],
        )
        .unwrap();
        let m = EnsembleModel::from_parts(enc, dis, bias).unwrap();
        let p = m.predict(&Matrix::column(&[1.5])).unwrap()[0];
        // logit gap = 0.5·3 + 0.25 = 1.75
        let expected = 1.0 / (1.0 + (-1.75f64).exp());
        assert!((p.disease_prob - expected).abs() < 1e-15);
        assert_eq!(p.bias_output, 0.0);
    }

    #[test]
    fn shifting_both_logits_keeps_probabilities() {
        let m = EnsembleModel::build(&arch(), InitSeeds::default()).unwrap();
        let mut shifted = m.clone();
        for b in shifted.disease_head.values_mut().skip(2 * 4) {
            *b += 7.5;
        }
        let x = Matrix::from_vec(2, 16, (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
        let a = m.disease_scores(&x).unwrap();
        let b = shifted.disease_scores(&x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-14);
        }
        assert!(m.predict(&x).unwrap().iter().all(|p| (0.0..=1.0).contains(&p.disease_prob)));
    }

    #[test]
    fn heads_must_fit_encoder() {
        let enc = ParamSet::init(&[LayerSpec::new(3, 4, Activation::Tanh)], 1).unwrap();
        let dis = ParamSet::init(&[LayerSpec::new(5, 2, Activation::Identity)], 2).unwrap();
        let bias = ParamSet::init(&[LayerSpec::new(4, 1, Activation::Identity)], 3).unwrap();
        assert!(EnsembleModel::from_parts(enc, dis, bias).is_err());
    }
}
