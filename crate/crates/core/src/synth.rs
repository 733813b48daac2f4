//! Seeded generator of tabular datasets with known, injected demographic bias.
//!
//! Each example draws `sex ~ Bernoulli(sex_balance)`, an age uniformly from a
//! 5-year grid and `label ~ Bernoulli(prevalence)`. Features are
//!
//! ```text
//! x = signal·y·u
//!   + confound_age·ã·v_a + confound_sex·s̃·v_s
//!   + entangled_age·y·[young]·v_a + entangled_sex·y·[female]·v_s
//!   + σ(age, sex)·ε
//! σ(age, sex) = noise_sigma·(1 + skew_age·[old] + skew_sex·[male])
//! ```
//!
//! where `u`, `v_a`, `v_s` are orthonormal directions drawn once per dataset,
//! `ã` is the age standardised over the grid, `s̃ = +1` for male and `−1` for
//! female, and `ε ~ N(0, I)`.
//!
//! Two bias mechanisms are available. `difficulty_skew_*` makes one group
//! noisier and therefore harder to classify. `entangled_signal_*` lets the
//! disease show up along the confounder's own direction for one group only,
//! so the extra diagnostic signal is inseparable from the demographic one.
//! With both entangled strengths at zero the formula reduces to plain signal,
//! confounder shift and heteroscedastic noise.

use rand::distr::{Bernoulli, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Dataset, Example, Sex, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    /// Feature count.
    pub d: usize,
    pub signal_strength: f64,
    pub confound_strength_age: f64,
    pub confound_strength_sex: f64,
    pub difficulty_skew_age: f64,
    pub difficulty_skew_sex: f64,
    pub entangled_signal_age: f64,
    pub entangled_signal_sex: f64,
    pub noise_sigma: f64,
    pub prevalence: f64,
    pub age_min: f64,
    pub age_max: f64,
    /// Probability of `male`.
    pub sex_balance: f64,
    /// Fraction of rows emitted with a missing age and/or sex.
    pub missing_fraction: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_validation: 500,
            n_test: 1000,
            d: 16,
            signal_strength: 1.0,
            confound_strength_age: 0.0,
            confound_strength_sex: 0.0,
            difficulty_skew_age: 0.0,
            difficulty_skew_sex: 0.0,
            entangled_signal_age: 0.0,
            entangled_signal_sex: 0.0,
            noise_sigma: 1.0,
            prevalence: 0.3,
            age_min: 5.0,
            age_max: 85.0,
            sex_balance: 0.5,
            missing_fraction: 0.0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.signal_strength,
            self.confound_strength_age,
            self.confound_strength_sex,
            self.difficulty_skew_age,
            self.difficulty_skew_sex,
            self.entangled_signal_age,
            self.entangled_signal_sex,
            self.noise_sigma,
            self.age_min,
            self.age_max,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("generator strengths must be finite".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("feature count d must be at least 1".into()));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        if self.difficulty_skew_age < 0.0 || self.difficulty_skew_sex < 0.0 {
            return Err(Error::Config("difficulty skews must be non-negative".into()));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config("prevalence must lie in (0, 1)".into()));
        }
        if !(self.sex_balance > 0.0 && self.sex_balance < 1.0) {
            return Err(Error::Config("sex_balance must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("missing_fraction must lie in [0, 1)".into()));
        }
        let span = self.age_max - self.age_min;
        if self.age_min < 0.0 || span < 0.0 || span % 5.0 != 0.0 {
            return Err(Error::Config(
                "age range must be non-negative, ordered and a whole number of 5-year steps".into(),
            ));
        }
        Ok(())
    }

    /// The 5-year age grid.
    pub fn age_grid(&self) -> Vec<f64> {
        let steps = ((self.age_max - self.age_min) / 5.0) as usize;
        (0..=steps).map(|i| self.age_min + 5.0 * i as f64).collect()
    }

    /// Ages at or above this value count as old for the noise and
    /// entanglement terms: the midpoint of the grid.
    pub fn old_age(&self) -> f64 {
        (self.age_min + self.age_max) / 2.0
    }
}

/// Orthonormal signal / age / sex directions. Returned as `[u, v_a, v_s]`.
fn directions(d: usize, rng: &mut ChaCha8Rng) -> [Vec<f64>; 3] {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(3);
    for _ in 0..3 {
        // Redraw in the unlikely case the projection vanishes.
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            // Gram-Schmidt against earlier directions while the dimension allows it.
            for prev in out.iter().take(d.saturating_sub(1)) {
                let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in v.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                out.push(v);
                break;
            }
        }
    }
    let mut it = out.into_iter();
    [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
}

/// Draws a dataset. Deterministic in `(spec, seed)`.
pub fn generate(spec: &GenSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [u, v_age, v_sex] = directions(spec.d, &mut rng);

    let grid = spec.age_grid();
    let grid_mean = grid.iter().sum::<f64>() / grid.len() as f64;
    let grid_sd = (grid.iter().map(|a| (a - grid_mean).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
    let old_age = spec.old_age();

    let coin = |p: f64| Bernoulli::new(p).map_err(|e| Error::Config(e.to_string()));
    let male = coin(spec.sex_balance)?;
    let diseased = coin(spec.prevalence)?;
    let missing = coin(spec.missing_fraction)?;

    let mut examples = Vec::with_capacity(spec.n_train + spec.n_validation + spec.n_test);
    for (split, n) in [
        (Split::Train, spec.n_train),
        (Split::Validation, spec.n_validation),
        (Split::Test, spec.n_test),
    ] {
        for i in 0..n {
            let sex = if male.sample(&mut rng) { Sex::Male } else { Sex::Female };
            let age = grid[rng.random_range(0..grid.len())];
            let label = u8::from(diseased.sample(&mut rng));

            let z_age = if grid_sd > 0.0 { (age - grid_mean) / grid_sd } else { 0.0 };
            let s_tilde = if sex == Sex::Male { 1.0 } else { -1.0 };
            let old = age >= old_age;
            let y = f64::from(label);
            let sigma = spec.noise_sigma
                * (1.0
                    + spec.difficulty_skew_age * f64::from(u8::from(old))
                    + spec.difficulty_skew_sex * f64::from(u8::from(sex == Sex::Male)));
            let age_coef = spec.confound_strength_age * z_age
                + if old { 0.0 } else { spec.entangled_signal_age * y };
            let sex_coef = spec.confound_strength_sex * s_tilde
                + if sex == Sex::Female { spec.entangled_signal_sex * y } else { 0.0 };
            let features: Vec<f64> = (0..spec.d)
                .map(|k| {
                    let eps: f64 = rng.sample(StandardNormal);
                    spec.signal_strength * y * u[k] + age_coef * v_age[k] + sex_coef * v_sex[k] + sigma * eps
                })
                .collect();

            let (mut age_out, mut sex_out) = (Some(age), Some(sex));
            if missing.sample(&mut rng) {
                match rng.random_range(0..3u8) {
                    0 => age_out = None,
                    1 => sex_out = None,
                    _ => {
                        age_out = None;
                        sex_out = None;
                    }
                }
            }
            examples.push(Example {
                id: format!("{}-{i:05}", split.name()),
                features,
                label,
                age: age_out,
                sex: sex_out,
                split,
            });
        }
    }
    Dataset::new(spec.d, examples)
}
