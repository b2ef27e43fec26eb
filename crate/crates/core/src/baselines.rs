//! Baselines: Monte Carlo Localization (bootstrap filter with a Gaussian
//! random-walk motion model and systematic resampling) and independent
//! per-particle gradient descent.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::Ensemble;
use crate::likelihoods::LossModel;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MclConfig {
    /// Variance of the per-step motion noise `N(0, ε I)`.
    pub epsilon: f64,
    pub n_particles: usize,
    pub rng_seed: u64,
}

impl MclConfig {
    pub fn new(epsilon: f64, n_particles: usize, rng_seed: u64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", epsilon, "must be positive"));
        }
        if n_particles == 0 {
            return Err(Error::invalid("n_particles", 0, "must be at least 1"));
        }
        Ok(Self {
            epsilon,
            n_particles,
            rng_seed,
        })
    }
}

/// Particles with normalized importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub particles: Ensemble,
    pub weights: Vec<f64>,
}

impl WeightedEnsemble {
    pub fn uniform(particles: Ensemble) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn new(particles: Ensemble, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != particles.len() {
            return Err(Error::SizeMismatch {
                left: particles.len(),
                right: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights", "negative or non-finite", "must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", total, "must sum to 1"));
        }
        Ok(Self { particles, weights })
    }
}

/// Normalized weights `w_i ∝ prior_i exp(-L_i)`, shifted by the smallest loss
/// before exponentiation.
pub fn importance_weights(prior: &[f64], losses: &[f64]) -> Result<Vec<f64>> {
    let log_w: Vec<f64> = prior.iter().zip(losses).map(|(p, l)| p.ln() - l).collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    // the maximum term contributes exactly 1
    if !(total >= 1.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Systematic resampling: one offset `u ∈ [0, 1)` places `n` evenly spaced
/// pointers `(k + u) / n` on the cumulative weights. Particle `i` is copied
/// `⌊n w_i⌋` or `⌈n w_i⌉` times.
pub fn systematic_resample(weights: &[f64], offset: f64) -> Vec<usize> {
    let n = weights.len();
    let mut indices = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let pointer = (k as f64 + offset) / n as f64;
        while pointer >= cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        indices.push(i);
    }
    indices
}

/// One MCL step at the ensemble's time index: random-walk motion, weighting
/// by `exp(-L_t)`, then systematic resampling to equal weights.
pub fn mcl_step(ens: &WeightedEnsemble, model: &dyn LossModel, config: &MclConfig) -> Result<WeightedEnsemble> {
    let particles = &ens.particles;
    let (n, d) = (particles.len(), particles.dim());
    if model.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "loss model",
            expected: d,
            found: model.dim(),
        });
    }
    let step = particles.step_index();
    let std = config.epsilon.sqrt();
    let mut moved = particles.as_flat().to_vec();
    moved.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut r = rng::stream(config.rng_seed, Domain::MotionNoise, step as u64, i as u64);
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut r);
            *v += std * z;
        }
    });
    let losses = moved
        .par_chunks(d)
        .enumerate()
        .map(|(i, x)| {
            model.loss(step, x).map_err(|e| Error::Evaluation {
                step,
                particle: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let weights = importance_weights(&ens.weights, &losses)?;
    let offset: f64 = rng::stream(config.rng_seed, Domain::Resampling, step as u64, 0).random();
    let mut resampled = Vec::with_capacity(n * d);
    for i in systematic_resample(&weights, offset) {
        resampled.extend_from_slice(&moved[i * d..(i + 1) * d]);
    }
    Ok(WeightedEnsemble::uniform(Ensemble::from_flat(d, resampled, step + 1)?))
}

/// Runs `n_steps` MCL steps, calling `observer` after each.
pub fn mcl_run<F>(
    initial: &Ensemble,
    model: &dyn LossModel,
    config: &MclConfig,
    n_steps: usize,
    mut observer: F,
) -> Result<WeightedEnsemble>
where
    F: FnMut(usize, &WeightedEnsemble),
{
    let mut current = WeightedEnsemble::uniform(initial.clone());
    for _ in 0..n_steps {
        let at = current.particles.step_index();
        current = mcl_step(&current, model, config).map_err(|e| Error::RunAborted {
            step: at,
            source: Box::new(e),
        })?;
        observer(current.particles.step_index(), &current);
    }
    Ok(current)
}

/// Every particle takes `x ← x - η ∇L_t(x)` independently.
pub fn gradient_descent_step(ens: &Ensemble, model: &dyn LossModel, eta: f64) -> Result<Ensemble> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", eta, "must be positive"));
    }
    let eval = crate::flow::evaluate(ens, model)?;
    let coords = ens
        .as_flat()
        .iter()
        .zip(&eval.grads)
        .map(|(x, g)| x - eta * g)
        .collect();
    Ensemble::from_flat(ens.dim(), coords, ens.step_index() + 1)
}

pub fn gradient_descent_run<F>(
    initial: &Ensemble,
    model: &dyn LossModel,
    eta: f64,
    n_steps: usize,
    mut observer: F,
) -> Result<Ensemble>
where
    F: FnMut(usize, &Ensemble),
{
    let mut current = initial.clone();
    for _ in 0..n_steps {
        let at = current.step_index();
        current = gradient_descent_step(&current, model, eta).map_err(|e| Error::RunAborted {
            step: at,
            source: Box::new(e),
        })?;
        observer(current.step_index(), &current);
    }
    Ok(current)
}
