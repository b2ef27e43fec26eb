//! The resampling-free particle flow.
//!
//! Each step moves every particle `x_j` by `eta * F(x_j)` where
//!
//! ```text
//! F(x_j) = -C γ^(2-d) ∇L(x_j)
//!          - C (d-2) Σ_i L̃_i (x_i - x_j) / (|x_j - x_i|² + γ²)^(d/2)
//! ```
//!
//! `L̃_i = L(x_i) - mean_k L(x_k)` is the normalized loss and
//! `C = Γ(d/2 + 1) / (d (d-2) π^(d/2))` is the constant of the Newtonian
//! kernel in `d >= 3` dimensions. The first term is gradient descent; the
//! second pulls particles toward below-average-loss particles and pushes them
//! away from above-average ones.
//!
//! Steps are synchronous: every quantity is evaluated at the pre-step
//! positions and the new ensemble is written into a fresh buffer.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihoods::LossModel;

/// Smallest dimension for which the Newtonian kernel constant exists.
pub const MIN_DIM: usize = 3;

/// A single point in state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "state vector",
                particle: 0,
            });
        }
        Ok(Self(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// An ordered set of equally weighted particles at a discrete time index.
///
/// Coordinates are stored row-major in one buffer of `n * d` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    coords: Vec<f64>,
    step_index: usize,
}

impl Ensemble {
    /// Builds an ensemble from a row-major coordinate buffer.
    pub fn from_flat(dim: usize, coords: Vec<f64>, step_index: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", dim, "must be positive"));
        }
        if coords.is_empty() {
            return Err(Error::TooFewParticles { needed: 1, found: 0 });
        }
        if coords.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                context: "ensemble buffer",
                expected: dim,
                found: coords.len() % dim,
            });
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "ensemble",
                particle: pos / dim,
            });
        }
        Ok(Self {
            dim,
            coords,
            step_index,
        })
    }

    pub fn from_particles<P: AsRef<[f64]>>(particles: &[P], step_index: usize) -> Result<Self> {
        let dim = particles
            .first()
            .map(|p| p.as_ref().len())
            .ok_or(Error::TooFewParticles { needed: 1, found: 0 })?;
        let mut coords = Vec::with_capacity(dim * particles.len());
        for p in particles {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "ensemble particle",
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, step_index)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vectors(&self) -> Vec<Vec<f64>> {
        self.particles().map(<[f64]>::to_vec).collect()
    }

    pub fn with_step_index(mut self, step_index: usize) -> Self {
        self.step_index = step_index;
        self
    }

    /// Reorders particles so that particle `k` of the result is particle
    /// `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::SizeMismatch {
                left: self.len(),
                right: order.len(),
            });
        }
        let mut coords = Vec::with_capacity(self.coords.len());
        for &k in order {
            coords.extend_from_slice(self.particle(k));
        }
        Self::from_flat(self.dim, coords, self.step_index)
    }

    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "translation",
                expected: self.dim,
                found: shift.len(),
            });
        }
        let coords = self
            .particles()
            .flat_map(|p| p.iter().zip(shift).map(|(x, v)| x + v))
            .collect();
        Self::from_flat(self.dim, coords, self.step_index)
    }

    /// Adds row-major displacements and advances the time index.
    pub(crate) fn displaced(&self, displacements: &[f64]) -> Result<Self> {
        debug_assert_eq!(displacements.len(), self.coords.len());
        let coords = self
            .coords
            .iter()
            .zip(displacements)
            .map(|(x, dx)| x + dx)
            .collect();
        Self::from_flat(self.dim, coords, self.step_index + 1)
    }

    /// Particle indices sorted lexicographically by coordinates.
    ///
    /// Reductions over particles run in this order, which depends only on the
    /// set of positions and not on how the particles are indexed.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| lexicographic(self.particle(a), self.particle(b)));
        order
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Natural log of `Γ(d/2 + 1)` evaluated exactly through the recurrence on
/// integer and half-integer arguments.
fn ln_gamma_half_plus_one(d: usize) -> f64 {
    // Γ(k+1) = k! for even d = 2k; Γ(k + 3/2) = Γ(1/2) Π_{m=0..k} (m + 1/2) for odd d.
    if d % 2 == 0 {
        (1..=d / 2).map(|m| (m as f64).ln()).sum()
    } else {
        0.5 * PI.ln() + (0..=d / 2).map(|m| (m as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// `ln C` for the Newtonian kernel constant in `d` dimensions.
pub fn log_kernel_constant(d: usize) -> Result<f64> {
    if d < MIN_DIM {
        return Err(Error::UnsupportedDimension { dim: d, min: MIN_DIM });
    }
    let df = d as f64;
    Ok(ln_gamma_half_plus_one(d) - (df * (df - 2.0)).ln() - 0.5 * df * PI.ln())
}

/// `C = Γ(d/2 + 1) / (d (d-2) π^(d/2))`.
pub fn kernel_constant(d: usize) -> Result<f64> {
    log_kernel_constant(d).map(f64::exp)
}

/// Parameters of the flow filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    /// Kernel smoothing length.
    pub gamma: f64,
    /// Euler step applied to the whole flow field.
    pub eta: f64,
    pub n_particles: usize,
    pub n_steps: usize,
}

impl FlowConfig {
    pub fn new(dim: usize, gamma: f64, eta: f64, n_particles: usize, n_steps: usize) -> Result<Self> {
        let cfg = Self {
            dim,
            gamma,
            eta,
            n_particles,
            n_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_DIM {
            return Err(Error::UnsupportedDimension {
                dim: self.dim,
                min: MIN_DIM,
            });
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", self.gamma, "must be positive and finite"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", self.eta, "must be positive and finite"));
        }
        if self.n_particles == 0 {
            return Err(Error::invalid("n_particles", 0, "must be at least 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", 0, "must be at least 1"));
        }
        Ok(())
    }

    pub fn kernel_constant(&self) -> f64 {
        kernel_constant(self.dim).expect("validated dimension")
    }

    /// `ln(eta C γ^(2-d))`, reported in diagnostics because the factor
    /// `γ^(2-d)` spans many orders of magnitude in high dimension.
    pub fn log_gradient_coefficient(&self) -> f64 {
        self.eta.ln()
            + log_kernel_constant(self.dim).expect("validated dimension")
            + (2.0 - self.dim as f64) * self.gamma.ln()
    }

    /// `eta C γ^(2-d)`: the effective gradient-descent step of the flow.
    pub fn gradient_coefficient(&self) -> f64 {
        self.eta * self.kernel_constant() * self.gamma.powf(2.0 - self.dim as f64)
    }

    /// `eta C (d-2)`: prefactor of the interaction sum.
    pub fn interaction_coefficient(&self) -> f64 {
        self.eta * self.kernel_constant() * (self.dim as f64 - 2.0)
    }
}

/// Losses, gradients and normalized losses of one ensemble at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub losses: Vec<f64>,
    /// Row-major `n * d` gradients.
    pub grads: Vec<f64>,
    pub normalizer: f64,
    pub normalized_losses: Vec<f64>,
}

impl LossEvaluation {
    pub fn new(losses: Vec<f64>, grads: Vec<f64>) -> Result<Self> {
        let (normalizer, normalized_losses) = normalize_losses(&losses)?;
        if losses.is_empty() || grads.len() % losses.len() != 0 {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: losses.len(),
                found: grads.len(),
            });
        }
        Ok(Self {
            losses,
            grads,
            normalizer,
            normalized_losses,
        })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        let d = self.grads.len() / self.losses.len();
        &self.grads[i * d..(i + 1) * d]
    }
}

/// Returns the mean loss `Z` and the normalized losses `L_i - Z`.
///
/// The mean is accumulated over the losses in sorted order, so it does not
/// depend on how particles are indexed.
pub fn normalize_losses(losses: &[f64]) -> Result<(f64, Vec<f64>)> {
    if losses.is_empty() {
        return Err(Error::TooFewParticles { needed: 1, found: 0 });
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: "loss",
            particle: i,
        });
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normalizer = sorted.iter().sum::<f64>() / losses.len() as f64;
    let normalized = losses.iter().map(|l| l - normalizer).collect();
    Ok((normalizer, normalized))
}

/// Evaluates the loss model on every particle at the ensemble's time index.
pub fn evaluate(ensemble: &Ensemble, model: &dyn LossModel) -> Result<LossEvaluation> {
    let d = ensemble.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "loss model",
            expected: d,
            found: model.dim(),
        });
    }
    let step = ensemble.step_index();
    let n = ensemble.len();
    let mut losses = vec![0.0; n];
    let mut grads = vec![0.0; n * d];
    losses
        .par_iter_mut()
        .zip(grads.par_chunks_mut(d))
        .enumerate()
        .try_for_each(|(i, (loss, grad))| {
            let x = ensemble.particle(i);
            let wrap = |e| Error::Evaluation {
                step,
                particle: i,
                source: Box::new(e),
            };
            *loss = model.loss(step, x).map_err(wrap)?;
            model.grad(step, x, grad).map_err(wrap)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(wrap(Error::NonFiniteInput {
                    context: "loss model output",
                    particle: i,
                }));
            }
            Ok(())
        })?;
    LossEvaluation::new(losses, grads)
}

/// Which parts of the flow field to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowTerms {
    Full,
    GradientOnly,
    InteractionOnly,
}

/// Per-particle displacements `eta * F(x_j)`, row-major.
pub fn flow_update(ensemble: &Ensemble, eval: &LossEvaluation, config: &FlowConfig) -> Result<Vec<f64>> {
    flow_update_terms(ensemble, eval, config, FlowTerms::Full)
}

pub fn flow_update_terms(
    ensemble: &Ensemble,
    eval: &LossEvaluation,
    config: &FlowConfig,
    terms: FlowTerms,
) -> Result<Vec<f64>> {
    let plan = FlowPlan::new(ensemble, eval, config, terms)?;
    let mut out = vec![0.0; ensemble.as_flat().len()];
    out.par_chunks_mut(ensemble.dim())
        .enumerate()
        .try_for_each(|(j, row)| plan.displacement(j, row))?;
    Ok(out)
}

/// Everything one step needs to compute any particle's displacement
/// independently of the others.
pub(crate) struct FlowPlan<'a> {
    ensemble: &'a Ensemble,
    eval: &'a LossEvaluation,
    order: Vec<usize>,
    gamma_sq: f64,
    half_dim: i32,
    odd_dim: bool,
    grad_coef: f64,
    interaction_coef: f64,
    terms: FlowTerms,
}

impl<'a> FlowPlan<'a> {
    pub(crate) fn new(
        ensemble: &'a Ensemble,
        eval: &'a LossEvaluation,
        config: &FlowConfig,
        terms: FlowTerms,
    ) -> Result<Self> {
        config.validate()?;
        let d = ensemble.dim();
        if d != config.dim {
            return Err(Error::DimensionMismatch {
                context: "flow config",
                expected: config.dim,
                found: d,
            });
        }
        if eval.len() != ensemble.len() || eval.grads.len() != ensemble.as_flat().len() {
            return Err(Error::SizeMismatch {
                left: ensemble.len(),
                right: eval.len(),
            });
        }
        if config.log_gradient_coefficient() > f64::MAX.ln() {
            return Err(Error::NonFiniteFlow {
                term: "gradient coefficient",
                particle: 0,
                other: None,
            });
        }
        Ok(Self {
            ensemble,
            eval,
            order: ensemble.canonical_order(),
            gamma_sq: config.gamma * config.gamma,
            half_dim: (d / 2) as i32,
            odd_dim: d % 2 == 1,
            grad_coef: config.gradient_coefficient(),
            interaction_coef: config.interaction_coefficient(),
            terms,
        })
    }

    /// `(r² + γ²)^(d/2)`
    #[inline]
    fn kernel_denominator(&self, r_sq: f64) -> f64 {
        let s = r_sq + self.gamma_sq;
        let p = s.powi(self.half_dim);
        if self.odd_dim {
            p * s.sqrt()
        } else {
            p
        }
    }

    pub(crate) fn displacement(&self, j: usize, out: &mut [f64]) -> Result<()> {
        let d = self.ensemble.dim();
        let xj = self.ensemble.particle(j);
        out.fill(0.0);
        if self.terms != FlowTerms::GradientOnly {
            let mut diff = vec![0.0; d];
            for &i in &self.order {
                let xi = self.ensemble.particle(i);
                let mut r_sq = 0.0;
                for ((dk, a), b) in diff.iter_mut().zip(xi).zip(xj) {
                    *dk = a - b;
                    r_sq += *dk * *dk;
                }
                let weight = self.eval.normalized_losses[i] / self.kernel_denominator(r_sq);
                if !weight.is_finite() {
                    return Err(Error::NonFiniteFlow {
                        term: "interaction",
                        particle: j,
                        other: Some(i),
                    });
                }
                for (acc, dk) in out.iter_mut().zip(&diff) {
                    *acc += weight * dk;
                }
            }
        }
        let grad = self.eval.grad(j);
        let use_grad = self.terms != FlowTerms::InteractionOnly;
        for (k, o) in out.iter_mut().enumerate() {
            let g = if use_grad { self.grad_coef * grad[k] } else { 0.0 };
            *o = -(g + self.interaction_coef * *o);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFlow {
                term: if use_grad { "gradient" } else { "interaction" },
                particle: j,
                other: None,
            });
        }
        Ok(())
    }
}

/// One synchronous filter step: returns a new ensemble at `step_index + 1`.
pub fn step(ensemble: &Ensemble, model: &dyn LossModel, config: &FlowConfig) -> Result<Ensemble> {
    let eval = evaluate(ensemble, model)?;
    let displacements = flow_update(ensemble, &eval, config)?;
    ensemble.displaced(&displacements)
}

/// Applies `config.n_steps` steps, calling `observer` after each one.
pub fn run<F>(initial: &Ensemble, model: &dyn LossModel, config: &FlowConfig, mut observer: F) -> Result<Ensemble>
where
    F: FnMut(usize, &Ensemble),
{
    config.validate()?;
    let mut current = initial.clone();
    for _ in 0..config.n_steps {
        let at = current.step_index();
        current = step(&current, model, config).map_err(|e| Error::RunAborted {
            step: at,
            source: Box::new(e),
        })?;
        observer(current.step_index(), &current);
    }
    Ok(current)
}
