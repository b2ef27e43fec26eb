//! Loss models: time-indexed negative log-likelihoods with analytic gradients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::flow::StateVector;
use crate::metrics::GaussianSummary;
use crate::rng::{self, Domain};

/// A negative log-likelihood `L_t(x)` and its gradient.
///
/// Implementations must be pure: the same `(step, x)` always yields the same
/// value, and evaluation may happen concurrently from many threads.
pub trait LossModel: Send + Sync {
    fn dim(&self) -> usize;

    fn loss(&self, step: usize, x: &[f64]) -> Result<f64>;

    /// Writes `∇L_t(x)` into `out` (length `dim`).
    fn grad(&self, step: usize, x: &[f64], out: &mut [f64]) -> Result<()>;
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "loss argument",
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

/// Central-difference gradient with step `1e-5 * (1 + |x_k|)` per coordinate.
pub fn finite_difference_gradient(model: &dyn LossModel, step: usize, x: &[f64]) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = 1e-5 * (1.0 + x[k].abs());
        probe[k] = x[k] + h;
        let up = model.loss(step, &probe)?;
        probe[k] = x[k] - h;
        let down = model.loss(step, &probe)?;
        probe[k] = x[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Wraps a loss function that has no analytic gradient; gradients come from
/// central differences.
pub struct FiniteDifferenceLoss<F> {
    dim: usize,
    loss_fn: F,
}

impl<F> FiniteDifferenceLoss<F>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Send + Sync,
{
    pub fn new(dim: usize, loss_fn: F) -> Self {
        Self { dim, loss_fn }
    }
}

impl<F> LossModel for FiniteDifferenceLoss<F>
where
    F: Fn(usize, &[f64]) -> Result<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, step: usize, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x)?;
        (self.loss_fn)(step, x)
    }

    fn grad(&self, step: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x)?;
        let g = finite_difference_gradient(self, step, x)?;
        out.copy_from_slice(&g);
        Ok(())
    }
}

/// Static loss `½|x - center|²`.
#[derive(Debug, Clone)]
pub struct IsotropicQuadraticLoss {
    center: Vec<f64>,
}

impl IsotropicQuadraticLoss {
    pub fn new(center: Vec<f64>) -> Self {
        Self { center }
    }
}

impl LossModel for IsotropicQuadraticLoss {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn loss(&self, _step: usize, x: &[f64]) -> Result<f64> {
        check_dim(self.center.len(), x)?;
        Ok(0.5 * x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }

    fn grad(&self, _step: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.center.len(), x)?;
        for ((o, a), b) in out.iter_mut().zip(x).zip(&self.center) {
            *o = a - b;
        }
        Ok(())
    }
}

/// Synthetic localization loss `L_t(x) = ½((x - u)ᵀ ξ_t)²`.
///
/// `u` and every `ξ_t` are standard normal. Step `t` (0-based) consumes
/// `ξ_t`, so an ensemble at time index `t` has absorbed `t` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProjectionLoss {
    pub u: Vec<f64>,
    pub xis: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

impl QuadraticProjectionLoss {
    pub fn horizon(&self) -> usize {
        self.xis.len()
    }

    fn xi(&self, step: usize) -> Result<&[f64]> {
        self.xis.get(step).map(Vec::as_slice).ok_or(Error::StepOutOfRange {
            step,
            horizon: self.xis.len(),
        })
    }

    fn projection(&self, step: usize, x: &[f64]) -> Result<(f64, &[f64])> {
        check_dim(self.u.len(), x)?;
        let xi = self.xi(step)?;
        let p = x.iter().zip(&self.u).zip(xi).map(|((a, u), g)| (a - u) * g).sum();
        Ok((p, xi))
    }
}

impl LossModel for QuadraticProjectionLoss {
    fn dim(&self) -> usize {
        self.u.len()
    }

    fn loss(&self, step: usize, x: &[f64]) -> Result<f64> {
        let (p, _) = self.projection(step, x)?;
        Ok(0.5 * p * p)
    }

    fn grad(&self, step: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (p, xi) = self.projection(step, x)?;
        for (o, g) in out.iter_mut().zip(xi) {
            *o = p * g;
        }
        Ok(())
    }
}

/// Draws `u ~ N(0, I_d)` and `ξ_1..ξ_T ~ N(0, I_d)` from `seed`.
pub fn sample_synthetic_problem(d: usize, horizon: usize, seed: u64) -> Result<QuadraticProjectionLoss> {
    if d < crate::flow::MIN_DIM {
        return Err(Error::UnsupportedDimension {
            dim: d,
            min: crate::flow::MIN_DIM,
        });
    }
    if horizon == 0 {
        return Err(Error::invalid("T", 0, "must be at least 1"));
    }
    let mut r = rng::stream(seed, Domain::SyntheticProblem, 0, 0);
    let u = rng::standard_normal_vec(&mut r, d);
    let xis = (0..horizon).map(|_| rng::standard_normal_vec(&mut r, d)).collect();
    Ok(QuadraticProjectionLoss { u, xis, rng_seed: seed })
}

/// Posterior after the first `upto_step` observations of the realized `ξ`
/// draws under the prior `N(0, I)`: precision `Λ = I + Σ ξ ξᵀ`, mean
/// `Λ⁻¹ (Σ ξ ξᵀ) u`.
pub fn exact_posterior(loss: &QuadraticProjectionLoss, upto_step: usize) -> Result<GaussianSummary> {
    if upto_step > loss.horizon() {
        return Err(Error::StepOutOfRange {
            step: upto_step,
            horizon: loss.horizon(),
        });
    }
    let d = loss.dim();
    let mut info = DMatrix::<f64>::zeros(d, d);
    for xi in &loss.xis[..upto_step] {
        let v = DVector::from_column_slice(xi);
        info.ger(1.0, &v, &v, 1.0);
    }
    let precision = DMatrix::identity(d, d) + &info;
    let chol = precision
        .clone()
        .cholesky()
        .expect("identity plus a Gram matrix is positive definite");
    let mean = chol.solve(&(&info * DVector::from_column_slice(&loss.u)));
    let mut covariance = chol.inverse();
    covariance = (&covariance + covariance.transpose()) * 0.5;
    GaussianSummary::new(mean, covariance)
}

/// Posterior induced by `log p ∝ -½|x|² - (t/2)|x - u|²`: precision
/// `(1 + t) I`, mean `t/(1 + t) u`.
pub fn expected_posterior(u: &[f64], t: usize) -> Result<GaussianSummary> {
    let d = u.len();
    let t = t as f64;
    let mean = DVector::from_iterator(d, u.iter().map(|v| t / (1.0 + t) * v));
    let covariance = DMatrix::identity(d, d) / (1.0 + t);
    GaussianSummary::new(mean, covariance)
}

/// Translation in meters plus an axis-angle rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseState {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl PoseState {
    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: Vector3::zeros(),
        }
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        Self { translation, rotation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Rotation3::new(self.rotation).into_inner()
    }

    /// Same rotation with the axis-angle norm wrapped into `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        Self {
            translation: self.translation,
            rotation: canonical_axis_angle(self.rotation),
        }
    }

    pub fn pack(&self) -> StateVector {
        StateVector::new(self.translation.iter().chain(self.rotation.iter()).copied().collect())
            .expect("finite pose")
    }

    /// Reads a 6-vector `[t, ω]`; the rotation part is canonicalized.
    pub fn unpack(v: &[f64]) -> Result<Self> {
        check_dim(6, v)?;
        Ok(Self {
            translation: Vector3::new(v[0], v[1], v[2]),
            rotation: canonical_axis_angle(Vector3::new(v[3], v[4], v[5])),
        })
    }
}

/// Wraps `ω` so that `|ω| <= π`, leaving the rotation unchanged.
pub fn canonical_axis_angle(omega: Vector3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    if theta < PI {
        return omega;
    }
    let wrapped = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    omega * (wrapped / theta)
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of the SO(3) exponential: `Exp(ω + δ) ≈ Exp(J δ) Exp(ω)`.
fn left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let w = skew(omega);
    let (a, b) = if theta_sq < 1e-8 {
        (0.5 - theta_sq / 24.0, 1.0 / 6.0 - theta_sq / 120.0)
    } else {
        let theta = theta_sq.sqrt();
        ((1.0 - theta.cos()) / theta_sq, (theta - theta.sin()) / (theta_sq * theta))
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Point-correspondence registration loss
/// `(1 / 2σ²) Σ_k |R(x) m_k + T(x) - o_k|²` over 6-vector poses.
#[derive(Debug, Clone)]
pub struct PoseRegistrationLoss {
    pub model_points: Vec<Vector3<f64>>,
    pub observed_points: Vec<Vector3<f64>>,
    pub sigma: f64,
    /// Held for evaluation only.
    pub true_pose: PoseState,
}

impl PoseRegistrationLoss {
    pub fn new(
        model_points: Vec<Vector3<f64>>,
        observed_points: Vec<Vector3<f64>>,
        sigma: f64,
        true_pose: PoseState,
    ) -> Result<Self> {
        if model_points.len() < 3 {
            return Err(Error::invalid("K", model_points.len(), "need at least 3 points"));
        }
        if model_points.len() != observed_points.len() {
            return Err(Error::SizeMismatch {
                left: model_points.len(),
                right: observed_points.len(),
            });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", sigma, "must be positive"));
        }
        Ok(Self {
            model_points,
            observed_points,
            sigma,
            true_pose,
        })
    }

    fn residuals(&self, x: &[f64]) -> Result<(Matrix3<f64>, Vec<Vector3<f64>>)> {
        check_dim(6, x)?;
        let t = Vector3::new(x[0], x[1], x[2]);
        let r = Rotation3::new(Vector3::new(x[3], x[4], x[5])).into_inner();
        let res = self
            .model_points
            .iter()
            .zip(&self.observed_points)
            .map(|(m, o)| r * m + t - o)
            .collect();
        Ok((r, res))
    }
}

impl LossModel for PoseRegistrationLoss {
    fn dim(&self) -> usize {
        6
    }

    fn loss(&self, _step: usize, x: &[f64]) -> Result<f64> {
        let (_, res) = self.residuals(x)?;
        let sq: f64 = res.iter().map(Vector3::norm_squared).sum();
        Ok(sq / (2.0 * self.sigma * self.sigma))
    }

    fn grad(&self, _step: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (r, res) = self.residuals(x)?;
        let inv_var = 1.0 / (self.sigma * self.sigma);
        let mut g_t = Vector3::zeros();
        let mut torque = Vector3::zeros();
        for (m, e) in self.model_points.iter().zip(&res) {
            g_t += e;
            torque += (r * m).cross(e);
        }
        let g_w = left_jacobian(&Vector3::new(x[3], x[4], x[5])).transpose() * torque;
        for k in 0..3 {
            out[k] = g_t[k] * inv_var;
            out[k + 3] = g_w[k] * inv_var;
        }
        Ok(())
    }
}

/// Uniform rotation on SO(3) from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(r: &mut R) -> Vector3<f64> {
    let q = Vector4::from_fn(|_, _| StandardNormal.sample(r));
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q));
    canonical_axis_angle(q.scaled_axis())
}

/// Seeded synthetic registration scene with observation noise `sigma`.
pub fn make_pose_problem(k: usize, sigma: f64, seed: u64) -> Result<PoseRegistrationLoss> {
    make_pose_problem_with_noise(k, sigma, sigma, seed)
}

/// Like [`make_pose_problem`] but with the loss scale `sigma` decoupled from
/// the noise actually added to the observations (which may be zero).
pub fn make_pose_problem_with_noise(k: usize, sigma: f64, noise_std: f64, seed: u64) -> Result<PoseRegistrationLoss> {
    if k < 3 {
        return Err(Error::invalid("K", k, "need at least 3 points"));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std", noise_std, "must be non-negative"));
    }
    let mut r = rng::stream(seed, Domain::PoseProblem, 0, 0);
    let model: Vec<Vector3<f64>> = (0..k)
        .map(|_| Vector3::from_fn(|_, _| r.random::<f64>() - 0.5))
        .collect();
    let rotation = random_rotation(&mut r);
    let translation = Vector3::from_fn(|_, _| r.random::<f64>() - 0.5);
    let truth = PoseState::new(translation, rotation);
    let noise = Normal::new(0.0, noise_std).expect("valid std");
    let rot = truth.rotation_matrix();
    let observed = model
        .iter()
        .map(|m| rot * m + translation + Vector3::from_fn(|_, _| noise.sample(&mut r)))
        .collect();
    PoseRegistrationLoss::new(model, observed, sigma, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_gradient_matches(model: &dyn LossModel, step: usize, x: &[f64]) {
        let mut g = vec![0.0; x.len()];
        model.grad(step, x, &mut g).unwrap();
        let fd = finite_difference_gradient(model, step, x).unwrap();
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / scale <= 1e-5, "relative gradient error {} at {x:?}", err / scale);
    }

    #[test]
    fn synthetic_problem_is_seeded() {
        let a = sample_synthetic_problem(3, 2, 7).unwrap();
        let b = sample_synthetic_problem(3, 2, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_synthetic_problem(3, 2, 8).unwrap());
        assert!(sample_synthetic_problem(2, 2, 7).is_err());
        assert!(sample_synthetic_problem(3, 0, 7).is_err());
    }

    #[test]
    fn hidden_parameter_has_unit_variance() {
        let d = 5;
        let norms: Vec<f64> = (0..1000)
            .map(|s| sample_synthetic_problem(d, 1, s).unwrap().u.iter().map(|v| v * v).sum())
            .collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (norms.len() - 1) as f64;
        let se = (var / norms.len() as f64).sqrt();
        assert!((mean - d as f64).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn loss_vanishes_at_hidden_parameter() {
        let p = sample_synthetic_problem(6, 8, 3).unwrap();
        for t in 0..8 {
            assert_eq!(p.loss(t, &p.u).unwrap(), 0.0);
        }
        assert!(matches!(p.loss(8, &p.u), Err(Error::StepOutOfRange { step: 8, horizon: 8 })));
    }

    #[test]
    fn projection_loss_ignores_orthogonal_directions() {
        let p = sample_synthetic_problem(4, 3, 11).unwrap();
        let x = vec![0.3, -1.2, 2.0, 0.7];
        let xi = &p.xis[1];
        // v orthogonal to ξ
        let mut v = vec![1.0, 0.5, -0.25, 2.0];
        let dot: f64 = v.iter().zip(xi).map(|(a, b)| a * b).sum();
        let nn: f64 = xi.iter().map(|a| a * a).sum();
        for (vk, xk) in v.iter_mut().zip(xi) {
            *vk -= dot / nn * xk;
        }
        let moved: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
        let l0 = p.loss(1, &x).unwrap();
        assert!((p.loss(1, &moved).unwrap() - l0).abs() < 1e-12 * (1.0 + l0));
        let mut g = vec![0.0; 4];
        p.grad(1, &x, &mut g).unwrap();
        let cross: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!(cross.abs() < 1e-12 * (1.0 + l0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let syn = sample_synthetic_problem(7, 5, 2).unwrap();
        let pose = make_pose_problem(8, 0.1, 4).unwrap();
        let iso = IsotropicQuadraticLoss::new(vec![1.0, -1.0, 0.5]);
        let mut r = rng::stream(0, Domain::Testing, 2, 0);
        for i in 0..100 {
            let x = rng::standard_normal_vec(&mut r, 7);
            assert_gradient_matches(&syn, i % 5, &x);
            let x: Vec<f64> = rng::standard_normal_vec(&mut r, 6).iter().map(|v| 1.2 * v).collect();
            assert_gradient_matches(&pose, 0, &x);
            assert_gradient_matches(&iso, 0, &rng::standard_normal_vec(&mut r, 3));
        }
        // near-identity rotations use the series branch of the Jacobian
        assert_gradient_matches(&pose, 0, &[0.1, 0.2, -0.1, 1e-6, -2e-6, 1e-6]);
    }

    #[test]
    fn finite_difference_adapter() {
        let fd = FiniteDifferenceLoss::new(3, |_, x: &[f64]| Ok(x.iter().map(|v| v.powi(4)).sum()));
        let mut g = vec![0.0; 3];
        fd.grad(0, &[1.0, -2.0, 0.5], &mut g).unwrap();
        for (a, b) in g.iter().zip([4.0, -32.0, 0.5]) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn exact_posterior_hand_case() {
        let p = QuadraticProjectionLoss {
            u: vec![1.0, 1.0, 1.0],
            xis: vec![vec![1.0, 0.0, 0.0]],
            rng_seed: 0,
        };
        let post = exact_posterior(&p, 1).unwrap();
        let expected_cov = [0.5, 1.0, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { expected_cov[i] } else { 0.0 };
                assert!((post.covariance[(i, j)] - e).abs() < 1e-14);
            }
        }
        assert!((post.mean[0] - 0.5).abs() < 1e-14);
        assert!(post.mean[1].abs() < 1e-14 && post.mean[2].abs() < 1e-14);

        let prior = exact_posterior(&p, 0).unwrap();
        assert_eq!(prior.mean, DVector::zeros(3));
        assert_eq!(prior.covariance, DMatrix::identity(3, 3));
        assert!(exact_posterior(&p, 2).is_err());
    }

    #[test]
    fn exact_posterior_precision_dominates_identity() {
        let p = sample_synthetic_problem(5, 20, 9).unwrap();
        for t in [1, 5, 20] {
            let post = exact_posterior(&p, t).unwrap();
            let precision = post.covariance.clone().try_inverse().unwrap();
            let eig = nalgebra::SymmetricEigen::new((&precision + precision.transpose()) * 0.5);
            assert!(eig.eigenvalues.min() >= 1.0 - 1e-9);
            assert!((&post.covariance - post.covariance.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn posterior_means_approach_hidden_parameter() {
        for seed in 0..10 {
            let p = sample_synthetic_problem(4, 200, seed).unwrap();
            let u = DVector::from_column_slice(&p.u);
            let err = |t: usize| (exact_posterior(&p, t).unwrap().mean - &u).norm();
            let errs: Vec<f64> = [5, 20, 50, 200].iter().map(|&t| err(t)).collect();
            assert!(errs.windows(2).all(|w| w[1] < w[0]), "seed {seed}: {errs:?}");
            let exp_err = |t: usize| (expected_posterior(&p.u, t).unwrap().mean - &u).norm();
            assert!(exp_err(200) < exp_err(20));
            let kl = crate::metrics::kl_gaussians(&expected_posterior(&p.u, 200).unwrap(), &exact_posterior(&p, 200).unwrap())
                .unwrap();
            assert!(kl.is_finite() && kl < 10.0, "seed {seed}: kl {kl}");
        }
    }

    #[test]
    fn expected_posterior_cases() {
        let prior = expected_posterior(&[0.3, 0.1, 2.0], 0).unwrap();
        assert_eq!(prior.mean, DVector::zeros(3));
        assert_eq!(prior.covariance, DMatrix::identity(3, 3));
        let one = expected_posterior(&[2.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(one.mean, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(one.covariance, DMatrix::identity(3, 3) * 0.5);
        let late = expected_posterior(&[2.0, 0.0, 0.0], 1_000_000).unwrap();
        assert!((late.mean[0] - 2.0).abs() < 1e-5 && late.covariance[(0, 0)] < 1e-5);
    }

    #[test]
    fn pose_round_trip_and_canonicalization() {
        assert_eq!(PoseState::unpack(&[0.0; 6]).unwrap(), PoseState::identity());
        assert_eq!(PoseState::identity().rotation_matrix(), Matrix3::identity());
        let v = [0.1, -0.2, 0.3, 0.5, 1.0, -1.5];
        assert_eq!(PoseState::unpack(&v).unwrap().pack().as_slice(), &v);

        let omega = Vector3::new(0.0, 0.0, 1.5 * PI);
        let c = canonical_axis_angle(omega);
        assert!((c - Vector3::new(0.0, 0.0, -0.5 * PI)).norm() < 1e-12);
        let (ra, rb) = (Rotation3::new(omega).into_inner(), Rotation3::new(c).into_inner());
        assert!((ra - rb).amax() < 1e-10);
    }

    proptest! {
        #[test]
        fn canonicalization_keeps_rotation(x in -20.0f64..20.0, y in -20.0f64..20.0, z in -20.0f64..20.0) {
            let omega = Vector3::new(x, y, z);
            let c = canonical_axis_angle(omega);
            prop_assert!(c.norm() <= PI + 1e-12);
            let (ra, rb) = (Rotation3::new(omega).into_inner(), Rotation3::new(c).into_inner());
            prop_assert!((ra - rb).amax() < 1e-10);
            prop_assert!((rb.transpose() * rb - Matrix3::identity()).amax() < 1e-10);
            prop_assert!((rb.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pose_problem_properties() {
        assert!(make_pose_problem(2, 0.1, 0).is_err());
        assert!(make_pose_problem(4, 0.0, 0).is_err());

        let clean = make_pose_problem_with_noise(10, 0.01, 0.0, 5).unwrap();
        let truth = clean.true_pose.pack();
        assert!(clean.loss(0, truth.as_slice()).unwrap() < 1e-20);

        let noisy = make_pose_problem(10, 0.01, 5).unwrap();
        let (_, res) = noisy.residuals(truth.as_slice()).unwrap();
        let l = noisy.loss(0, truth.as_slice()).unwrap();
        let resid: f64 = res.iter().map(Vector3::norm_squared).sum::<f64>() / (2.0 * 0.01 * 0.01);
        assert!((l - resid).abs() < 1e-9 * l);

        // identity truth, no noise: observations equal the model points
        let id = PoseRegistrationLoss::new(
            clean.model_points.clone(),
            clean.model_points.clone(),
            0.1,
            PoseState::identity(),
        )
        .unwrap();
        assert_eq!(id.loss(0, &[0.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn pose_loss_ignores_correspondence_order() {
        let p = make_pose_problem(9, 0.05, 2).unwrap();
        let mut order: Vec<usize> = (0..9).collect();
        order.reverse();
        order.swap(1, 4);
        let q = PoseRegistrationLoss::new(
            order.iter().map(|&i| p.model_points[i]).collect(),
            order.iter().map(|&i| p.observed_points[i]).collect(),
            p.sigma,
            p.true_pose,
        )
        .unwrap();
        let x = [0.3, 0.1, -0.2, 0.4, -0.9, 0.2];
        let (a, b) = (p.loss(0, &x).unwrap(), q.loss(0, &x).unwrap());
        assert!((a - b).abs() <= 1e-12 * a);
    }
}
