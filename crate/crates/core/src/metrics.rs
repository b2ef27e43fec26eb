//! Evaluation metrics: Gaussian fits and KL divergence, exact Wasserstein
//! distance by optimal assignment, the Wasserstein tracking bound and pose
//! errors.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::flow::Ensemble;
use crate::likelihoods::PoseState;
use crate::rng::{self, Domain};

/// Mean and covariance of a multivariate Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    /// Checks shapes, finiteness and symmetry (to 1e-12 relative). Positive
    /// definiteness is checked where it is needed.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "covariance",
                expected: d,
                found: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                context: "gaussian summary",
                particle: 0,
            });
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 * covariance.amax().max(1.0) {
            return Err(Error::invalid("covariance", format!("asymmetry {asym:e}"), "must be symmetric"));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance.clone()).eigenvalues.min()
    }

    fn cholesky_lower(&self) -> Result<DMatrix<f64>> {
        self.covariance
            .clone()
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::NotPositiveDefinite {
                min_eigenvalue: self.min_eigenvalue(),
            })
    }
}

/// Default covariance ridge: `1e-6 * trace(cov) / d + 1e-12`.
pub fn default_ridge(covariance: &DMatrix<f64>) -> f64 {
    1e-6 * covariance.trace() / covariance.nrows() as f64 + 1e-12
}

fn sample_moments(ens: &Ensemble) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::TooFewParticles { needed: 2, found: n });
    }
    let d = ens.dim();
    let mut mean = DVector::zeros(d);
    for p in ens.particles() {
        mean += DVector::from_column_slice(p);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for p in ens.particles() {
        let c = DVector::from_column_slice(p) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// Sample mean and unbiased sample covariance plus `ridge * I`.
pub fn fit_gaussian(ens: &Ensemble, ridge: f64) -> Result<GaussianSummary> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge", ridge, "must be non-negative"));
    }
    let (mean, mut cov) = sample_moments(ens)?;
    for k in 0..ens.dim() {
        cov[(k, k)] += ridge;
    }
    GaussianSummary::new(mean, cov)
}

/// [`fit_gaussian`] with [`default_ridge`]; returns the ridge that was used.
pub fn fit_gaussian_auto(ens: &Ensemble) -> Result<(GaussianSummary, f64)> {
    let (mean, mut cov) = sample_moments(ens)?;
    let ridge = default_ridge(&cov);
    for k in 0..ens.dim() {
        cov[(k, k)] += ridge;
    }
    Ok((GaussianSummary::new(mean, cov)?, ridge))
}

/// `KL(P ‖ Q)` between Gaussians, via Cholesky factors.
pub fn kl_gaussians(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64> {
    let d = p.dim();
    if q.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "kl divergence",
            expected: d,
            found: q.dim(),
        });
    }
    let lp = p.cholesky_lower()?;
    let lq = q.cholesky_lower()?;
    let solve = |b: &DMatrix<f64>| {
        lq.solve_lower_triangular(b)
            .expect("cholesky factor has a positive diagonal")
    };
    let trace_term = solve(&lp).norm_squared();
    let diff = DMatrix::from_column_slice(d, 1, (&q.mean - &p.mean).as_slice());
    let maha = solve(&diff).norm_squared();
    let log_det = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace_term + maha - d as f64 + log_det(&lq) - log_det(&lp));
    Ok(kl.max(0.0))
}

/// An optimal matching between two equal-size point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    /// `permutation[i]` is the index in the second set matched to point `i`.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching on a square row-major cost matrix
/// (Kuhn–Munkres with dual potentials, `O(n³)`).
pub fn solve_assignment(cost: &[f64], n: usize) -> Result<AssignmentResult> {
    if cost.len() != n * n {
        return Err(Error::DimensionMismatch {
            context: "assignment cost matrix",
            expected: n * n,
            found: cost.len(),
        });
    }
    if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFiniteInput {
            context: "assignment cost",
            particle: k / n.max(1),
        });
    }
    let at = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    // 1-based potentials; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = at(r0, col) - u[r0] - v[col];
                if cur < min_slack[col] {
                    min_slack[col] = cur;
                    way[col] = col0;
                }
                if min_slack[col] < delta {
                    delta = min_slack[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_slack[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut permutation = vec![0; n];
    for col in 1..=n {
        permutation[owner[col] - 1] = col - 1;
    }
    let total_cost = permutation.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(AssignmentResult {
        permutation,
        total_cost,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `W(A, B) = min_π Σ_i metric(a_i, b_π(i))` (sum form, no `1/N`).
pub fn wasserstein_exact<M>(a: &Ensemble, b: &Ensemble, metric: M) -> Result<AssignmentResult>
where
    M: Fn(&[f64], &[f64]) -> f64,
{
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "wasserstein",
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for x in a.particles() {
        for z in b.particles() {
            cost.push(metric(x, z));
        }
    }
    solve_assignment(&cost, n)
}

/// Constants of the Wasserstein tracking bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremBoundParams {
    /// Initial Wasserstein distance.
    pub w0: f64,
    /// `N` times the maximum pointwise field discrepancy.
    pub eps: f64,
    /// Lipschitz constant of the true field.
    pub lipschitz_field: f64,
    /// Lipschitz constant of the metric.
    pub lipschitz_metric: f64,
    pub t: f64,
}

/// `(W0 + ε/L_F) exp(L_d L_F t) - ε/L_F`, evaluated as
/// `W0 e^x + (ε/L_F) expm1(x)` so that small `L_F` does not cancel.
pub fn theorem_rhs(p: &TheoremBoundParams) -> Result<f64> {
    if !(p.lipschitz_field > 0.0) {
        return Err(Error::invalid("L_F", p.lipschitz_field, "must be positive"));
    }
    if [p.w0, p.eps, p.lipschitz_metric, p.t].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::invalid("bound parameters", format!("{p:?}"), "must be non-negative"));
    }
    let x = p.lipschitz_metric * p.lipschitz_field * p.t;
    Ok(p.w0 * x.exp() + p.eps / p.lipschitz_field * x.exp_m1())
}

/// A linear test field `F(x) = A x` with a known growth direction.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub matrix: DMatrix<f64>,
    /// Unit eigenvector of the largest eigenvalue.
    pub growth_direction: DVector<f64>,
}

impl LinearField {
    /// Random symmetric `A = Q diag(1, λ_2, ..) Qᵀ` with `λ_k ~ U[-1, 1)`, so
    /// `|A|₂ = 1` and perturbations along `Q e_1` grow at exactly that rate.
    pub fn random_symmetric(d: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut r = rng::stream(seed, Domain::TheoremCheck, 1, 0);
        let g = DMatrix::from_vec(d, d, rng::standard_normal_vec(&mut r, d * d));
        let q = g.qr().q();
        let mut lambda = DVector::from_fn(d, |_, _| r.random::<f64>() * 2.0 - 1.0);
        lambda[0] = 1.0;
        let matrix = &q * DMatrix::from_diagonal(&lambda) * q.transpose();
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Self {
            growth_direction: q.column(0).into_owned(),
            matrix,
        }
    }

    pub fn zero(d: usize) -> Self {
        let mut e = DVector::zeros(d);
        e[0] = 1.0;
        Self {
            matrix: DMatrix::zeros(d, d),
            growth_direction: e,
        }
    }

    pub fn spectral_norm(&self) -> f64 {
        self.matrix.clone().svd(false, false).singular_values.max()
    }
}

/// Configuration of the empirical bound check.
#[derive(Debug, Clone)]
pub struct TheoremCheck {
    pub n: usize,
    pub dim: usize,
    pub field: LinearField,
    pub eps: f64,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    /// Magnitude of the initial offset `z_0 - x_0` per particle; zero gives
    /// identical initial ensembles.
    pub initial_offset: f64,
    /// Place offsets and perturbations along the field's growth direction
    /// (the configuration in which the bound is tight); otherwise use random
    /// unit directions per particle.
    pub aligned: bool,
    /// Lipschitz constant used in the bound; `None` uses `|A|₂`.
    pub lipschitz_override: Option<f64>,
    pub checkpoints: usize,
    /// Allowed ratio of observed distance to bound.
    pub slack: f64,
}

impl TheoremCheck {
    pub fn new(n: usize, dim: usize, field: LinearField, eps: f64, t_end: f64, dt: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            field,
            eps,
            t_end,
            dt,
            seed,
            initial_offset: 0.01,
            aligned: true,
            lipschitz_override: None,
            checkpoints: 100,
            slack: 1.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct TheoremReport {
    pub checkpoints: Vec<Checkpoint>,
    pub w0: f64,
    pub lipschitz_field: f64,
    /// Largest `observed / bound` (0 when both vanish).
    pub max_ratio: f64,
    pub passed: bool,
}

fn ratio(observed: f64, bound: f64) -> f64 {
    if observed <= 0.0 {
        0.0
    } else if bound <= 0.0 {
        f64::INFINITY
    } else {
        observed / bound
    }
}

/// Evolves `x_i` under `F(x) = A x` and `z_i` under `A x + δ_i` with
/// `|δ_i| = ε / N` by explicit Euler steps and compares the exact assignment
/// distance with [`theorem_rhs`] (Euclidean metric, `L_d = 1`).
pub fn empirical_theorem_check(check: &TheoremCheck) -> Result<TheoremReport> {
    let (n, d) = (check.n, check.dim);
    if n == 0 {
        return Err(Error::TooFewParticles { needed: 1, found: 0 });
    }
    if check.field.matrix.nrows() != d || check.field.matrix.ncols() != d {
        return Err(Error::DimensionMismatch {
            context: "linear field",
            expected: d,
            found: check.field.matrix.nrows(),
        });
    }
    if !(check.dt > 0.0 && check.dt <= 1e-3 * check.t_end * (1.0 + 1e-9)) {
        return Err(Error::invalid("dt", check.dt, "must be positive and at most 1e-3 * t_end"));
    }
    if check.checkpoints == 0 {
        return Err(Error::invalid("checkpoints", 0, "must be at least 1"));
    }
    let mut r = rng::stream(check.seed, Domain::TheoremCheck, 0, 0);
    let per_particle = check.eps / n as f64;
    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let mut deltas = Vec::with_capacity(n);
    for _ in 0..n {
        let x = DVector::from_vec(rng::standard_normal_vec(&mut r, d));
        let dir = if check.aligned {
            let sign = if rng::standard_normal_vec(&mut r, 1)[0] < 0.0 { -1.0 } else { 1.0 };
            &check.field.growth_direction * sign
        } else {
            let v = DVector::from_vec(rng::standard_normal_vec(&mut r, d));
            let norm = v.norm();
            v / norm
        };
        zs.push(&x + &dir * check.initial_offset);
        deltas.push(dir * per_particle);
        xs.push(x);
    }
    let lipschitz_field = check.lipschitz_override.unwrap_or_else(|| check.field.spectral_norm());
    let to_ensemble = |pts: &[DVector<f64>]| {
        Ensemble::from_flat(d, pts.iter().flat_map(|p| p.iter().copied()).collect(), 0)
    };
    let distance = |xs: &[DVector<f64>], zs: &[DVector<f64>]| -> Result<f64> {
        Ok(wasserstein_exact(&to_ensemble(xs)?, &to_ensemble(zs)?, euclidean)?.total_cost)
    };
    let w0 = distance(&xs, &zs)?;
    let steps = (check.t_end / check.dt).round() as usize;
    let every = (steps / check.checkpoints).max(1);
    let a = &check.field.matrix;
    let mut checkpoints = Vec::new();
    for k in 0..=steps {
        if k % every == 0 || k == steps {
            let t = k as f64 * check.dt;
            let observed = distance(&xs, &zs)?;
            let bound = theorem_rhs(&TheoremBoundParams {
                w0,
                eps: check.eps,
                lipschitz_field,
                lipschitz_metric: 1.0,
                t,
            })?;
            checkpoints.push(Checkpoint { t, observed, bound });
        }
        if k == steps {
            break;
        }
        for ((x, z), delta) in xs.iter_mut().zip(zs.iter_mut()).zip(&deltas) {
            let fx = a * &*x;
            let fz = a * &*z + delta;
            *x += fx * check.dt;
            *z += fz * check.dt;
        }
    }
    let max_ratio = checkpoints
        .iter()
        .map(|c| ratio(c.observed, c.bound))
        .fold(0.0, f64::max);
    let passed = checkpoints
        .iter()
        .all(|c| c.observed <= check.slack * c.bound + 1e-12);
    Ok(TheoremReport {
        checkpoints,
        w0,
        lipschitz_field,
        max_ratio,
        passed,
    })
}

/// Translation error in centimeters and signed geodesic rotation error in
/// degrees. The sign is that of the relative rotation axis projected on the
/// true rotation axis (positive when the truth is the identity).
pub fn pose_errors(est: &PoseState, truth: &PoseState) -> (f64, f64) {
    let translation_cm = (est.translation - truth.translation).norm() * 100.0;
    let rel = truth.rotation_matrix().transpose() * est.rotation_matrix();
    let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = cos.acos().to_degrees();
    let axis = Rotation3::from_matrix_unchecked(rel).scaled_axis();
    let projection = axis.dot(&truth.rotation);
    let sign = if projection < 0.0 { -1.0 } else { 1.0 };
    (translation_cm, sign * angle)
}

/// Mean pose of an ensemble of packed 6-vector poses: arithmetic mean of the
/// translations and the chordal mean of the rotations (projection of the
/// averaged rotation matrices back onto SO(3)).
pub fn mean_pose(ens: &Ensemble) -> Result<PoseState> {
    if ens.dim() != 6 {
        return Err(Error::DimensionMismatch {
            context: "pose ensemble",
            expected: 6,
            found: ens.dim(),
        });
    }
    let n = ens.len() as f64;
    let mut t = Vector3::zeros();
    let mut m = Matrix3::zeros();
    for p in ens.particles() {
        t += Vector3::new(p[0], p[1], p[2]);
        m += Rotation3::new(Vector3::new(p[3], p[4], p[5])).into_inner();
    }
    let svd = (m / n).svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut fix = Matrix3::identity();
    fix[(2, 2)] = (u * v_t).determinant().signum();
    let r = Rotation3::from_matrix_unchecked(u * fix * v_t);
    Ok(PoseState::new(t / n, r.scaled_axis()).canonicalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ens(points: &[Vec<f64>]) -> Ensemble {
        Ensemble::from_particles(points, 0).unwrap()
    }

    #[test]
    fn two_point_fit() {
        let e = ens(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        let g = fit_gaussian(&e, 0.0).unwrap();
        assert_eq!(g.mean, DVector::zeros(3));
        assert_eq!(g.covariance, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0, 0.0])));
        let g = fit_gaussian(&e, 0.5).unwrap();
        assert_eq!(g.covariance[(0, 0)], 2.5);
        assert_eq!(g.covariance[(1, 1)], 0.5);
        assert!(matches!(fit_gaussian(&ens(&[vec![1.0, 2.0, 3.0]]), 0.0), Err(Error::TooFewParticles { .. })));
    }

    #[test]
    fn identical_particles_fit_is_ridge() {
        let e = ens(&vec![vec![0.5, 0.5, 0.5]; 4]);
        let (g, ridge) = fit_gaussian_auto(&e).unwrap();
        assert_eq!(ridge, 1e-12);
        assert_eq!(g.covariance, DMatrix::identity(3, 3) * 1e-12);
        assert!(g.min_eigenvalue() > 0.0);
    }

    #[test]
    fn fit_recovers_sampled_gaussian() {
        let mu = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 0.8, 0.0, -0.3, 0.2, 0.6]);
        let sigma = &l * l.transpose();
        let mut r = rng::stream(1, Domain::Testing, 3, 0);
        let n = 100_000;
        let mut flat = Vec::with_capacity(3 * n);
        for _ in 0..n {
            let z = DVector::from_vec(rng::standard_normal_vec(&mut r, 3));
            flat.extend((&mu + &l * z).iter());
        }
        let g = fit_gaussian(&Ensemble::from_flat(3, flat, 0).unwrap(), 0.0).unwrap();
        assert!((&g.mean - &mu).norm() / mu.norm() < 0.02);
        assert!((&g.covariance - &sigma).norm() / sigma.norm() < 0.02);
    }

    #[test]
    fn kl_identities() {
        let a = GaussianSummary::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), DMatrix::identity(3, 3) * 2.0).unwrap();
        assert!(kl_gaussians(&a, &a).unwrap() <= 1e-10);
        let mu = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let p = GaussianSummary::new(mu.clone(), DMatrix::identity(3, 3)).unwrap();
        let q = GaussianSummary::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        assert!((kl_gaussians(&p, &q).unwrap() - 0.5 * mu.norm_squared()).abs() < 1e-12);
        let singular = GaussianSummary::new(DVector::zeros(3), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]))).unwrap();
        match kl_gaussians(&singular, &q) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert!(min_eigenvalue.abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        // scalar variance case: KL(N(0,s) || N(0,1)) = ½(s - 1 - ln s) per coordinate
        let s = 0.25;
        let p = GaussianSummary::new(DVector::zeros(3), DMatrix::identity(3, 3) * s).unwrap();
        let expected = 1.5 * (s - 1.0 - f64::ln(s));
        assert!((kl_gaussians(&p, &q).unwrap() - expected).abs() < 1e-12);
    }

    fn random_spd(seed: u64, d: usize) -> GaussianSummary {
        let mut r = rng::stream(seed, Domain::Testing, 4, 0);
        let g = DMatrix::from_vec(d, d, rng::standard_normal_vec(&mut r, d * d));
        let cov = &g * g.transpose() / d as f64 + DMatrix::identity(d, d) * 0.2;
        let cov = (&cov + cov.transpose()) * 0.5;
        GaussianSummary::new(DVector::from_vec(rng::standard_normal_vec(&mut r, d)), cov).unwrap()
    }

    #[test]
    fn kl_is_nonnegative_and_zero_only_on_equal_inputs() {
        for s in 0..50 {
            let p = random_spd(s, 4);
            let q = random_spd(s + 1000, 4);
            assert!(kl_gaussians(&p, &q).unwrap() > 1e-6);
            assert!(kl_gaussians(&p, &p).unwrap() <= 1e-10);
        }
    }

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, perm: &mut Vec<usize>, best: &mut f64) {
            if row == n {
                let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
                if total < *best {
                    *best = total;
                }
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, n, row + 1, used, perm, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn assignment_matches_enumeration() {
        for seed in 0..60u64 {
            let n = 1 + (seed as usize % 6);
            let mut r = rng::stream(seed, Domain::Testing, 5, 0);
            let cost: Vec<f64> = rng::standard_normal_vec(&mut r, n * n).iter().map(|v| v.abs() * 3.0).collect();
            let res = solve_assignment(&cost, n).unwrap();
            assert_eq!(res.total_cost, brute_force(&cost, n), "seed {seed}");
            let mut seen = res.permutation.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn wasserstein_basic_cases() {
        let a = ens(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]);
        let same = wasserstein_exact(&a, &a, euclidean).unwrap();
        assert_eq!(same.total_cost, 0.0);
        assert_eq!(same.permutation, vec![0, 1, 2]);
        let one = ens(&[vec![0.0, 0.0, 0.0]]);
        let other = ens(&[vec![3.0, 4.0, 0.0]]);
        assert_eq!(wasserstein_exact(&one, &other, euclidean).unwrap().total_cost, 5.0);
        assert!(matches!(wasserstein_exact(&a, &one, euclidean), Err(Error::SizeMismatch { .. })));
    }

    fn random_cloud(seed: u64, n: usize) -> Ensemble {
        let mut r = rng::stream(seed, Domain::Testing, 6, 0);
        Ensemble::from_flat(3, rng::standard_normal_vec(&mut r, 3 * n), 0).unwrap()
    }

    #[test]
    fn wasserstein_metric_properties() {
        for s in 0..20 {
            let (a, b, c) = (random_cloud(3 * s, 8), random_cloud(3 * s + 1, 8), random_cloud(3 * s + 2, 8));
            let w = |x: &Ensemble, y: &Ensemble| wasserstein_exact(x, y, euclidean).unwrap().total_cost;
            assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
            assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-9);
            let v = [0.5, -2.0, 8.0];
            let shifted = w(&a.translated(&v).unwrap(), &b.translated(&v).unwrap());
            assert!((shifted - w(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn theorem_rhs_cases() {
        let p = TheoremBoundParams {
            w0: 2.0,
            eps: 0.5,
            lipschitz_field: 1.3,
            lipschitz_metric: 1.0,
            t: 0.0,
        };
        assert_eq!(theorem_rhs(&p).unwrap(), 2.0);
        let pure = TheoremBoundParams { eps: 0.0, t: 0.7, ..p };
        assert!((theorem_rhs(&pure).unwrap() - 2.0 * (1.3f64 * 0.7).exp()).abs() < 1e-12);
        let unit = TheoremBoundParams {
            w0: 0.0,
            eps: 1.0,
            lipschitz_field: 1.0,
            lipschitz_metric: 1.0,
            t: 1.0,
        };
        assert!((theorem_rhs(&unit).unwrap() - (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!(theorem_rhs(&TheoremBoundParams { lipschitz_field: 0.0, ..unit }).is_err());
    }

    proptest! {
        #[test]
        fn theorem_rhs_is_monotone(w0 in 0.0f64..5.0, eps in 0.0f64..5.0, lf in 0.01f64..3.0, t in 0.0f64..3.0, bump in 0.0f64..1.0) {
            let base = TheoremBoundParams { w0, eps, lipschitz_field: lf, lipschitz_metric: 1.0, t };
            let b = theorem_rhs(&base).unwrap();
            let more_w0 = theorem_rhs(&TheoremBoundParams { w0: w0 + bump, ..base }).unwrap();
            let more_eps = theorem_rhs(&TheoremBoundParams { eps: eps + bump, ..base }).unwrap();
            let later = theorem_rhs(&TheoremBoundParams { t: t + bump, ..base }).unwrap();
            prop_assert!(more_w0 >= b && more_eps >= b && later >= b);
        }
    }

    #[test]
    fn theorem_check_trivial_and_zero_field() {
        let field = LinearField::random_symmetric(3, 1);
        assert!((field.spectral_norm() - 1.0).abs() < 1e-12);
        let mut check = TheoremCheck::new(8, 3, field, 0.0, 1.0, 1e-3, 1);
        check.initial_offset = 0.0;
        let report = empirical_theorem_check(&check).unwrap();
        assert!(report.checkpoints.len() >= 100);
        assert!(report.checkpoints.iter().all(|c| c.observed == 0.0));
        assert!(report.passed);

        // No flow: W grows as eps * t; compare against the bound at tiny L_F.
        let mut check = TheoremCheck::new(8, 3, LinearField::zero(3), 0.2, 1.0, 1e-3, 2);
        check.initial_offset = 0.0;
        check.lipschitz_override = Some(1e-6);
        let report = empirical_theorem_check(&check).unwrap();
        for c in &report.checkpoints {
            assert!((c.observed - 0.2 * c.t).abs() < 1e-9, "{c:?}");
            assert!(c.observed <= c.bound + 1e-9);
        }
        assert!(report.passed);

        let mut bad = TheoremCheck::new(8, 3, LinearField::zero(3), 0.2, 1.0, 0.01, 2);
        assert!(empirical_theorem_check(&bad).is_err());
        bad.dt = 1e-3;
        bad.field = LinearField::zero(4);
        assert!(empirical_theorem_check(&bad).is_err());
    }

    #[test]
    fn pose_error_cases() {
        let truth = PoseState::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 0.4));
        assert_eq!(pose_errors(&truth, &truth), (0.0, 0.0));
        let shifted = PoseState::new(truth.translation + Vector3::new(0.01, 0.0, 0.0), truth.rotation);
        let (t, r) = pose_errors(&shifted, &truth);
        assert!((t - 1.0).abs() < 1e-12 && r == 0.0);
        let turned = PoseState::new(truth.translation, Vector3::new(0.0, 0.0, 0.4 + PI / 2.0));
        assert!((pose_errors(&turned, &truth).1 - 90.0).abs() < 1e-9);
        let back = PoseState::new(truth.translation, Vector3::new(0.0, 0.0, 0.4 - PI / 2.0));
        assert!((pose_errors(&back, &truth).1 + 90.0).abs() < 1e-9);
    }

    #[test]
    fn mean_pose_of_equivalent_representatives() {
        let w = Vector3::new(0.0, 0.0, 1.5 * PI);
        let alt = crate::likelihoods::canonical_axis_angle(w);
        let e = Ensemble::from_particles(&[[0.0, 0.0, 0.0, w.x, w.y, w.z], [0.2, 0.0, 0.0, alt.x, alt.y, alt.z]], 0).unwrap();
        let m = mean_pose(&e).unwrap();
        assert!((m.translation - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
        assert!((m.rotation - alt).norm() < 1e-9);
    }
}
