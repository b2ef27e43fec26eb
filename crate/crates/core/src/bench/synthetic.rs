use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, RidgeSetting};
use super::{best_rows, error_status, ExperimentOutput, RunRecord, STATUS_OK};
use crate::baselines::{self, MclConfig};
use crate::error::Result;
use crate::flow::{self, Ensemble, FlowConfig};
use crate::likelihoods::{exact_posterior, expected_posterior, sample_synthetic_problem, QuadraticProjectionLoss};
use crate::metrics::{fit_gaussian, fit_gaussian_auto, kl_gaussians, GaussianSummary};
use crate::rng::{self, Domain};

/// KL metrics recorded per step: fitted ensemble against the expected and
/// the exact posterior, in both directions.
pub const KL_METRICS: [&str; 4] = ["kl_expected", "kl_expected_rev", "kl_exact", "kl_exact_rev"];

/// `n` draws from the standard normal prior, shared by every method for a
/// given seed.
pub fn initial_prior_ensemble(d: usize, n: usize, seed: u64) -> Result<Ensemble> {
    let mut r = rng::stream(seed, Domain::InitialParticles, d as u64, n as u64);
    Ensemble::from_flat(d, rng::standard_normal_vec(&mut r, n * d), 0)
}

struct RunKey {
    d: usize,
    n: usize,
    method: Method,
    param: f64,
    seed: u64,
}

struct Targets {
    expected: Vec<GaussianSummary>,
    exact: Vec<GaussianSummary>,
}

fn targets(problem: &QuadraticProjectionLoss, horizon: usize) -> Result<Targets> {
    let mut expected = Vec::with_capacity(horizon + 1);
    let mut exact = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        expected.push(expected_posterior(&problem.u, t)?);
        exact.push(exact_posterior(problem, t)?);
    }
    Ok(Targets { expected, exact })
}

fn base_record(cfg: &ExperimentConfig, key: &RunKey) -> RunRecord {
    let (eta, epsilon, gamma) = match key.method {
        Method::Flow => (Some(key.param), None, Some(cfg.gamma)),
        Method::Gd => (Some(key.param), None, None),
        Method::Mcl => (None, Some(key.param), None),
    };
    RunRecord {
        experiment: "synthetic".into(),
        method: key.method.name().into(),
        d: key.d,
        n: key.n,
        seed: Some(key.seed),
        eta,
        epsilon,
        gamma,
        ridge: None,
        step: 0,
        metric: String::new(),
        value: None,
        status: STATUS_OK.into(),
    }
}

fn measure(cfg: &ExperimentConfig, key: &RunKey, targets: &Targets, ens: &Ensemble, out: &mut Vec<RunRecord>) {
    let step = ens.step_index();
    let template = RunRecord {
        step,
        ..base_record(cfg, key)
    };
    let fit = match cfg.ridge {
        RidgeSetting::Auto => fit_gaussian_auto(ens),
        RidgeSetting::Fixed(r) => fit_gaussian(ens, r).map(|g| (g, r)),
    };
    let (fitted, ridge) = match fit {
        Ok(f) => f,
        Err(e) => {
            let status = error_status(&e);
            for metric in KL_METRICS {
                out.push(RunRecord {
                    metric: metric.into(),
                    status: status.clone(),
                    ..template.clone()
                });
            }
            return;
        }
    };
    let pairs = [
        (&fitted, &targets.expected[step]),
        (&targets.expected[step], &fitted),
        (&fitted, &targets.exact[step]),
        (&targets.exact[step], &fitted),
    ];
    for (metric, (p, q)) in KL_METRICS.iter().zip(pairs) {
        let (value, status) = match kl_gaussians(p, q) {
            Ok(v) => (Some(v), STATUS_OK.to_string()),
            Err(e) => (None, error_status(&e)),
        };
        out.push(RunRecord {
            ridge: Some(ridge),
            metric: (*metric).into(),
            value,
            status,
            ..template.clone()
        });
    }
}

fn run_one(cfg: &ExperimentConfig, key: &RunKey) -> Vec<RunRecord> {
    let mut out = Vec::new();
    let fail = |out: &mut Vec<RunRecord>, step: usize, e: &crate::Error| {
        out.push(RunRecord {
            step,
            metric: "run".into(),
            status: error_status(e),
            ..base_record(cfg, key)
        })
    };
    let prepared = sample_synthetic_problem(key.d, cfg.n_steps, key.seed)
        .and_then(|p| targets(&p, cfg.n_steps).map(|t| (p, t)))
        .and_then(|(p, t)| initial_prior_ensemble(key.d, key.n, key.seed).map(|e| (p, t, e)));
    let (problem, targets, initial) = match prepared {
        Ok(x) => x,
        Err(e) => {
            fail(&mut out, 0, &e);
            return out;
        }
    };
    measure(cfg, key, &targets, &initial, &mut out);
    let result = match key.method {
        Method::Flow => FlowConfig::new(key.d, cfg.gamma, key.param, key.n, cfg.n_steps).and_then(|fc| {
            flow::run(&initial, &problem, &fc, |_, e| measure(cfg, key, &targets, e, &mut out)).map(|_| ())
        }),
        Method::Mcl => MclConfig::new(key.param, key.n, key.seed).and_then(|mc| {
            baselines::mcl_run(&initial, &problem, &mc, cfg.n_steps, |_, w| {
                measure(cfg, key, &targets, &w.particles, &mut out)
            })
            .map(|_| ())
        }),
        Method::Gd => baselines::gradient_descent_run(&initial, &problem, key.param, cfg.n_steps, |_, e| {
            measure(cfg, key, &targets, e, &mut out)
        })
        .map(|_| ()),
    };
    if let Err(e) = result {
        let step = match &e {
            crate::Error::RunAborted { step, .. } => *step,
            _ => 0,
        };
        fail(&mut out, step, &e);
    }
    out
}

/// Tracks the synthetic posterior with every configured method over its
/// hyperparameter grid, all seeds, dimensions and ensemble sizes.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.n_particles {
            for &method in &cfg.methods {
                for param in cfg.grid_values(method, d) {
                    for &seed in &cfg.seeds {
                        keys.push(RunKey { d, n, method, param, seed });
                    }
                }
            }
        }
    }
    let mut records: Vec<RunRecord> = keys.par_iter().map(|k| run_one(cfg, k)).flatten().collect();
    let mut best = Vec::new();
    for &d in &cfg.dims {
        for &n in &cfg.n_particles {
            for &method in &cfg.methods {
                let grid = cfg.grid_values(method, d);
                best.extend(best_rows(
                    &records,
                    "synthetic",
                    method,
                    d,
                    n,
                    &grid,
                    cfg.seeds.len(),
                    cfg.n_steps,
                    "kl_expected",
                ));
            }
        }
    }
    records.extend(best);
    Ok(ExperimentOutput { records, passed: None })
}
