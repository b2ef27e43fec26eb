use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Method, PoseSettings};
use super::{best_rows, error_status, ExperimentOutput, RunRecord, STATUS_OK};
use crate::baselines;
use crate::error::{Error, Result};
use crate::flow::{self, Ensemble, FlowConfig};
use crate::likelihoods::{make_pose_problem_with_noise, PoseRegistrationLoss, PoseState};
use crate::metrics::{mean_pose, pose_errors};
use crate::rng::{self, Domain};

pub const POSE_METRICS: [&str; 2] = ["translation_cm", "rotation_deg"];

fn random_unit<R: Rng + ?Sized>(r: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_vec(rng::standard_normal_vec(r, 3));
        if v.norm() > 1e-12 {
            return v.normalize();
        }
    }
}

/// Initial particles for one seed. A guess is placed `settings.init_translation`
/// meters and `settings.init_rotation` radians from the truth in random
/// directions; particles scatter around it with translation offsets uniform in
/// a cube of half-width `spread_translation` and rotation offsets of random
/// axis and angle uniform in `[0, spread_rotation]`.
pub fn initial_pose_ensemble(truth: &PoseState, n: usize, settings: &PoseSettings, seed: u64) -> Result<Ensemble> {
    let mut r = rng::stream(seed, Domain::InitialParticles, 6, n as u64);
    let guess_t = truth.translation + random_unit(&mut r) * settings.init_translation;
    let guess_r = Rotation3::new(random_unit(&mut r) * settings.init_rotation) * Rotation3::new(truth.rotation);
    let mut coords = Vec::with_capacity(6 * n);
    for _ in 0..n {
        let t = guess_t + Vector3::from_fn(|_, _| (2.0 * r.random::<f64>() - 1.0) * settings.spread_translation);
        let angle = r.random::<f64>() * settings.spread_rotation;
        let rot = (Rotation3::new(random_unit(&mut r) * angle) * guess_r).scaled_axis();
        coords.extend_from_slice(PoseState::new(t, rot).pack().as_slice());
    }
    Ensemble::from_flat(6, coords, 0)
}

fn measure(template: &RunRecord, ens: &Ensemble, truth: &PoseState, out: &mut Vec<RunRecord>) {
    let step = ens.step_index();
    match mean_pose(ens) {
        Ok(est) => {
            let (cm, deg) = pose_errors(&est, truth);
            for (metric, value) in POSE_METRICS.iter().zip([cm, deg]) {
                out.push(RunRecord {
                    step,
                    metric: (*metric).into(),
                    value: Some(value),
                    ..template.clone()
                });
            }
        }
        Err(e) => {
            for metric in POSE_METRICS {
                out.push(RunRecord {
                    step,
                    metric: metric.into(),
                    status: error_status(&e),
                    ..template.clone()
                });
            }
        }
    }
}

fn run_one(cfg: &ExperimentConfig, method: Method, param: f64, n: usize, seed: u64) -> Vec<RunRecord> {
    let template = RunRecord {
        experiment: "pose".into(),
        method: method.name().into(),
        d: 6,
        n,
        seed: Some(seed),
        eta: Some(param),
        epsilon: None,
        gamma: (method == Method::Flow).then_some(cfg.gamma),
        ridge: None,
        step: 0,
        metric: String::new(),
        value: None,
        status: STATUS_OK.into(),
    };
    let mut out = Vec::new();
    let prepared = make_pose_problem_with_noise(cfg.pose.points, cfg.pose.sigma, cfg.pose.noise, seed).and_then(|p| {
        initial_pose_ensemble(&p.true_pose, n, &cfg.pose, seed).map(|e| (p, e))
    });
    let (problem, initial): (PoseRegistrationLoss, Ensemble) = match prepared {
        Ok(x) => x,
        Err(e) => {
            out.push(RunRecord {
                metric: "run".into(),
                status: error_status(&e),
                ..template
            });
            return out;
        }
    };
    let truth = problem.true_pose;
    measure(&template, &initial, &truth, &mut out);
    let result = match method {
        Method::Flow => FlowConfig::new(6, cfg.gamma, param, n, cfg.n_steps)
            .and_then(|fc| flow::run(&initial, &problem, &fc, |_, e| measure(&template, e, &truth, &mut out)).map(|_| ())),
        Method::Gd => baselines::gradient_descent_run(&initial, &problem, param, cfg.n_steps, |_, e| {
            measure(&template, e, &truth, &mut out)
        })
        .map(|_| ()),
        Method::Mcl => Err(Error::invalid("method", "mcl", "pose registration compares flow and gd")),
    };
    if let Err(e) = result {
        let step = match &e {
            Error::RunAborted { step, .. } => *step,
            _ => 0,
        };
        out.push(RunRecord {
            step,
            metric: "run".into(),
            status: error_status(&e),
            ..template
        });
    }
    out
}

/// Registers a point set under a random rigid motion with the flow and with
/// independent gradient descent, starting both from the same particles.
pub fn run_pose(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut keys = Vec::new();
    for &n in &cfg.n_particles {
        for &method in &cfg.methods {
            for param in cfg.grid_values(method, 6) {
                for &seed in &cfg.seeds {
                    keys.push((method, param, n, seed));
                }
            }
        }
    }
    let mut records: Vec<RunRecord> = keys
        .par_iter()
        .map(|&(m, p, n, s)| run_one(cfg, m, p, n, s))
        .flatten()
        .collect();
    let mut best = Vec::new();
    for &n in &cfg.n_particles {
        for &method in &cfg.methods {
            let grid = cfg.grid_values(method, 6);
            best.extend(best_rows(
                &records,
                "pose",
                method,
                6,
                n,
                &grid,
                cfg.seeds.len(),
                cfg.n_steps,
                "translation_cm",
            ));
        }
    }
    records.extend(best);
    Ok(ExperimentOutput { records, passed: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::ExperimentKind;

    #[test]
    fn initial_ensemble_surrounds_offset_guess() {
        let truth = PoseState::new(Vector3::new(0.1, -0.2, 0.3), Vector3::new(0.5, 0.2, -1.0));
        let settings = ExperimentConfig::for_experiment(ExperimentKind::Pose).pose;
        let ens = initial_pose_ensemble(&truth, 50, &settings, 4).unwrap();
        let max_cm = 100.0 * (settings.init_translation + settings.spread_translation * 3f64.sqrt());
        let max_deg = (settings.init_rotation + settings.spread_rotation).to_degrees();
        for p in ens.particles() {
            let (cm, deg) = pose_errors(&PoseState::unpack(p).unwrap(), &truth);
            assert!(cm <= max_cm + 1e-9, "{cm}");
            assert!(deg.abs() <= max_deg + 1e-6, "{deg}");
        }
        let (cm, _) = pose_errors(&mean_pose(&ens).unwrap(), &truth);
        assert!(cm > 50.0 * settings.init_translation);
    }

    #[test]
    fn both_methods_shrink_error() {
        let mut cfg = ExperimentConfig::for_experiment(ExperimentKind::Pose);
        cfg.seeds = vec![0];
        cfg.n_particles = vec![20];
        let out = run_pose(&cfg).unwrap();
        for method in [Method::Flow, Method::Gd] {
            let best = out.best(method, 6, 20).unwrap();
            let series = out.series(method, 6, 20, best.eta.unwrap(), "translation_cm");
            let v = &series[0].1;
            assert!(v.last().unwrap().unwrap() < v[0].unwrap(), "{method}: {v:?}");
        }
    }
}
