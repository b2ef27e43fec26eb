//! Experiment configuration: `key=value` files with `#` comments, plus
//! command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::kernel_constant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentKind {
    Synthetic,
    Pose,
    Theorem,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Synthetic => "synthetic",
            ExperimentKind::Pose => "pose",
            ExperimentKind::Theorem => "theorem",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "pose" => Ok(Self::Pose),
            "theorem" => Ok(Self::Theorem),
            _ => Err("one of synthetic, pose, theorem".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Flow,
    Mcl,
    Gd,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Flow => "flow",
            Method::Mcl => "mcl",
            Method::Gd => "gd",
        }
    }

    /// Name of the grid-searched hyperparameter.
    pub fn hyperparameter(self) -> &'static str {
        match self {
            Method::Flow | Method::Gd => "eta",
            Method::Mcl => "epsilon",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "flow" => Ok(Self::Flow),
            "mcl" => Ok(Self::Mcl),
            "gd" => Ok(Self::Gd),
            _ => Err("one of flow, mcl, gd".into()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Center of a log-uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridCenter {
    /// Method-specific default, see [`ExperimentConfig::grid_center`].
    Auto,
    Value(f64),
}

impl FromStr for GridCenter {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Self::Value(v)),
            _ => Err("`auto` or a positive number".into()),
        }
    }
}

impl fmt::Display for GridCenter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridCenter::Auto => f.write_str("auto"),
            GridCenter::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Log-uniform grid spanning exactly `orders` decades around a center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub orders: u32,
    pub points_per_order: u32,
}

impl GridSpec {
    /// `center * 10^(k / ppo - orders / 2)` for `k = 0..=orders * ppo`.
    pub fn values(&self, center: f64) -> Vec<f64> {
        let steps = self.orders * self.points_per_order;
        if steps == 0 {
            return vec![center];
        }
        (0..=steps)
            .map(|k| {
                let exponent = k as f64 / self.points_per_order as f64 - self.orders as f64 / 2.0;
                center * 10f64.powf(exponent)
            })
            .collect()
    }
}

/// Covariance ridge for Gaussian fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeSetting {
    Auto,
    Fixed(f64),
}

impl FromStr for RidgeSetting {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(Self::Fixed(v)),
            _ => Err("`auto` or a non-negative number".into()),
        }
    }
}

impl fmt::Display for RidgeSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RidgeSetting::Auto => f.write_str("auto"),
            RidgeSetting::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSettings {
    /// Number of point correspondences.
    pub points: usize,
    /// Loss scale (assumed observation noise std, meters).
    pub sigma: f64,
    /// Noise actually added to observations (meters).
    pub noise: f64,
    /// Distance of the initial guess from the true translation (meters).
    pub init_translation: f64,
    /// Rotation angle of the initial guess away from the truth (radians).
    pub init_rotation: f64,
    /// Half-width of the uniform translation spread of particles around the
    /// initial guess (meters).
    pub spread_translation: f64,
    /// Maximum rotation angle of particles away from the initial guess
    /// (radians).
    pub spread_rotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremSettings {
    pub eps: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Multiplier on `|A|₂` used as `L_F` in the bound (1 = faithful;
    /// below 1 is a negative control).
    pub lipschitz_scale: f64,
    pub initial_offset: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dims: Vec<usize>,
    pub n_particles: Vec<usize>,
    pub n_steps: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub grid: GridSpec,
    pub eta_center: GridCenter,
    pub epsilon_center: GridCenter,
    pub gd_eta_center: GridCenter,
    pub gamma: f64,
    pub ridge: RidgeSetting,
    pub threads: usize,
    pub output_path: PathBuf,
    pub pose: PoseSettings,
    pub theorem: TheoremSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_experiment(ExperimentKind::Synthetic)
    }
}

impl ExperimentConfig {
    /// Defaults for one experiment.
    pub fn for_experiment(kind: ExperimentKind) -> Self {
        let base = Self {
            experiment: kind,
            dims: vec![10],
            n_particles: vec![100],
            n_steps: 50,
            seeds: (0..10).collect(),
            methods: vec![Method::Flow, Method::Mcl],
            grid: GridSpec {
                orders: 5,
                points_per_order: 2,
            },
            eta_center: GridCenter::Auto,
            epsilon_center: GridCenter::Auto,
            gd_eta_center: GridCenter::Auto,
            gamma: 16.0,
            ridge: RidgeSetting::Auto,
            threads: 0,
            output_path: PathBuf::from(format!("{}.csv", kind.name())),
            pose: PoseSettings {
                points: 8,
                sigma: 0.05,
                noise: 0.005,
                init_translation: 0.1,
                init_rotation: 0.5,
                spread_translation: 0.05,
                spread_rotation: 0.25,
            },
            theorem: TheoremSettings {
                eps: 0.1,
                dt: 1e-3,
                t_end: 1.0,
                lipschitz_scale: 1.0,
                initial_offset: 0.01,
                slack: 1.05,
            },
        };
        match kind {
            ExperimentKind::Synthetic => base,
            ExperimentKind::Pose => Self {
                dims: vec![6],
                n_particles: vec![80],
                n_steps: 60,
                methods: vec![Method::Flow, Method::Gd],
                gamma: 1.5,
                grid: GridSpec {
                    orders: 0,
                    points_per_order: 1,
                },
                ..base
            },
            ExperimentKind::Theorem => Self {
                dims: vec![3],
                n_particles: vec![32],
                seeds: (0..5).collect(),
                methods: vec![],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Error::Config {
            key: key.into(),
            line: 0,
            message: message.into(),
        };
        if self.n_steps == 0 {
            return Err(bad("n_steps", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "must not be empty"));
        }
        if self.dims.is_empty() || self.n_particles.is_empty() {
            return Err(bad("dims", "dims and n_particles must not be empty"));
        }
        if self.n_particles.contains(&0) {
            return Err(bad("n_particles", "must be at least 1"));
        }
        if self.experiment != ExperimentKind::Theorem && self.methods.is_empty() {
            return Err(bad("methods", "must not be empty"));
        }
        if self.experiment == ExperimentKind::Synthetic && self.dims.iter().any(|&d| d < 3) {
            return Err(bad("dims", "all dimensions must be at least 3"));
        }
        if self.experiment == ExperimentKind::Pose && self.dims != [6] {
            return Err(bad("dims", "pose states are 6-dimensional"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(bad("gamma", "must be positive"));
        }
        if self.grid.points_per_order == 0 {
            return Err(bad("grid_points_per_order", "must be at least 1"));
        }
        Ok(())
    }

    /// Resolved grid center for `method` in dimension `d`.
    ///
    /// `auto` puts the flow's effective gradient step `eta C γ^(2-d)` (and the
    /// plain gradient-descent step) at `1/d` for the synthetic task and at
    /// `σ² / K` for pose registration, where the loss curvature is `K/σ²`.
    /// MCL's motion variance defaults to `1e-2`.
    pub fn grid_center(&self, method: Method, d: usize) -> f64 {
        let target_step = match self.experiment {
            ExperimentKind::Pose => self.pose.sigma * self.pose.sigma / self.pose.points as f64,
            _ => 1.0 / d as f64,
        };
        match method {
            Method::Flow => match self.eta_center {
                GridCenter::Value(v) => v,
                GridCenter::Auto => {
                    target_step / (kernel_constant(d.max(3)).unwrap_or(1.0) * self.gamma.powf(2.0 - d as f64))
                }
            },
            Method::Gd => match self.gd_eta_center {
                GridCenter::Value(v) => v,
                GridCenter::Auto => target_step,
            },
            Method::Mcl => match self.epsilon_center {
                GridCenter::Value(v) => v,
                GridCenter::Auto => 1e-2,
            },
        }
    }

    pub fn grid_values(&self, method: Method, d: usize) -> Vec<f64> {
        self.grid.values(self.grid_center(method, d))
    }

    /// Applies one `key=value` setting. `line` is used in error messages.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str, line: usize, expected: &str) -> Result<T> {
            value.trim().parse::<T>().map_err(|_| Error::Config {
                key: key.into(),
                line,
                message: format!("expected {expected}, found `{value}`"),
            })
        }
        fn list<T: FromStr>(key: &str, value: &str, line: usize, expected: &str) -> Result<Vec<T>> {
            value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse(key, s, line, expected))
                .collect()
        }
        let err = |message: String| Error::Config {
            key: key.into(),
            line,
            message,
        };
        match key {
            "experiment" => {
                self.experiment = value.trim().parse().map_err(|e: String| err(format!("expected {e}, found `{value}`")))?
            }
            "dims" => self.dims = list(key, value, line, "comma-separated integers")?,
            "n_particles" => self.n_particles = list(key, value, line, "comma-separated integers")?,
            "n_steps" => {
                let n: usize = parse(key, value, line, "a positive integer")?;
                if n == 0 {
                    return Err(err("must be at least 1".into()));
                }
                self.n_steps = n;
            }
            "seeds" => {
                let seeds: Vec<u64> = list(key, value, line, "comma-separated integers")?;
                if seeds.is_empty() {
                    return Err(err("must not be empty".into()));
                }
                self.seeds = seeds;
            }
            "methods" | "method" => {
                self.methods = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|e: String| err(format!("expected {e}, found `{s}`"))))
                    .collect::<Result<_>>()?
            }
            "grid_orders" => self.grid.orders = parse(key, value, line, "a non-negative integer")?,
            "grid_points_per_order" => {
                let p: u32 = parse(key, value, line, "a positive integer")?;
                if p == 0 {
                    return Err(err("must be at least 1".into()));
                }
                self.grid.points_per_order = p;
            }
            "eta_center" => self.eta_center = parse(key, value, line, "`auto` or a positive number")?,
            "epsilon_center" => self.epsilon_center = parse(key, value, line, "`auto` or a positive number")?,
            "gd_eta_center" => self.gd_eta_center = parse(key, value, line, "`auto` or a positive number")?,
            "gamma" => {
                let g: f64 = parse(key, value, line, "a positive number")?;
                if !(g > 0.0 && g.is_finite()) {
                    return Err(err("must be positive".into()));
                }
                self.gamma = g;
            }
            "ridge" => self.ridge = parse(key, value, line, "`auto` or a non-negative number")?,
            "threads" => self.threads = parse(key, value, line, "a non-negative integer")?,
            "output" | "output_path" => self.output_path = PathBuf::from(value.trim()),
            "pose_points" => self.pose.points = parse(key, value, line, "an integer >= 3")?,
            "pose_sigma" => self.pose.sigma = parse(key, value, line, "a positive number")?,
            "pose_noise" => self.pose.noise = parse(key, value, line, "a non-negative number")?,
            "pose_init_translation" => self.pose.init_translation = parse(key, value, line, "a non-negative number")?,
            "pose_init_rotation" => self.pose.init_rotation = parse(key, value, line, "a non-negative number")?,
            "pose_spread_translation" => self.pose.spread_translation = parse(key, value, line, "a non-negative number")?,
            "pose_spread_rotation" => self.pose.spread_rotation = parse(key, value, line, "a non-negative number")?,
            "theorem_eps" => self.theorem.eps = parse(key, value, line, "a non-negative number")?,
            "theorem_dt" => self.theorem.dt = parse(key, value, line, "a positive number")?,
            "theorem_t_end" => self.theorem.t_end = parse(key, value, line, "a positive number")?,
            "theorem_lipschitz_scale" => self.theorem.lipschitz_scale = parse(key, value, line, "a positive number")?,
            "theorem_offset" => self.theorem.initial_offset = parse(key, value, line, "a non-negative number")?,
            "theorem_slack" => self.theorem.slack = parse(key, value, line, "a number >= 1")?,
            _ => return Err(err("unknown key".into())),
        }
        Ok(())
    }

    /// Applies every setting of a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.into(),
                line: idx + 1,
                message: "expected `key=value`".into(),
            })?;
            self.set(key.trim(), value.trim(), idx + 1)?;
        }
        Ok(())
    }

    /// Resolves a config from optional file contents and `(key, value)`
    /// overrides; overrides win. If the file sets `experiment`, its defaults
    /// are used as the starting point.
    pub fn resolve(kind: ExperimentKind, file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::for_experiment(kind);
        if let Some(text) = file_text {
            cfg.apply_text(text)?;
            if cfg.experiment != kind {
                let mut fresh = Self::for_experiment(cfg.experiment);
                fresh.apply_text(text)?;
                cfg = fresh;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value, 0)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(kind: ExperimentKind, path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::resolve(kind, Some(&text), overrides)
    }

    /// Fully resolved settings as `key=value` lines (re-parsable).
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let lines = [
            format!("experiment={}", self.experiment.name()),
            format!("dims={}", join(self.dims.iter().map(ToString::to_string).collect())),
            format!("n_particles={}", join(self.n_particles.iter().map(ToString::to_string).collect())),
            format!("n_steps={}", self.n_steps),
            format!("seeds={}", join(self.seeds.iter().map(ToString::to_string).collect())),
            format!("methods={}", join(self.methods.iter().map(ToString::to_string).collect())),
            format!("grid_orders={}", self.grid.orders),
            format!("grid_points_per_order={}", self.grid.points_per_order),
            format!("eta_center={}", self.eta_center),
            format!("epsilon_center={}", self.epsilon_center),
            format!("gd_eta_center={}", self.gd_eta_center),
            format!("gamma={}", self.gamma),
            format!("ridge={}", self.ridge),
            format!("threads={}", self.threads),
            format!("output={}", self.output_path.display()),
            format!("pose_points={}", self.pose.points),
            format!("pose_sigma={}", self.pose.sigma),
            format!("pose_noise={}", self.pose.noise),
            format!("pose_init_translation={}", self.pose.init_translation),
            format!("pose_init_rotation={}", self.pose.init_rotation),
            format!("pose_spread_translation={}", self.pose.spread_translation),
            format!("pose_spread_rotation={}", self.pose.spread_rotation),
            format!("theorem_eps={}", self.theorem.eps),
            format!("theorem_dt={}", self.theorem.dt),
            format!("theorem_t_end={}", self.theorem.t_end),
            format!("theorem_lipschitz_scale={}", self.theorem.lipschitz_scale),
            format!("theorem_offset={}", self.theorem.initial_offset),
            format!("theorem_slack={}", self.theorem.slack),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
