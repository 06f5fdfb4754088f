//! Experiment configuration.
//!
//! A [`Scenario`] is plain data, read from TOML with unknown keys rejected and
//! every omitted key falling back to the nominal experiment. [`Scenario::resolve`]
//! validates it and builds the typed objects the simulators consume.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{von_mises_target, Smoother, TargetDensity};
use crate::error::{Error, Result};
use crate::follower_control::{g1_inf_norm, ks_f_with_margin, FluxGauge, FollowerGains, Switching};
use crate::geometry::{Field, Grid};
use crate::kernel::KernelParams;
use crate::leader_control::LeaderGains;

/// Relative density clamp: `floor = REL_RHO_FLOOR · M / 2π`.
pub const REL_RHO_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub population: PopulationConfig,
    pub model: ModelConfig,
    pub target: TargetConfig,
    pub follower_control: FollowerControlConfig,
    pub leader_control: LeaderControlConfig,
    pub numerics: NumericsConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub n_followers: usize,
    pub n_leaders: usize,
    /// Total follower mass `M_F`.
    pub follower_mass: f64,
    /// Total leader mass `M_L`.
    pub leader_mass: f64,
    /// Follower drifts are drawn from `U[-B, B]`.
    pub heterogeneity: f64,
    /// Leader drifts are drawn from `U[-R, R]`.
    pub leader_heterogeneity: f64,
    pub initial_followers: InitialDistribution,
    pub initial_leaders: InitialDistribution,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_followers: 1000,
            n_leaders: 1000,
            follower_mass: 1.0,
            leader_mass: 30.0,
            heterogeneity: 2.0,
            leader_heterogeneity: 0.0,
            initial_followers: InitialDistribution::Uniform,
            initial_leaders: InitialDistribution::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    #[default]
    Uniform,
    VonMises {
        kappa: f64,
        mu: f64,
    },
    /// Uniform on `[center - width/2, center + width/2]`.
    Cluster {
        center: f64,
        width: f64,
    },
}

impl InitialDistribution {
    /// The macroscopic counterpart: a density of total `mass` on `grid`.
    pub fn density(&self, grid: Grid, mass: f64) -> Result<Field> {
        match *self {
            InitialDistribution::Uniform => Ok(Field::constant(grid, mass / TAU)),
            InitialDistribution::VonMises { kappa, mu } => {
                Ok(von_mises_target(grid, kappa, mu, mass)?.field().clone())
            }
            InitialDistribution::Cluster { center, width } => {
                // cell-averaged indicator so that narrow clusters keep their mass
                let h = grid.spacing();
                let raw = Field::from_fn(grid, |x| {
                    let d = crate::geometry::wrap_angle(x - center).abs();
                    let lo = d - 0.5 * h;
                    let hi = d + 0.5 * h;
                    let covered = (hi.min(0.5 * width) - lo.max(-0.5 * width)).max(0.0);
                    covered / h
                });
                let z = crate::geometry::integrate(&raw);
                if !(z > 0.0) {
                    return Err(Error::Config("cluster narrower than a grid cell".into()));
                }
                Ok(&raw * (mass / z))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InitialDistribution::Uniform => Ok(()),
            InitialDistribution::VonMises { kappa, mu } if kappa.is_finite() && mu.is_finite() => Ok(()),
            InitialDistribution::Cluster { center, width }
                if center.is_finite() && width > 0.0 && width <= TAU =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid initial distribution {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub diffusion: f64,
    pub interaction_length: f64,
    /// Follower perturbation bound `k`.
    pub follower_bound: f64,
    /// Leader perturbation bound `r`.
    pub leader_bound: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            diffusion: 0.1,
            interaction_length: PI,
            follower_bound: 1.0,
            leader_bound: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub kappa: f64,
    pub mu: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self { kappa: 1.0, mu: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeConfig {
    Anchored,
    #[default]
    Balanced,
}

impl From<GaugeConfig> for FluxGauge {
    fn from(g: GaugeConfig) -> Self {
        match g {
            GaugeConfig::Anchored => FluxGauge::Anchored,
            GaugeConfig::Balanced => FluxGauge::Balanced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowerControlConfig {
    pub kp: f64,
    /// Explicit switching gain. When absent, `ks_margin · (D‖ρ̄''‖∞ + k‖ρ̄'‖∞)`.
    pub ks: Option<f64>,
    pub ks_margin: f64,
    pub eta: f64,
    /// Use the exact sign function instead of `tanh(η·)`.
    pub ideal_sign: bool,
    /// Pin the feedback weight instead of deriving it from the mass budget.
    pub alpha: Option<f64>,
    pub gauge: GaugeConfig,
}

impl Default for FollowerControlConfig {
    fn default() -> Self {
        Self {
            kp: 2.0,
            ks: None,
            ks_margin: 5.0,
            eta: 100.0,
            ideal_sign: false,
            alpha: None,
            gauge: GaugeConfig::Balanced,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderControlConfig {
    pub kp: f64,
    pub ks: f64,
    pub eta: f64,
    pub ideal_sign: bool,
    /// EMA weight of the reference-rate estimator.
    pub ema_weight: f64,
    /// Apply the density smoother to the leader reference.
    pub smooth_reference: bool,
    pub gauge: GaugeConfig,
}

impl Default for LeaderControlConfig {
    fn default() -> Self {
        Self {
            kp: 50.0,
            ks: 0.1,
            eta: 100.0,
            ideal_sign: false,
            ema_weight: crate::leader_control::DEFAULT_EMA_WEIGHT,
            smooth_reference: true,
            gauge: GaugeConfig::Balanced,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Direct pairwise sum over leaders.
    Exact,
    /// Kernel convolved with the estimated leader density.
    #[default]
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub grid_points: usize,
    pub smoothing_sigma: f64,
    pub dt_followers: f64,
    pub dt_leaders: f64,
    pub leader_substeps: usize,
    pub t_final: f64,
    pub seed: u64,
    pub drift_mode: DriftMode,
    /// Log every n-th control step (the first and last are always logged).
    pub log_every: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            grid_points: crate::geometry::DEFAULT_POINTS,
            smoothing_sigma: PI / 30.0,
            dt_followers: 2e-4,
            dt_leaders: 2e-6,
            leader_substeps: 100,
            t_final: 1.0,
            seed: 0,
            drift_mode: DriftMode::Grid,
            log_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub heterogeneity: Vec<f64>,
    pub population: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Final time of population-sweep runs.
    pub population_t_final: f64,
    /// Concurrent sweep cells; 0 uses every available core.
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            heterogeneity: vec![2.0, 6.0, 10.0, 14.0, 20.0],
            population: log_spaced(10.0, 2000.0, 10),
            seeds: vec![1, 2, 3],
            population_t_final: 1.5,
            workers: 0,
        }
    }
}

/// `n` integers spaced evenly in log scale over `[lo, hi]`, deduplicated.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n)
        .map(|i| {
            let s = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            (lo.ln() + s * (hi.ln() - lo.ln())).exp().round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// A validated scenario with its derived objects.
#[derive(Clone, Debug)]
pub struct Setup {
    pub scenario: Scenario,
    pub grid: Grid,
    pub kernel: KernelParams,
    pub target: TargetDensity,
    pub smoother: Smoother,
    pub follower_gains: FollowerGains,
    pub leader_gains: LeaderGains,
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn resolve(&self) -> Result<Setup> {
        let p = &self.population;
        let m = &self.model;
        let n = &self.numerics;
        let cfg = |msg: String| Err(Error::Config(msg));

        if p.n_followers == 0 || p.n_leaders == 0 {
            return cfg("population sizes must be positive".into());
        }
        for (name, v) in [
            ("follower_mass", p.follower_mass),
            ("leader_mass", p.leader_mass),
            ("diffusion", m.diffusion),
            ("interaction_length", m.interaction_length),
            ("smoothing_sigma", n.smoothing_sigma),
            ("dt_followers", n.dt_followers),
            ("dt_leaders", n.dt_leaders),
            ("t_final", n.t_final),
            ("follower_control.kp", self.follower_control.kp),
            ("leader_control.kp", self.leader_control.kp),
            ("follower_control.eta", self.follower_control.eta),
            ("leader_control.eta", self.leader_control.eta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("heterogeneity", p.heterogeneity),
            ("leader_heterogeneity", p.leader_heterogeneity),
            ("follower_bound", m.follower_bound),
            ("leader_bound", m.leader_bound),
            ("leader_control.ks", self.leader_control.ks),
            ("ks_margin", self.follower_control.ks_margin),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return cfg(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        if n.leader_substeps == 0 || n.log_every == 0 {
            return cfg("leader_substeps and log_every must be at least 1".into());
        }
        let covered = n.dt_leaders * n.leader_substeps as f64;
        if (covered - n.dt_followers).abs() > 1e-9 * n.dt_followers {
            return cfg(format!(
                "leader substeps must cover one follower step: {} x {} != {}",
                n.leader_substeps, n.dt_leaders, n.dt_followers
            ));
        }
        if let Some(a) = self.follower_control.alpha {
            if !(a > 0.0 && a <= 1.0) {
                return cfg(format!("follower_control.alpha must lie in (0, 1], got {a}"));
            }
        }
        if let Some(ks) = self.follower_control.ks {
            if !(ks >= 0.0) {
                return cfg(format!("follower_control.ks must be non-negative, got {ks}"));
            }
        }
        let lambda = self.leader_control.ema_weight;
        if !(lambda > 0.0 && lambda <= 1.0) {
            return cfg(format!("ema_weight must lie in (0, 1], got {lambda}"));
        }
        p.initial_followers.validate()?;
        p.initial_leaders.validate()?;
        if p.heterogeneity > m.follower_bound {
            log::warn!(
                "follower drifts up to {} exceed the bound k = {} the controller is designed for",
                p.heterogeneity,
                m.follower_bound
            );
        }
        if p.leader_heterogeneity > m.leader_bound {
            log::warn!(
                "leader drifts up to {} exceed the bound r = {}",
                p.leader_heterogeneity,
                m.leader_bound
            );
        }

        let grid = Grid::new(n.grid_points).map_err(|e| Error::Config(e.to_string()))?;
        let kernel = KernelParams::new(m.interaction_length)?;
        let target = von_mises_target(grid, self.target.kappa, self.target.mu, p.follower_mass)?;
        let smoother = Smoother::new(n.smoothing_sigma)?;

        let fc = &self.follower_control;
        let ks = fc
            .ks
            .unwrap_or_else(|| ks_f_with_margin(fc.ks_margin, m.diffusion, m.follower_bound, &target));
        let follower_gains = FollowerGains {
            kp: fc.kp,
            ks,
            switching: if fc.ideal_sign {
                Switching::Sign
            } else {
                Switching::Tanh { eta: fc.eta }
            },
            k: m.follower_bound,
            diffusion: m.diffusion,
            rho_floor: REL_RHO_FLOOR * p.follower_mass / TAU,
            gauge: fc.gauge.into(),
        };
        follower_gains.validate()?;
        let lc = &self.leader_control;
        let leader_gains = LeaderGains {
            kp: lc.kp,
            ks: lc.ks,
            r: m.leader_bound,
            switching: if lc.ideal_sign {
                Switching::Sign
            } else {
                Switching::Tanh { eta: lc.eta }
            },
            rho_floor: REL_RHO_FLOOR * p.leader_mass / TAU,
            gauge: lc.gauge.into(),
        };
        leader_gains.validate()?;

        let g1 = g1_inf_norm(&target);
        if g1 >= 2.0 {
            log::warn!("‖g1‖∞ = {g1:.3} >= 2: the feedforward convergence hypothesis fails");
        }

        Ok(Setup {
            scenario: self.clone(),
            grid,
            kernel,
            target,
            smoother,
            follower_gains,
            leader_gains,
        })
    }
}

impl Setup {
    pub fn follower_mass_per_agent(&self) -> f64 {
        self.scenario.population.follower_mass / self.scenario.population.n_followers as f64
    }

    pub fn leader_mass_per_agent(&self) -> f64 {
        self.scenario.population.leader_mass / self.scenario.population.n_leaders as f64
    }

    /// Number of control steps needed to reach `t_final`.
    pub fn n_steps(&self) -> usize {
        let n = &self.scenario.numerics;
        (n.t_final / n.dt_followers - 1e-9).ceil() as usize
    }
}
