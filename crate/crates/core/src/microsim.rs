//! Agent-level simulation of the closed loop.
//!
//! Followers obey `dx = (b_i + Σ_j m_L f(x - y_j)) dt + √(2D) dW`; leaders are
//! integrators driven by the control field `u` sampled at their positions.
//! Densities are estimated from positions once per control step, the control
//! law runs on the estimates, and both populations advance: leaders by
//! `leader_substeps` Euler substeps holding `u` fixed, followers by one
//! Euler–Maruyama step.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::controller::ControlLaw;
use crate::density::DensityEstimator;
use crate::error::{Error, Result};
use crate::geometry::{integrate, wrap_angle, CircularConvolver, Field};
use crate::kernel::{eval_kernel, kernel_samples, KernelParams};
use crate::metrics::{FieldSnapshot, MetricsLog};
use crate::scenario::{DriftMode, InitialDistribution, Setup};

/// Tolerance on the estimated masses at every logged step.
pub const MASS_TOLERANCE: f64 = 1e-8;

/// Equal-mass agents on the ring.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    positions: Vec<f64>,
    mass_per_agent: f64,
    /// Constant drift of each agent.
    biases: Vec<f64>,
}

impl Population {
    pub fn new(positions: Vec<f64>, mass_per_agent: f64, biases: Vec<f64>) -> Result<Self> {
        if positions.len() != biases.len() {
            return Err(Error::LengthMismatch {
                expected: positions.len(),
                actual: biases.len(),
            });
        }
        if !(mass_per_agent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mass per agent must be positive, got {mass_per_agent}"
            )));
        }
        if positions.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("population"));
        }
        Ok(Self {
            positions: positions.into_iter().map(wrap_angle).collect(),
            mass_per_agent,
            biases,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn mass_per_agent(&self) -> f64 {
        self.mass_per_agent
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_per_agent * self.positions.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub t: f64,
    pub followers: Population,
    pub leaders: Population,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(followers: Population, leaders: Population, seed: u64) -> Self {
        Self {
            t: 0.0,
            followers,
            leaders,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Draws `n` positions from `dist`.
pub fn sample_positions<R: Rng>(dist: InitialDistribution, n: usize, rng: &mut R) -> Vec<f64> {
    match dist {
        InitialDistribution::Uniform => (0..n).map(|_| rng.random_range(-PI..PI)).collect(),
        InitialDistribution::VonMises { kappa, mu } => {
            // rejection from the uniform envelope e^{|κ|}
            let (k, m) = if kappa < 0.0 {
                (-kappa, mu + PI)
            } else {
                (kappa, mu)
            };
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let y: f64 = rng.random_range(-PI..PI);
                let accept: f64 = rng.random();
                if accept < (k * (y.cos() - 1.0)).exp() {
                    out.push(wrap_angle(y + m));
                }
            }
            out
        }
        InitialDistribution::Cluster { center, width } => (0..n)
            .map(|_| wrap_angle(center + width * (rng.random::<f64>() - 0.5)))
            .collect(),
    }
}

fn uniform_biases<R: Rng>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    if bound == 0.0 {
        return vec![0.0; n];
    }
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Initial agents: positions from the configured distributions, follower
/// biases from `U[-B, B]`, leader biases from `U[-R, R]`.
pub fn init_populations(setup: &Setup, seed: u64) -> Result<SimState> {
    let p = &setup.scenario.population;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xf = sample_positions(p.initial_followers, p.n_followers, &mut rng);
    let xl = sample_positions(p.initial_leaders, p.n_leaders, &mut rng);
    let bf = uniform_biases(p.n_followers, p.heterogeneity, &mut rng);
    let bl = uniform_biases(p.n_leaders, p.leader_heterogeneity, &mut rng);
    let followers = Population::new(xf, setup.follower_mass_per_agent(), bf)?;
    let leaders = Population::new(xl, setup.leader_mass_per_agent(), bl)?;
    // the noise stream is independent of how many draws initialisation took
    Ok(SimState::new(followers, leaders, seed ^ 0x9e37_79b9_7f4a_7c15))
}

/// Pairwise drift `Σ_j m_L f(x_i - y_j)`, each leader weighted by its mass.
pub fn exact_drift(followers: &[f64], leaders: &Population, p: KernelParams) -> Vec<f64> {
    let m = leaders.mass_per_agent();
    followers
        .iter()
        .map(|&x| {
            m * leaders
                .positions()
                .iter()
                .map(|&y| eval_kernel(wrap_angle(x - y), p))
                .sum::<f64>()
        })
        .collect()
}

/// `(f * ρ_L)` on the grid, interpolated at the follower positions.
pub fn grid_drift(followers: &[f64], leader_density: &Field, conv: &CircularConvolver) -> Vec<f64> {
    let v = conv.apply(leader_density);
    followers.iter().map(|&x| v.sample(x)).collect()
}

/// `x ← wrap(x + (b + drift) dt + √(2D dt) ξ)`.
pub fn step_followers(state: &mut SimState, drifts: &[f64], dt: f64, diffusion: f64) {
    let scale = (2.0 * diffusion * dt).sqrt();
    let f = &mut state.followers;
    for ((x, &b), &v) in f.positions.iter_mut().zip(&f.biases).zip(drifts) {
        let xi: f64 = if diffusion > 0.0 {
            state.rng.sample(StandardNormal)
        } else {
            0.0
        };
        *x = wrap_angle(*x + (b + v) * dt + scale * xi);
    }
}

/// `n_sub` forward-Euler substeps of `x ← x + (u(x) + h) dt_L`.
pub fn step_leaders(state: &mut SimState, u: &Field, dt_l: f64, n_sub: usize) {
    let l = &mut state.leaders;
    // substeps outermost: leaders are independent, so the inner loop pipelines
    for _ in 0..n_sub {
        for (x, &h) in l.positions.iter_mut().zip(&l.biases) {
            *x = wrap_angle(*x + (u.sample(*x) + h) * dt_l);
        }
    }
}

/// Metrics and final fields of one agent-level run.
#[derive(Clone, Debug)]
pub struct MicroOutcome {
    pub log: MetricsLog,
    pub snapshot: FieldSnapshot,
}

pub fn run_micro(setup: &Setup, seed: u64) -> Result<MicroOutcome> {
    let mut state = init_populations(setup, seed)?;
    run_micro_from(setup, &mut state)
}

/// Closed loop from a given state until `t_final`.
pub fn run_micro_from(setup: &Setup, state: &mut SimState) -> Result<MicroOutcome> {
    let sc = &setup.scenario;
    let num = &sc.numerics;
    let est = DensityEstimator::new(setup.grid, setup.smoother);
    let conv = CircularConvolver::new(&kernel_samples(setup.grid, setup.kernel));
    let mut law = ControlLaw::new(setup)?;
    let mut log = MetricsLog::new();
    let n_steps = setup.n_steps();
    let (m_f, m_l) = (sc.population.follower_mass, sc.population.leader_mass);

    for step in 0..=n_steps {
        let t = step as f64 * num.dt_followers;
        state.t = t;
        let rho_f = est.estimate(state.followers.positions(), state.followers.mass_per_agent());
        let rho_l = est.estimate(state.leaders.positions(), state.leaders.mass_per_agent());
        let ctrl = law.step(&rho_f, &rho_l)?;
        let snapshot = || FieldSnapshot {
            t,
            rho_f: rho_f.clone(),
            rho_bar_f: law.target().field().clone(),
            rho_l: rho_l.clone(),
            rho_bar_l: ctrl.rho_bar_l.clone(),
            u: ctrl.u.clone(),
        };
        if !ctrl.u.is_finite() || !ctrl.rho_bar_l.is_finite() {
            return Err(Error::Diverged {
                t,
                what: "control field is not finite".into(),
                snapshot: Box::new(snapshot()),
            });
        }
        let last = step == n_steps;
        if step % num.log_every == 0 || last {
            let row = ctrl.metrics_row(t, &rho_f, &rho_l);
            for (what, got, want) in [("follower", row.mass_f, m_f), ("leader", row.mass_l, m_l)] {
                if (got - want).abs() > MASS_TOLERANCE {
                    return Err(Error::Invariant {
                        t,
                        what: format!("estimated {what} mass {got} differs from {want}"),
                    });
                }
            }
            log.push(row);
        }
        if last {
            return Ok(MicroOutcome {
                log,
                snapshot: snapshot(),
            });
        }

        let drifts = match num.drift_mode {
            DriftMode::Grid => grid_drift(state.followers.positions(), &rho_l, &conv),
            DriftMode::Exact => exact_drift(state.followers.positions(), &state.leaders, setup.kernel),
        };
        step_leaders(state, &ctrl.u, num.dt_leaders, num.leader_substeps);
        step_followers(state, &drifts, num.dt_followers, sc.model.diffusion);
        if state
            .followers
            .positions
            .iter()
            .chain(&state.leaders.positions)
            .any(|x| !x.is_finite())
        {
            return Err(Error::Diverged {
                t,
                what: "agent position is not finite".into(),
                snapshot: Box::new(snapshot()),
            });
        }
    }
    unreachable!("the loop returns at its last step")
}

/// Masses the density estimator reports for a state.
pub fn estimated_masses(setup: &Setup, state: &SimState) -> (f64, f64) {
    let est = DensityEstimator::new(setup.grid, setup.smoother);
    (
        integrate(&est.estimate(state.followers.positions(), state.followers.mass_per_agent())),
        integrate(&est.estimate(state.leaders.positions(), state.leaders.mass_per_agent())),
    )
}
