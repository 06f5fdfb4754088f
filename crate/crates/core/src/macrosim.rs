//! Finite-volume integration of the bounding PDEs under the closed loop.
//!
//! ```text
//! ρ_L,t + [ρ_L (u ± r)]_x = 0
//! ρ_F,t + [ρ_F (f * ρ_L ± k)]_x = D ρ_F,xx
//! ```
//!
//! Cell averages live on the grid nodes. Advection is first-order upwind with
//! face velocities averaged from the nodes, diffusion the explicit 3-point
//! stencil. Both are written as flux differences, so mass is conserved to
//! rounding, and the step restriction keeps every update a convex combination,
//! so densities stay non-negative.

use crate::controller::{ControlLaw, ControlStep};
use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::follower_control::{g1_inf_norm, target_slopes, FollowerGains};
use crate::geometry::{integrate, norm, CircularConvolver, Field, Norm};
use crate::kernel::kernel_samples;
use crate::leader_control::{leader_velocity, ql_field, LeaderGains, ReferenceRateEstimator};
use crate::metrics::{FieldSnapshot, MetricsLog};
use crate::scenario::Setup;

/// Courant number used when choosing substeps.
pub const CFL_SAFETY: f64 = 0.4;

/// Per-run mass tolerance, relative to the species mass.
pub const MASS_TOLERANCE: f64 = 1e-10;

/// Which worst-case drift the unknown perturbations take.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bounding {
    /// `+k`, `+r`.
    Upper,
    /// `-k`, `-r`.
    Lower,
}

impl Bounding {
    pub fn sign(self) -> f64 {
        match self {
            Bounding::Upper => 1.0,
            Bounding::Lower => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bounding::Upper => "upper",
            Bounding::Lower => "lower",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub t: f64,
    pub rho_l: Field,
    pub rho_f: Field,
    pub bounding: Bounding,
}

/// Largest step for which one explicit update with node velocities `a` and
/// diffusion `d` stays monotone: `CFL_SAFETY / (max|a|/h + 2d/h²)`.
pub fn stable_step(a: &Field, d: f64) -> f64 {
    let h = a.grid().spacing();
    let rate = norm(a, Norm::Linf) / h + 2.0 * d / (h * h);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        CFL_SAFETY / rate
    }
}

/// One explicit conservative update of `ρ_t + (ρ a)_x = d ρ_xx`.
pub fn advect_diffuse(rho: &Field, a: &Field, d: f64, dt: f64) -> Result<Field> {
    let limit = stable_step(a, d);
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, suggested: limit });
    }
    let n = rho.len();
    let h = rho.grid().spacing();
    let r = rho.values();
    let v = a.values();
    // flux[j] sits on the face between j and j+1
    let flux: Vec<f64> = (0..n)
        .map(|j| {
            let k = if j + 1 == n { 0 } else { j + 1 };
            let face = 0.5 * (v[j] + v[k]);
            let adv = if face > 0.0 { face * r[j] } else { face * r[k] };
            adv - d * (r[k] - r[j]) / h
        })
        .collect();
    let out = (0..n)
        .map(|j| {
            let left = flux[if j == 0 { n - 1 } else { j - 1 }];
            r[j] - dt / h * (flux[j] - left)
        })
        .collect();
    Field::new(rho.grid(), out)
}

/// Advances both species by `dt` with fixed control field `u` and follower
/// velocity `v_fl`.
pub fn step_pde(
    state: &MacroState,
    u: &Field,
    v_fl: &Field,
    dt: f64,
    diffusion: f64,
    k: f64,
    r: f64,
) -> Result<MacroState> {
    let s = state.bounding.sign();
    let a_l = u + s * r;
    let a_f = v_fl + s * k;
    Ok(MacroState {
        t: state.t + dt,
        rho_l: advect_diffuse(&state.rho_l, &a_l, 0.0, dt)?,
        rho_f: advect_diffuse(&state.rho_f, &a_f, diffusion, dt)?,
        bounding: state.bounding,
    })
}

/// Initial densities of the configured distributions.
pub fn initial_state(setup: &Setup, bounding: Bounding) -> Result<MacroState> {
    let p = &setup.scenario.population;
    Ok(MacroState {
        t: 0.0,
        rho_l: p.initial_leaders.density(setup.grid, p.leader_mass)?,
        rho_f: p.initial_followers.density(setup.grid, p.follower_mass)?,
        bounding,
    })
}

/// Fastest leader motion the PDE integrator follows: one cell per leader
/// substep, the resolution limit of the agent-level integrator. The control
/// field only exceeds it where the leader density has (numerically) vanished,
/// where the flux it carries is negligible.
pub fn leader_speed_limit(setup: &Setup) -> f64 {
    setup.grid.spacing() / setup.scenario.numerics.dt_leaders
}

/// Right-hand side of the follower Lyapunov decay bound at the current state:
/// `[D(1-α)‖g₁‖∞ - 2D - α k_p] V + [α D‖ρ̄''‖∞ + k‖ρ̄'‖∞ - α k_s] ‖e‖₁`.
pub fn lyapunov_rate_bound(target: &TargetDensity, gains: &FollowerGains, alpha: f64, e_f: &Field) -> f64 {
    let d = gains.diffusion;
    let (slope, curvature) = target_slopes(target);
    let v = 0.5 * norm(e_f, Norm::L2).powi(2);
    (d * (1.0 - alpha) * g1_inf_norm(target) - 2.0 * d - alpha * gains.kp) * v
        + (alpha * d * curvature + gains.k * slope - alpha * gains.ks) * norm(e_f, Norm::L1)
}

#[derive(Clone, Debug)]
pub struct MacroOutcome {
    pub bounding: Bounding,
    pub log: MetricsLog,
    /// Lyapunov rate bound at each logged row.
    pub decay_bound: Vec<f64>,
    /// Largest relative mass drift of either species over the run.
    pub max_mass_drift: f64,
    /// Control steps at which the leader speed limit was active.
    pub saturated_steps: usize,
    pub snapshot: FieldSnapshot,
}

fn check_state(state: &MacroState, m_f: f64, m_l: f64, drift: &mut f64) -> Result<()> {
    for (what, rho, m) in [("follower", &state.rho_f, m_f), ("leader", &state.rho_l, m_l)] {
        if rho.min() < 0.0 {
            return Err(Error::Invariant {
                t: state.t,
                what: format!("{what} density negative ({})", rho.min()),
            });
        }
        let rel = (integrate(rho) - m).abs() / m;
        *drift = drift.max(rel);
        if rel > MASS_TOLERANCE {
            return Err(Error::Invariant {
                t: state.t,
                what: format!("{what} mass drifted by {rel:e}"),
            });
        }
    }
    Ok(())
}

/// Closed loop on the PDEs: the control law runs every `dt_followers` on the
/// exact densities; between updates the PDEs advance in CFL-limited substeps.
pub fn run_macro(setup: &Setup, bounding: Bounding) -> Result<MacroOutcome> {
    let state = initial_state(setup, bounding)?;
    run_macro_from(setup, state)
}

pub fn run_macro_from(setup: &Setup, mut state: MacroState) -> Result<MacroOutcome> {
    let sc = &setup.scenario;
    let num = &sc.numerics;
    let (d, k, r) = (sc.model.diffusion, sc.model.follower_bound, sc.model.leader_bound);
    let conv = CircularConvolver::new(&kernel_samples(setup.grid, setup.kernel));
    let mut law = ControlLaw::new(setup)?;
    let mut log = MetricsLog::new();
    let mut decay_bound = Vec::new();
    let mut drift = 0.0;
    let (m_f, m_l) = (sc.population.follower_mass, sc.population.leader_mass);
    let n_steps = setup.n_steps();
    let dt = num.dt_followers;
    let speed_limit = leader_speed_limit(setup);
    let mut saturated = 0;
    check_state(&state, m_f, m_l, &mut drift)?;

    for step in 0..=n_steps {
        state.t = step as f64 * dt;
        let ctrl = law.step(&state.rho_f, &state.rho_l)?;
        let snapshot = |st: &MacroState, c: &ControlStep| FieldSnapshot {
            t: st.t,
            rho_f: st.rho_f.clone(),
            rho_bar_f: setup.target.field().clone(),
            rho_l: st.rho_l.clone(),
            rho_bar_l: c.rho_bar_l.clone(),
            u: c.u.clone(),
        };
        if !ctrl.u.is_finite() {
            return Err(Error::Diverged {
                t: state.t,
                what: "control field is not finite".into(),
                snapshot: Box::new(snapshot(&state, &ctrl)),
            });
        }
        let last = step == n_steps;
        if step % num.log_every == 0 || last {
            log.push(ctrl.metrics_row(state.t, &state.rho_f, &state.rho_l));
            decay_bound.push(lyapunov_rate_bound(
                &setup.target,
                &setup.follower_gains,
                ctrl.reference.alpha,
                &ctrl.e_f,
            ));
        }
        if last {
            return Ok(MacroOutcome {
                bounding: state.bounding,
                log,
                decay_bound,
                max_mass_drift: drift,
                saturated_steps: saturated,
                snapshot: snapshot(&state, &ctrl),
            });
        }
        let u = ctrl.u.map(|v| v.clamp(-speed_limit, speed_limit));
        if norm(&ctrl.u, Norm::Linf) > speed_limit {
            saturated += 1;
        }
        state = advance(&state, &u, &conv, dt, d, k, r)?;
        check_state(&state, m_f, m_l, &mut drift)?;
    }
    unreachable!("the loop returns at its last step")
}

/// Integrates over one control period, recomputing `f * ρ_L` every substep.
fn advance(
    state: &MacroState,
    u: &Field,
    conv: &CircularConvolver,
    dt: f64,
    d: f64,
    k: f64,
    r: f64,
) -> Result<MacroState> {
    let s = state.bounding.sign();
    let mut st = state.clone();
    let mut remaining = dt;
    while remaining > 1e-15 * dt {
        let v_fl = conv.apply(&st.rho_l);
        let limit = stable_step(&(u + s * r), 0.0).min(stable_step(&(&v_fl + s * k), d));
        let h = if limit >= remaining {
            remaining
        } else {
            // equal pieces so the control period is hit exactly
            remaining / (remaining / limit).ceil()
        };
        st = step_pde(&st, u, &v_fl, h, d, k, r)?;
        remaining -= h;
    }
    st.t = state.t + dt;
    Ok(st)
}

/// Leaders alone tracking a fixed reference with `r = 0`; returns
/// `(t, V_L)` at every control step.
pub fn run_leader_tracking(
    reference: &Field,
    rho_l0: &Field,
    gains: &LeaderGains,
    dt: f64,
    t_final: f64,
) -> Result<Vec<(f64, f64)>> {
    let mut rate = ReferenceRateEstimator::new(1.0, dt)?;
    let mut rho = rho_l0.clone();
    let n_steps = (t_final / dt - 1e-9).ceil() as usize;
    let mut out = Vec::with_capacity(n_steps + 1);
    for step in 0..=n_steps {
        let t = step as f64 * dt;
        let e = reference.zip_map(&rho, |a, b| a - b)?;
        out.push((t, 0.5 * norm(&e, Norm::L2).powi(2)));
        if step == n_steps {
            break;
        }
        let rate_field = rate.update(reference)?;
        let q = ql_field(&e, &rate_field, gains)?;
        let u = leader_velocity(&q, &rho, gains)?;
        let mut remaining = dt;
        while remaining > 1e-15 * dt {
            let limit = stable_step(&u, 0.0);
            let h = if limit >= remaining {
                remaining
            } else {
                remaining / (remaining / limit).ceil()
            };
            rho = advect_diffuse(&rho, &u, 0.0, h)?;
            remaining -= h;
        }
    }
    Ok(out)
}
