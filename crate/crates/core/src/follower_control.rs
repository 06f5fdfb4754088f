//! Control synthesis for the follower population.
//!
//! The followers cannot be actuated. Instead we design the velocity field the
//! leaders should induce on them,
//!
//! ```text
//! v = (1 - α) v_ff + α v_fb,   v_ff = D ρ̄'/ρ̄,   (ρ v_fb)' = q,
//! q = -k_p e - k_s sgn(e) + β,
//! ```
//!
//! and then recover, by deconvolution, a leader density that produces it. The
//! scalar `α` and a uniform lift `C` make that leader density positive and
//! give it exactly the available leader mass.
//!
//! Masses of deconvolved densities are measured *above their minimum*
//! ([`shifted_mass`]): a deconvolved density is only defined up to a constant,
//! and the positivity lift removes exactly that freedom.

use std::f64::consts::TAU;

use crate::density::TargetDensity;
use crate::error::{Error, Result};
use crate::geometry::{cumulative_integral, derivative, integrate, norm, second_derivative, Field, Norm};
use crate::kernel::{deconvolve, kernel_derivative_l2_norm, kernel_l2_norm, KernelParams};

/// Smallest feedback weight the reference assembly will use.
pub const ALPHA_MIN: f64 = 1e-3;

/// Largest `|∫q|` accepted by flux inversion.
pub const FLUX_TOLERANCE: f64 = 1e-8;

/// Timescale separation factor demanded by [`timescale_check`].
pub const TIMESCALE_FACTOR: f64 = 10.0;

/// The discontinuous switching term and its smooth surrogate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Switching {
    /// `tanh(η e)`.
    Tanh { eta: f64 },
    /// Exact `sgn(e)`, with `sgn(0) = 0`.
    Sign,
}

impl Switching {
    #[inline]
    pub fn apply(&self, e: f64) -> f64 {
        match *self {
            Switching::Tanh { eta } => (eta * e).tanh(),
            Switching::Sign => {
                if e > 0.0 {
                    1.0
                } else if e < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl Default for Switching {
    fn default() -> Self {
        Switching::Tanh { eta: 100.0 }
    }
}

/// Integration constant used when turning a flux divergence into a velocity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FluxGauge {
    /// Flux vanishes at the first node (`Φ₀ = 0`).
    Anchored,
    /// `Φ₀` chosen so the velocity has zero mean, which also minimises `∫ρv²`.
    #[default]
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FollowerGains {
    pub kp: f64,
    pub ks: f64,
    pub switching: Switching,
    /// Bound `k` on the followers' unknown drift.
    pub k: f64,
    pub diffusion: f64,
    /// Density clamp used in flux inversion.
    pub rho_floor: f64,
    pub gauge: FluxGauge,
}

impl FollowerGains {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v}")));
        if !(self.kp > 0.0) {
            return bad("kp_f", self.kp);
        }
        if !(self.ks >= 0.0) {
            return bad("ks_f", self.ks);
        }
        if !(self.k >= 0.0) {
            return bad("k", self.k);
        }
        if !(self.diffusion > 0.0) {
            return bad("diffusion", self.diffusion);
        }
        if !(self.rho_floor > 0.0) {
            return bad("rho_floor", self.rho_floor);
        }
        if let Switching::Tanh { eta } = self.switching {
            if !(eta > 0.0) {
                return bad("eta", eta);
            }
        }
        Ok(())
    }
}

/// `D ρ̄'/ρ̄`.
pub fn feedforward_velocity(target: &TargetDensity, diffusion: f64) -> Result<Field> {
    let rho = target.field();
    if !(rho.min() > 0.0) {
        return Err(Error::NonPositiveTarget { min: rho.min() });
    }
    derivative(rho).zip_map(rho, |d, r| diffusion * d / r)
}

/// `‖(ρ̄'/ρ̄)'‖∞`. Open-loop convergence of the feedforward needs this below 2.
pub fn g1_inf_norm(target: &TargetDensity) -> f64 {
    let rho = target.field();
    let log_slope = derivative(rho).zip_map(rho, |d, r| d / r).expect("same grid");
    norm(&derivative(&log_slope), Norm::Linf)
}

/// `(‖ρ̄'‖∞, ‖ρ̄''‖∞)` on the grid.
pub fn target_slopes(target: &TargetDensity) -> (f64, f64) {
    (
        norm(&derivative(target.field()), Norm::Linf),
        norm(&second_derivative(target.field()), Norm::Linf),
    )
}

/// Smallest switching gain for which the follower error still provably
/// decays at feedback weight `alpha`.
pub fn ks_f_lower_bound(alpha: f64, target: &TargetDensity, gains: &FollowerGains) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let (slope, curvature) = target_slopes(target);
    Ok((alpha * gains.diffusion * curvature + gains.k * slope) / alpha)
}

/// `margin · (D‖ρ̄''‖∞ + k‖ρ̄'‖∞)`: the switching gain used in the experiments
/// (margin 5), i.e. `margin` times the bound at `α = 1`.
pub fn ks_f_with_margin(margin: f64, diffusion: f64, k: f64, target: &TargetDensity) -> f64 {
    let (slope, curvature) = target_slopes(target);
    margin * (diffusion * curvature + k * slope)
}

/// Subtracts the mean so that `∫f = 0`.
pub fn zero_mean(f: &Field) -> Field {
    let m = f.mean();
    f.map(|v| v - m)
}

/// Follower feedback flux divergence `q^F`, made zero-mean by `β`.
pub fn qf_field(e: &Field, gains: &FollowerGains) -> Field {
    let raw = e.map(|v| -gains.kp * v - gains.ks * gains.switching.apply(v));
    zero_mean(&raw)
}

/// Solves `(max(ρ, floor) · v)' = q` with the flux anchored at the first node.
pub fn invert_flux(q: &Field, rho: &Field, rho_floor: f64) -> Result<Field> {
    invert_flux_with(q, rho, rho_floor, FluxGauge::Anchored)
}

pub fn invert_flux_with(q: &Field, rho: &Field, rho_floor: f64, gauge: FluxGauge) -> Result<Field> {
    let total = integrate(q);
    if total.abs() > FLUX_TOLERANCE {
        return Err(Error::NonPeriodicFlux {
            integral: total,
            tolerance: FLUX_TOLERANCE,
        });
    }
    let flux = cumulative_integral(q);
    let inv_rho = rho.map(|r| 1.0 / r.max(rho_floor));
    let offset = match gauge {
        FluxGauge::Anchored => 0.0,
        FluxGauge::Balanced => {
            let num: f64 = flux
                .values()
                .iter()
                .zip(inv_rho.values())
                .map(|(f, w)| f * w)
                .sum();
            let den: f64 = inv_rho.values().iter().sum();
            -num / den
        }
    };
    flux.zip_map(&inv_rho, |f, w| (f + offset) * w)
}

/// `∫(ρ - min ρ)`: the least mass a positive density of this shape can carry.
pub fn shifted_mass(rho: &Field) -> f64 {
    integrate(rho) - TAU * rho.min()
}

/// Positive leader density realising the designed follower velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct LeaderReference {
    pub rho_bar: Field,
    pub alpha: f64,
    /// Uniform lift (density units) added on top of the shifted densities.
    pub c: f64,
    pub m_ff: f64,
    pub m_fb: f64,
}

/// Feedback weight from the mass budget: `(M_L - M_FF)/(M_FB - M_FF)` when the
/// feedback density is the heavier one, else 1; clamped to `[ALPHA_MIN, 1]`.
pub fn choose_alpha(m_l: f64, m_ff: f64, m_fb: f64) -> f64 {
    let alpha = if m_fb > m_ff {
        (m_l - m_ff) / (m_fb - m_ff)
    } else {
        1.0
    };
    alpha.clamp(ALPHA_MIN, 1.0)
}

/// Deconvolves both velocity components and combines them; see
/// [`assemble_from_densities`].
pub fn assemble_leader_reference(
    vff: &Field,
    vfb: &Field,
    alpha_override: Option<f64>,
    m_l: f64,
    p: KernelParams,
) -> Result<LeaderReference> {
    assemble_from_densities(&deconvolve(vff, p), &deconvolve(vfb, p), alpha_override, m_l)
}

/// `ρ̄_L = (1-α)(ρ_ff - min ρ_ff) + α(ρ_fb - min ρ_fb) + C`, with `α` from
/// [`choose_alpha`] (unless overridden) and `C ≥ 0` closing the mass budget.
pub fn assemble_from_densities(
    rho_ff: &Field,
    rho_fb: &Field,
    alpha_override: Option<f64>,
    m_l: f64,
) -> Result<LeaderReference> {
    if !(m_l > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "leader mass must be positive, got {m_l}"
        )));
    }
    let m_ff = shifted_mass(rho_ff);
    let m_fb = shifted_mass(rho_fb);
    if m_l <= m_ff {
        return Err(Error::InsufficientLeaderMass {
            leader_mass: m_l,
            feedforward_mass: m_ff,
        });
    }
    let alpha = match alpha_override {
        Some(a) if a > 0.0 && a <= 1.0 => a,
        Some(a) => {
            return Err(Error::InvalidParameter(format!(
                "alpha override must lie in (0, 1], got {a}"
            )));
        }
        None => choose_alpha(m_l, m_ff, m_fb),
    };
    let (min_ff, min_fb) = (rho_ff.min(), rho_fb.min());
    let shape = rho_ff.zip_map(rho_fb, |a, b| (1.0 - alpha) * (a - min_ff) + alpha * (b - min_fb))?;
    let shape_mass = integrate(&shape);
    let mut c = (m_l - shape_mass) / TAU;
    let mut rho_bar = if c >= 0.0 {
        &shape + c
    } else {
        // only reachable with α pinned at ALPHA_MIN or overridden
        log::warn!("leader mass budget exceeded at alpha = {alpha}; rescaling reference");
        c = 0.0;
        &shape * (m_l / shape_mass)
    };
    if !(rho_bar.min() > 0.0) {
        let lifted = &rho_bar + 1e-9 * m_l / TAU;
        rho_bar = &lifted * (m_l / integrate(&lifted));
    }
    Ok(LeaderReference {
        rho_bar,
        alpha,
        c,
        m_ff,
        m_fb,
    })
}

/// Pieces of the leader-mass lower bound `M_FF + k‖ρ̄'‖∞ M_s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMassEstimate {
    pub feedforward_mass: f64,
    /// `M_s`: mass of the density generated by the switching term alone.
    pub switching_mass: f64,
    pub surcharge: f64,
    pub total: f64,
}

/// Leader-mass lower bound at one instant, for follower density `rho_f` and
/// error `e_worst`. Take the maximum over a trajectory for the actual bound.
pub fn minimum_leader_mass(
    target: &TargetDensity,
    gains: &FollowerGains,
    e_worst: &Field,
    rho_f: &Field,
    p: KernelParams,
) -> Result<MinMassEstimate> {
    let m_ff = shifted_mass(&deconvolve(&feedforward_velocity(target, gains.diffusion)?, p));
    let (slope, _) = target_slopes(target);
    let m_s = switching_mass(e_worst, rho_f, gains, p)?;
    let surcharge = gains.k * slope * m_s;
    Ok(MinMassEstimate {
        feedforward_mass: m_ff,
        switching_mass: m_s,
        surcharge,
        total: m_ff + surcharge,
    })
}

/// `M_s`: the switching term `-sgn(e)` pushed alone through flux inversion and
/// deconvolution, measured with [`shifted_mass`].
pub fn switching_mass(e: &Field, rho_f: &Field, gains: &FollowerGains, p: KernelParams) -> Result<f64> {
    let q = zero_mean(&e.map(|v| -gains.switching.apply(v)));
    let v = invert_flux_with(&q, rho_f, gains.rho_floor, gains.gauge)?;
    Ok(shifted_mass(&deconvolve(&v, p)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingConstants {
    pub j: f64,
    pub s: f64,
}

/// Constants bounding how the leaders' tracking error leaks into the
/// followers' Lyapunov derivative:
/// `J = 2‖ρ̄'‖₂‖f‖₂ + 2‖ρ̄‖₂‖f'‖₂`, `S = √2‖f‖₂`.
pub fn coupling_constants(target: &TargetDensity, p: KernelParams) -> CouplingConstants {
    let f2 = kernel_l2_norm(p);
    let fx2 = kernel_derivative_l2_norm(p);
    let rho = target.field();
    let j = 2.0 * norm(&derivative(rho), Norm::L2) * f2 + 2.0 * norm(rho, Norm::L2) * fx2;
    CouplingConstants {
        j,
        s: std::f64::consts::SQRT_2 * f2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimescaleCheck {
    pub separated: bool,
    /// `k_p^L / (2(2D + α k_p^F))`.
    pub ratio: f64,
}

/// Whether the leaders are at least [`TIMESCALE_FACTOR`] times faster than
/// the followers' closed-loop decay.
pub fn timescale_check(kp_l: f64, kp_f: f64, alpha: f64, diffusion: f64) -> TimescaleCheck {
    let ratio = kp_l / (2.0 * (2.0 * diffusion + alpha * kp_f));
    TimescaleCheck {
        separated: ratio >= TIMESCALE_FACTOR,
        ratio,
    }
}
