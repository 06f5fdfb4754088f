//! One evaluation of the full control pipeline, shared by both simulators.
//!
//! Given the current follower and leader densities, [`ControlLaw::step`]
//! produces the follower feedback, the leader reference density and the
//! leader control field `u`. The only state carried between calls is the
//! reference-rate estimator.

use crate::density::{error_field, lyapunov, DensityEstimator, TargetDensity};
use crate::error::Result;
use crate::follower_control::{
    assemble_from_densities, feedforward_velocity, invert_flux_with, ks_f_lower_bound, qf_field,
    shifted_mass, switching_mass, target_slopes, FollowerGains, LeaderReference,
};
use crate::geometry::{integrate, norm, Field, Norm};
use crate::kernel::{deconvolve, KernelParams};
use crate::leader_control::{leader_velocity, ql_field, LeaderGains, ReferenceRateEstimator};
use crate::metrics::MetricsRow;
use crate::scenario::Setup;

#[derive(Clone, Debug)]
pub struct ControlLaw {
    target: TargetDensity,
    kernel: KernelParams,
    follower: FollowerGains,
    leader: LeaderGains,
    leader_mass: f64,
    alpha_override: Option<f64>,
    rho_ff: Field,
    m_ff: f64,
    target_slope: f64,
    reference_filter: Option<DensityEstimator>,
    rate: ReferenceRateEstimator,
}

/// Everything computed in one control update.
#[derive(Clone, Debug)]
pub struct ControlStep {
    pub e_f: Field,
    pub q_f: Field,
    pub v_fb: Field,
    pub reference: LeaderReference,
    /// The reference the leaders track (filtered when configured).
    pub rho_bar_l: Field,
    pub rate: Field,
    pub e_l: Field,
    pub q_l: Field,
    pub u: Field,
    pub ks_bound: f64,
    /// Instantaneous leader-mass lower bound.
    pub min_mass: f64,
}

impl ControlLaw {
    pub fn new(setup: &Setup) -> Result<Self> {
        let sc = &setup.scenario;
        let vff = feedforward_velocity(&setup.target, setup.follower_gains.diffusion)?;
        let rho_ff = deconvolve(&vff, setup.kernel);
        let reference_filter = sc
            .leader_control
            .smooth_reference
            .then(|| DensityEstimator::new(setup.grid, setup.smoother));
        Ok(Self {
            target: setup.target.clone(),
            kernel: setup.kernel,
            follower: setup.follower_gains,
            leader: setup.leader_gains,
            leader_mass: sc.population.leader_mass,
            alpha_override: sc.follower_control.alpha,
            m_ff: shifted_mass(&rho_ff),
            rho_ff,
            target_slope: target_slopes(&setup.target).0,
            reference_filter,
            rate: ReferenceRateEstimator::new(sc.leader_control.ema_weight, sc.numerics.dt_followers)?,
        })
    }

    pub fn target(&self) -> &TargetDensity {
        &self.target
    }

    pub fn follower_gains(&self) -> &FollowerGains {
        &self.follower
    }

    pub fn leader_gains(&self) -> &LeaderGains {
        &self.leader
    }

    /// Shifted mass of the deconvolved feedforward velocity.
    pub fn feedforward_mass(&self) -> f64 {
        self.m_ff
    }

    pub fn step(&mut self, rho_f: &Field, rho_l: &Field) -> Result<ControlStep> {
        let e_f = error_field(&self.target, rho_f)?;
        let q_f = qf_field(&e_f, &self.follower);
        let v_fb = invert_flux_with(&q_f, rho_f, self.follower.rho_floor, self.follower.gauge)?;
        let rho_fb = deconvolve(&v_fb, self.kernel);
        let reference =
            assemble_from_densities(&self.rho_ff, &rho_fb, self.alpha_override, self.leader_mass)?;
        let rho_bar_l = match &self.reference_filter {
            Some(f) => f.smooth(&reference.rho_bar),
            None => reference.rho_bar.clone(),
        };
        let rate = self.rate.update(&rho_bar_l)?;
        let e_l = rho_bar_l.zip_map(rho_l, |a, b| a - b)?;
        let q_l = ql_field(&e_l, &rate, &self.leader)?;
        let u = leader_velocity(&q_l, rho_l, &self.leader)?;

        let ks_bound = ks_f_lower_bound(reference.alpha, &self.target, &self.follower)?;
        let min_mass = if self.follower.k > 0.0 {
            let m_s = switching_mass(&e_f, rho_f, &self.follower, self.kernel)?;
            self.m_ff + self.follower.k * self.target_slope * m_s
        } else {
            self.m_ff
        };
        Ok(ControlStep {
            e_f,
            q_f,
            v_fb,
            reference,
            rho_bar_l,
            rate,
            e_l,
            q_l,
            u,
            ks_bound,
            min_mass,
        })
    }
}

impl ControlStep {
    pub fn metrics_row(&self, t: f64, rho_f: &Field, rho_l: &Field) -> MetricsRow {
        MetricsRow {
            t,
            l2_err_f: norm(&self.e_f, Norm::L2),
            l2_err_l: norm(&self.e_l, Norm::L2),
            v_f: lyapunov(&self.e_f),
            v_l: lyapunov(&self.e_l),
            alpha: self.reference.alpha,
            c: self.reference.c,
            mass_f: integrate(rho_f),
            mass_l: integrate(rho_l),
            ks_bound_active: self.ks_bound,
            min_mass_estimate: self.min_mass,
        }
    }
}
