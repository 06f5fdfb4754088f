//! Tracking controller steering the leader density onto its reference.
//!
//! `(ρ_L u)' = q_L` with `q_L = -k_p e_L - k_s sgn(e_L) + ∂_t ρ̄_L + δ`. The
//! time derivative of the reference is not available in closed form; it is
//! estimated by backward differences of an exponential moving average.

use crate::error::{Error, Result};
use crate::follower_control::{invert_flux_with, zero_mean, FluxGauge, Switching};
use crate::geometry::{norm, Field, Norm};

/// Default EMA weight per control update.
pub const DEFAULT_EMA_WEIGHT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderGains {
    pub kp: f64,
    pub ks: f64,
    /// Bound `r` on the leaders' unknown drift.
    pub r: f64,
    pub switching: Switching,
    pub rho_floor: f64,
    pub gauge: FluxGauge,
}

impl LeaderGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0) {
            return Err(Error::InvalidParameter(format!("kp_l = {}", self.kp)));
        }
        if !(self.ks >= 0.0) || !(self.r >= 0.0) || !(self.rho_floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "leader gains must be non-negative (ks = {}, r = {}, floor = {})",
                self.ks, self.r, self.rho_floor
            )));
        }
        Ok(())
    }
}

/// Backward-difference rate of an exponentially smoothed reference stream.
#[derive(Clone, Debug)]
pub struct ReferenceRateEstimator {
    lambda: f64,
    dt: f64,
    ema: Option<Field>,
}

impl ReferenceRateEstimator {
    pub fn new(lambda: f64, dt_control: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "EMA weight must lie in (0, 1], got {lambda}"
            )));
        }
        if !(dt_control > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "control period must be positive, got {dt_control}"
            )));
        }
        Ok(Self {
            lambda,
            dt: dt_control,
            ema: None,
        })
    }

    pub fn ema(&self) -> Option<&Field> {
        self.ema.as_ref()
    }

    /// Feeds the next reference sample and returns the rate estimate. The
    /// first call seeds the average and returns zero.
    pub fn update(&mut self, rho_bar: &Field) -> Result<Field> {
        match &mut self.ema {
            None => {
                self.ema = Some(rho_bar.clone());
                Ok(Field::zeros(rho_bar.grid()))
            }
            Some(ema) => {
                let lambda = self.lambda;
                let next = ema.zip_map(rho_bar, |a, b| (1.0 - lambda) * a + lambda * b)?;
                let inv_dt = 1.0 / self.dt;
                let rate = next.zip_map(ema, |n, o| (n - o) * inv_dt)?;
                *ema = next;
                Ok(rate)
            }
        }
    }
}

/// Leader flux divergence, made zero-mean by `δ`.
///
/// The leaders obey `ρ_t = -(ρ u)' = -q`, so with `e = ρ̄ - ρ` the error moves
/// as `e_t = ρ̄_t + q`. The reference rate therefore enters with a minus sign,
/// which cancels `ρ̄_t` and leaves `e_t = -kp e - ks sgn(e)`.
pub fn ql_field(e_l: &Field, rate: &Field, gains: &LeaderGains) -> Result<Field> {
    let raw = e_l.zip_map(rate, |e, r| {
        -gains.kp * e - gains.ks * gains.switching.apply(e) - r
    })?;
    Ok(zero_mean(&raw))
}

/// The macroscopic control field `u` solving `(ρ_L u)' = q_L`.
pub fn leader_velocity(q_l: &Field, rho_l: &Field, gains: &LeaderGains) -> Result<Field> {
    invert_flux_with(q_l, rho_l, gains.rho_floor, gains.gauge)
}

/// Switching-gain requirement for the leaders, evaluated against both the
/// leaders' own bound `r` and the followers' bound `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeaderSwitchingCheck {
    pub required_r: f64,
    pub required_k: f64,
    pub satisfied_r: bool,
    pub satisfied_k: bool,
}

pub fn leader_switching_check(gains: &LeaderGains, k: f64, rho_bar_l: &Field) -> LeaderSwitchingCheck {
    let peak = norm(rho_bar_l, Norm::Linf);
    let required_r = gains.r * peak;
    let required_k = k * peak;
    LeaderSwitchingCheck {
        required_r,
        required_k,
        satisfied_r: gains.ks > required_r || (gains.r == 0.0 && gains.ks >= 0.0),
        satisfied_k: gains.ks > required_k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{integrate, Grid};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn gains() -> LeaderGains {
        LeaderGains {
            kp: 50.0,
            ks: 0.0,
            r: 0.0,
            switching: Switching::default(),
            rho_floor: 1e-6 * 30.0 / TAU,
            gauge: FluxGauge::Anchored,
        }
    }

    #[test]
    fn first_update_is_zero_and_constant_stream_decays() {
        let g = Grid::default();
        let mut est = ReferenceRateEstimator::new(0.1, 2e-4).unwrap();
        let r0 = Field::from_fn(g, |x| 1.0 + x.cos());
        assert_eq!(norm(&est.update(&r0).unwrap(), Norm::Linf), 0.0);
        let r1 = Field::from_fn(g, |x| 1.0 + 0.5 * x.cos());
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let rate = norm(&est.update(&r1).unwrap(), Norm::Linf);
            assert!(rate <= last);
            last = rate;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn ramp_rate_follows_closed_form() {
        // d_n = ema_n - ema_{n-1} obeys d_n = (1-λ)d_{n-1} + λ a dt, d_0 = 0,
        // hence rate_n = a (1 - (1-λ)^n).
        let g = Grid::default();
        let (lambda, dt, a) = (0.1, 2e-4, 3.0);
        let phi = Field::from_fn(g, |x| 1.0 + 0.3 * x.sin());
        let mut est = ReferenceRateEstimator::new(lambda, dt).unwrap();
        for n in 0..120usize {
            let t = n as f64 * dt;
            let rate = est.update(&(&phi * (a * t))).unwrap();
            let expect = &phi * (a * (1.0 - (1.0 - lambda).powi(n as i32)));
            assert!(norm(&(&rate - &expect), Norm::Linf) < 1e-9, "step {n}");
        }
    }

    #[test]
    fn estimator_rejects_bad_input() {
        assert!(ReferenceRateEstimator::new(0.0, 1.0).is_err());
        assert!(ReferenceRateEstimator::new(0.5, 0.0).is_err());
        let mut est = ReferenceRateEstimator::new(0.5, 1.0).unwrap();
        est.update(&Field::zeros(Grid::new(10).unwrap())).unwrap();
        assert!(est.update(&Field::zeros(Grid::new(12).unwrap())).is_err());
    }

    #[test]
    fn ql_examples() {
        let g = Grid::default();
        let z = Field::zeros(g);
        assert_eq!(norm(&ql_field(&z, &z, &gains()).unwrap(), Norm::Linf), 0.0);
        let e = Field::from_fn(g, f64::sin);
        let q = ql_field(&e, &z, &gains()).unwrap();
        assert!(norm(&(&q - &(&e * -50.0)), Norm::Linf) < 1e-12);
        let rate = Field::from_fn(g, f64::cos);
        let q = ql_field(&z, &rate, &gains()).unwrap();
        assert!(norm(&(&q + &rate), Norm::Linf) < 1e-12);
    }

    #[test]
    fn leader_velocity_examples() {
        let g = Grid::default();
        let m_l = 30.0;
        let rho = Field::constant(g, m_l / TAU);
        let u = leader_velocity(&Field::zeros(g), &rho, &gains()).unwrap();
        assert_eq!(norm(&u, Norm::Linf), 0.0);
        let u = leader_velocity(&Field::from_fn(g, f64::cos), &rho, &gains()).unwrap();
        let exact = Field::from_fn(g, |x| TAU / m_l * x.sin());
        assert!(norm(&(&u - &exact), Norm::Linf) < TAU / m_l * g.spacing().powi(2));
    }

    #[test]
    fn switching_check_reports_both_readings() {
        let g = Grid::default();
        let rho_bar = Field::constant(g, 30.0 / TAU);
        let mut gn = gains();
        gn.ks = 0.1;
        let c = leader_switching_check(&gn, 1.0, &rho_bar);
        assert!(c.satisfied_r);
        assert!(!c.satisfied_k);
        assert_abs_diff_eq!(c.required_k, 30.0 / TAU, epsilon = 1e-12);
        gn.r = 0.5;
        assert!(!leader_switching_check(&gn, 1.0, &rho_bar).satisfied_r);
    }

    proptest! {
        #[test]
        fn ql_is_zero_mean(vals in prop::collection::vec(-5.0f64..5.0, 150), ks in 0.0f64..2.0) {
            let g = Grid::default();
            let mut gn = gains();
            gn.ks = ks;
            let e = Field::new(g, vals).unwrap();
            let rate = e.map(|v| v * v);
            let q = ql_field(&e, &rate, &gn).unwrap();
            prop_assert!(integrate(&q).abs() <= 1e-12 * 50.0);
        }

        #[test]
        fn rate_estimator_is_linear(
            a in prop::collection::vec(-1.0f64..1.0, 3 * 20),
            b in prop::collection::vec(-1.0f64..1.0, 3 * 20),
            s in -2.0f64..2.0,
        ) {
            let g = Grid::new(20).unwrap();
            let stream = |v: &[f64], k: usize| Field::new(g, v[k * 20..(k + 1) * 20].to_vec()).unwrap();
            let mut ea = ReferenceRateEstimator::new(0.3, 0.1).unwrap();
            let mut eb = ReferenceRateEstimator::new(0.3, 0.1).unwrap();
            let mut ec = ReferenceRateEstimator::new(0.3, 0.1).unwrap();
            for k in 0..3 {
                let fa = stream(&a, k);
                let fb = stream(&b, k);
                let ra = ea.update(&fa).unwrap();
                let rb = eb.update(&fb).unwrap();
                let rc = ec.update(&(&fa + &(&fb * s))).unwrap();
                let lin = &ra + &(&rb * s);
                prop_assert!(norm(&(&rc - &lin), Norm::Linf) < 1e-10);
            }
        }
    }
}
