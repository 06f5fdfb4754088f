//! Target densities, the agents→density bridge, and error metrics.
//!
//! Agent positions become a density in two steps: a nearest-node histogram
//! (each agent deposits `m/h` at its closest node) followed by a circular
//! convolution with a wrapped Gaussian normalised to unit integral on the
//! grid. Both steps conserve mass exactly up to rounding.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::{integrate, norm, CircularConvolver, Field, Grid, Norm};

/// A strictly positive desired density with a known total mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDensity {
    field: Field,
    mass: f64,
}

impl TargetDensity {
    /// Normalises `field` to carry `mass`. Rejects non-positive profiles.
    pub fn new(field: Field, mass: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "target mass must be positive, got {mass}"
            )));
        }
        let min = field.min();
        if !(min > 0.0) {
            return Err(Error::NonPositiveTarget { min });
        }
        let scale = mass / integrate(&field);
        Ok(Self {
            field: &field * scale,
            mass,
        })
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn grid(&self) -> Grid {
        self.field.grid()
    }
}

/// `mass · e^{κ cos(x - μ)} / Z`, `Z` the grid quadrature of the exponential.
pub fn von_mises_target(grid: Grid, kappa: f64, mu: f64, mass: f64) -> Result<TargetDensity> {
    if !kappa.is_finite() || !mu.is_finite() {
        return Err(Error::NonFinite("von_mises_target"));
    }
    TargetDensity::new(Field::from_fn(grid, |x| (kappa * (x - mu).cos()).exp()), mass)
}

/// Gaussian smoothing applied after the histogram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoother {
    sigma: f64,
}

impl Smoother {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing sigma must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Circulant samples of the wrapped Gaussian, scaled to unit grid integral.
    pub fn kernel(&self, grid: Grid) -> Field {
        let s = self.sigma;
        let images = (3.0 + 8.0 * s / TAU).ceil() as i32;
        let raw = Field::kernel_samples(grid, |d| {
            (-images..=images)
                .map(|k| {
                    let y = d + k as f64 * TAU;
                    (-0.5 * y * y / (s * s)).exp()
                })
                .sum()
        });
        let z = integrate(&raw);
        &raw * (1.0 / z)
    }
}

impl Default for Smoother {
    fn default() -> Self {
        Self {
            sigma: std::f64::consts::PI / 30.0,
        }
    }
}

/// Reusable histogram + smoothing pipeline for one grid.
#[derive(Clone, Debug)]
pub struct DensityEstimator {
    grid: Grid,
    smoother: Smoother,
    conv: CircularConvolver,
}

impl DensityEstimator {
    pub fn new(grid: Grid, smoother: Smoother) -> Self {
        let conv = CircularConvolver::new(&smoother.kernel(grid));
        Self { grid, smoother, conv }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn smoother(&self) -> Smoother {
        self.smoother
    }

    /// Mass-per-node histogram (density units), before smoothing.
    pub fn histogram(&self, positions: &[f64], mass_per_agent: f64) -> Field {
        let mut bins = vec![0.0; self.grid.n_points()];
        let w = mass_per_agent / self.grid.spacing();
        for &x in positions {
            bins[self.grid.nearest_node(x)] += w;
        }
        Field::from_raw(self.grid, bins)
    }

    pub fn estimate(&self, positions: &[f64], mass_per_agent: f64) -> Field {
        if positions.is_empty() {
            log::warn!("density estimate requested for an empty population");
            return Field::zeros(self.grid);
        }
        self.smooth(&self.histogram(positions, mass_per_agent))
    }

    /// Applies the Gaussian filter. Clamps the FFT round-off below zero.
    pub fn smooth(&self, f: &Field) -> Field {
        let out = self.conv.apply(f);
        if f.min() >= 0.0 {
            out.map(|v| v.max(0.0))
        } else {
            out
        }
    }
}

/// One-shot version of [`DensityEstimator::estimate`].
pub fn estimate_density(positions: &[f64], mass_per_agent: f64, grid: Grid, s: Smoother) -> Result<Field> {
    if !(mass_per_agent > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mass per agent must be positive, got {mass_per_agent}"
        )));
    }
    if positions.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("agent positions"));
    }
    Ok(DensityEstimator::new(grid, s).estimate(positions, mass_per_agent))
}

/// `target - estimate`.
pub fn error_field(target: &TargetDensity, estimate: &Field) -> Result<Field> {
    target.field.zip_map(estimate, |a, b| a - b)
}

/// `½‖e‖₂²`.
pub fn lyapunov(e: &Field) -> f64 {
    0.5 * norm(e, Norm::L2).powi(2)
}
