//! The odd leader→follower interaction kernel and its inverse.
//!
//! On `(0, 2π)` the kernel is `f(x) = sinh((π - x)/ℓ) / sinh(π/ℓ)`, extended
//! as an odd function, so `f(0±) = ±1` and `f(±π) = 0`. It is the periodic
//! Green's function of `ρ ↦ v` with `v'' - v/ℓ² = 2ρ'`, which is why a velocity
//! field can be turned back into the density that generates it:
//! `ρ = v'/2 - (1/2ℓ²) ∫v + const`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{cumulative_integral, derivative, Field, Grid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    ell: f64,
}

impl KernelParams {
    pub fn new(ell: f64) -> Result<Self> {
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "interaction length must be positive, got {ell}"
            )));
        }
        Ok(Self { ell })
    }

    /// Interaction length ℓ.
    pub fn ell(&self) -> f64 {
        self.ell
    }
}

/// Kernel value at a wrapped displacement `x ∈ [-π, π]`. `f(0) = 0`.
#[inline]
pub fn eval_kernel(x: f64, p: KernelParams) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let a = x.abs() / p.ell;
    let b = 2.0 * PI / p.ell;
    // sinh ratio rewritten with expm1 so that neither small nor large ℓ overflows
    let mag = (-a).exp() * (-(2.0 * a - b).exp_m1()) / (-(-b).exp_m1());
    mag.copysign(x)
}

/// Slope of the kernel away from the origin; even in `x`. At `x = 0` this
/// returns the right limit (the jump itself is not part of the result).
#[inline]
pub fn eval_kernel_derivative(x: f64, p: KernelParams) -> f64 {
    let a = x.abs() / p.ell;
    let b = 2.0 * PI / p.ell;
    let mag = (-a).exp() * (1.0 + (2.0 * a - b).exp()) / (-(-b).exp_m1());
    -mag / p.ell
}

/// Circulant samples of the kernel on `grid`, ready for convolution.
pub fn kernel_samples(grid: Grid, p: KernelParams) -> Field {
    Field::kernel_samples(grid, |d| eval_kernel(d, p))
}

/// Exact `‖f‖₂` over the ring.
pub fn kernel_l2_norm(p: KernelParams) -> f64 {
    // 2/sinh²(π/ℓ) ∫_0^π sinh²(y/ℓ) dy, ∫ sinh² = sinh(2πa)/(4a) - π/2
    let a = 1.0 / p.ell;
    let s = (a * PI).sinh();
    (2.0 / (s * s) * ((2.0 * a * PI).sinh() / (4.0 * a) - PI / 2.0)).sqrt()
}

/// Exact `‖f_x‖₂` over the ring (smooth part, the jump at 0 excluded).
pub fn kernel_derivative_l2_norm(p: KernelParams) -> f64 {
    let a = 1.0 / p.ell;
    let s = (a * PI).sinh();
    (2.0 * a * a / (s * s) * ((2.0 * a * PI).sinh() / (4.0 * a) + PI / 2.0)).sqrt()
}

/// Density generating the velocity field `v` through convolution with the
/// kernel. The free additive constant is fixed by anchoring the antiderivative
/// at the first node; callers lift the result as needed.
pub fn deconvolve(v: &Field, p: KernelParams) -> Field {
    let dv = derivative(v);
    let iv = cumulative_integral(v);
    let c = 0.5 / (p.ell * p.ell);
    dv.zip_map(&iv, |d, i| 0.5 * d - c * i)
        .expect("same grid by construction")
}
