//! The periodic domain `[-π, π)` and discrete calculus on it.
//!
//! A [`Grid`] holds `n` uniformly spaced nodes `x_j = -π + j·h`, `h = 2π/n`.
//! A [`Field`] is a real function sampled on those nodes. Every operator in
//! this module treats fields as periodic: node `n - 1` neighbours node `0`.
//!
//! Stencils are second order. The controllers produce nearly discontinuous
//! fields (regularised sign functions), where spectral derivatives ring.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Default resolution used throughout the experiments.
pub const DEFAULT_POINTS: usize = 150;

/// Wraps an angle into `(-π, π]`.
pub fn wrap(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("wrap"));
    }
    Ok(wrap_angle(x))
}

/// Unchecked [`wrap`] for hot loops. NaN in, NaN out.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let mut y = (x + PI).rem_euclid(TAU) - PI;
    if y <= -PI {
        y += TAU;
    }
    y
}

/// Signed geodesic displacement from `y` to `x` on the ring.
pub fn wrapped_difference(x: f64, y: f64) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("wrapped_difference"));
    }
    Ok(wrap_angle(x - y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n_points: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self {
            n_points,
            spacing: TAU / n_points as f64,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn node(&self, j: usize) -> f64 {
        -PI + j as f64 * self.spacing
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |j| self.node(j))
    }

    /// Index of the node closest to `x` (any real, wrapped onto the ring).
    #[inline]
    pub fn nearest_node(&self, x: f64) -> usize {
        let s = (wrap_angle(x) + PI) / self.spacing;
        (s.round() as usize) % self.n_points
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self.n_points != other.n_points {
            return Err(Error::GridMismatch {
                left: self.n_points,
                right: other.n_points,
            });
        }
        Ok(())
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self::new(DEFAULT_POINTS).expect("default grid")
    }
}

/// A function sampled on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::LengthMismatch {
                expected: grid.n_points(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self { grid, values })
    }

    /// Builds a field without the finiteness check. Callers that cannot
    /// guarantee finite values should run [`Field::is_finite`] afterwards.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.n_points());
        Self { grid, values }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(grid, grid.nodes().map(f).collect())
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.n_points()])
    }

    /// Circulant samples `c[m] = k(wrap(m·h))` of a kernel, the layout
    /// expected by [`circular_convolve`].
    pub fn kernel_samples(grid: Grid, k: impl Fn(f64) -> f64) -> Self {
        let h = grid.spacing();
        Self::from_raw(
            grid,
            (0..grid.n_points())
                .map(|m| k(wrap_angle(m as f64 * h)))
                .collect(),
        )
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Self::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Self::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Periodic linear interpolation at an arbitrary (finite) position.
    #[inline]
    pub fn sample(&self, x: f64) -> f64 {
        let n = self.grid.n_points;
        // wrap_angle lands in (-π, π], so s is in (0, n]
        let s = (wrap_angle(x) + PI) / self.grid.spacing;
        let j = s.floor();
        let w = s - j;
        let j = (j as usize).min(n);
        let j = if j == n { 0 } else { j };
        let k = if j + 1 == n { 0 } else { j + 1 };
        self.values[j] * (1.0 - w) + self.values[k] * w
    }

    /// Circular shift by whole cells: `out[j] = self[j - cells]`.
    pub fn shifted(&self, cells: isize) -> Field {
        let n = self.values.len() as isize;
        Self::from_raw(
            self.grid,
            (0..n)
                .map(|j| self.values[(j - cells).rem_euclid(n) as usize])
                .collect(),
        )
    }
}

fn binary(a: &Field, b: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
    assert_eq!(
        a.grid.n_points, b.grid.n_points,
        "field arithmetic on mismatched grids"
    );
    Field::from_raw(
        a.grid,
        a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
    )
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        binary(self, rhs, |a, b| a + b)
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        binary(self, rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.map(|v| v * rhs)
    }
}

impl Add<f64> for &Field {
    type Output = Field;
    fn add(self, rhs: f64) -> Field {
        self.map(|v| v + rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.map(|v| -v)
    }
}

/// Central difference `(f[j+1] - f[j-1]) / 2h`.
pub fn derivative(f: &Field) -> Field {
    let n = f.len();
    let v = &f.values;
    let inv = 0.5 / f.grid.spacing;
    Field::from_raw(
        f.grid,
        (0..n)
            .map(|j| (v[(j + 1) % n] - v[(j + n - 1) % n]) * inv)
            .collect(),
    )
}

/// Three-point Laplacian. Input must be periodic; a seam produces spikes.
pub fn second_derivative(f: &Field) -> Field {
    let n = f.len();
    let v = &f.values;
    let inv = 1.0 / (f.grid.spacing * f.grid.spacing);
    Field::from_raw(
        f.grid,
        (0..n)
            .map(|j| (v[(j + 1) % n] - 2.0 * v[j] + v[(j + n - 1) % n]) * inv)
            .collect(),
    )
}

/// Trapezoidal antiderivative anchored at the first node: `F(x_0) = 0`.
pub fn cumulative_integral(f: &Field) -> Field {
    let h = f.grid.spacing;
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    Field::from_raw(f.grid, out)
}

/// Periodic trapezoid rule, `h · Σ f_j`.
pub fn integrate(f: &Field) -> f64 {
    f.grid.spacing * f.values.iter().sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

pub fn norm(f: &Field, which: Norm) -> f64 {
    let h = f.grid.spacing;
    match which {
        Norm::L1 => h * f.values.iter().map(|v| v.abs()).sum::<f64>(),
        Norm::L2 => (h * f.values.iter().map(|v| v * v).sum::<f64>()).sqrt(),
        Norm::Linf => f.values.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Checked periodic interpolation; see [`Field::sample`].
pub fn interpolate(f: &Field, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("interpolate"));
    }
    Ok(f.sample(x))
}

/// `g(x_i) = h Σ_j k(x_i - x_j) f(x_j)` evaluated through the DFT.
///
/// `kernel` holds circulant samples (see [`Field::kernel_samples`]).
pub fn circular_convolve(kernel: &Field, f: &Field) -> Result<Field> {
    kernel.grid.check_same(&f.grid)?;
    Ok(CircularConvolver::new(kernel).apply(f))
}

/// The same sum as [`circular_convolve`], evaluated term by term in O(n²).
pub fn circular_convolve_direct(k: impl Fn(f64) -> f64, f: &Field) -> Field {
    let g = f.grid;
    let h = g.spacing;
    Field::from_raw(
        g,
        (0..g.n_points())
            .map(|i| {
                let xi = g.node(i);
                h * f
                    .values
                    .iter()
                    .enumerate()
                    .map(|(j, &fj)| k(wrap_angle(xi - g.node(j))) * fj)
                    .sum::<f64>()
            })
            .collect(),
    )
}

/// A convolution with a fixed kernel, with its spectrum cached.
#[derive(Clone)]
pub struct CircularConvolver {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex<f64>>,
}

impl std::fmt::Debug for CircularConvolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CircularConvolver")
            .field("n_points", &self.grid.n_points)
            .finish()
    }
}

impl CircularConvolver {
    pub fn new(kernel: &Field) -> Self {
        let n = kernel.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut spectrum: Vec<Complex<f64>> = kernel.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        forward.process(&mut spectrum);
        // fold the quadrature weight and the inverse-DFT normalisation in once
        let scale = kernel.grid.spacing / n as f64;
        for c in &mut spectrum {
            *c *= scale;
        }
        Self {
            grid: kernel.grid,
            forward,
            inverse,
            spectrum,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn apply(&self, f: &Field) -> Field {
        assert_eq!(f.grid.n_points, self.grid.n_points, "convolver grid mismatch");
        let mut buf: Vec<Complex<f64>> = f.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        Field::from_raw(self.grid, buf.into_iter().map(|c| c.re).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::default()
    }

    fn max_err(a: &Field, b: &Field) -> f64 {
        norm(&(a - b), Norm::Linf)
    }

    #[test]
    fn grid_layout() {
        let g = grid();
        assert_abs_diff_eq!(g.spacing() * g.n_points() as f64, TAU, epsilon = 1e-14);
        let nodes: Vec<f64> = g.nodes().collect();
        assert_eq!(nodes[0], -PI);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(*nodes.last().unwrap() < PI);
        assert!(Grid::new(2).is_err());
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap(0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrap(1.5 * PI).unwrap(), -0.5 * PI, epsilon = 1e-15);
        assert_eq!(wrap(-PI).unwrap(), PI);
        assert_eq!(wrap(PI).unwrap(), PI);
        assert!(wrap(f64::NAN).is_err());
        assert!(wrap(f64::INFINITY).is_err());
    }

    #[test]
    fn wrapped_difference_examples() {
        assert_eq!(wrapped_difference(PI / 2.0, PI / 2.0).unwrap(), 0.0);
        assert_abs_diff_eq!(wrapped_difference(-3.0, 3.0).unwrap(), TAU - 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(wrapped_difference(PI, -PI).unwrap(), 0.0, epsilon = 1e-15);
        assert!(wrapped_difference(1.0, f64::NAN).is_err());
    }

    #[test]
    fn derivative_of_trig() {
        let g = grid();
        let h2 = g.spacing().powi(2);
        assert!(norm(&derivative(&Field::constant(g, 3.0)), Norm::Linf) < 1e-12);
        let d = derivative(&Field::from_fn(g, f64::sin));
        assert!(max_err(&d, &Field::from_fn(g, f64::cos)) <= h2);
        let d = derivative(&Field::from_fn(g, f64::cos));
        assert!(max_err(&d, &Field::from_fn(g, |x| -x.sin())) <= h2);
    }

    #[test]
    fn second_derivative_of_trig() {
        let g = grid();
        assert!(norm(&second_derivative(&Field::constant(g, -2.0)), Norm::Linf) < 1e-10);
        let d = second_derivative(&Field::from_fn(g, f64::sin));
        assert!(max_err(&d, &Field::from_fn(g, |x| -x.sin())) <= g.spacing().powi(2));
    }

    #[test]
    fn second_derivative_sees_the_seam() {
        let g = grid();
        let saw = Field::new(g, (0..g.n_points()).map(|j| j as f64).collect()).unwrap();
        let d = second_derivative(&saw);
        // interior is exactly linear
        assert!(d.values()[1..g.n_points() - 1].iter().all(|v| v.abs() < 1e-6));
        assert!(d.values()[0].abs() > 1e3);
    }

    #[test]
    fn cumulative_integral_examples() {
        let g = grid();
        assert!(norm(&cumulative_integral(&Field::zeros(g)), Norm::Linf) == 0.0);
        let c = cumulative_integral(&Field::from_fn(g, f64::cos));
        assert!(max_err(&c, &Field::from_fn(g, f64::sin)) <= g.spacing().powi(2));
        let c = cumulative_integral(&Field::constant(g, 1.0));
        assert!(max_err(&c, &Field::from_fn(g, |x| x + PI)) < 1e-12);
    }

    #[test]
    fn integrate_examples() {
        let g = grid();
        assert_abs_diff_eq!(integrate(&Field::constant(g, 1.0 / TAU)), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(integrate(&Field::from_fn(g, f64::sin)), 0.0, epsilon = 1e-12);
        // I0(1) from its power series Σ (1/4)^k / (k!)²
        let mut i0 = 0.0;
        let mut term = 1.0;
        for k in 0..30 {
            if k > 0 {
                term *= 0.25 / (k as f64 * k as f64);
            }
            i0 += term;
        }
        let vm = Field::from_fn(g, |x| x.cos().exp() / (TAU * i0));
        assert_abs_diff_eq!(integrate(&vm), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn convolution_of_constant_with_odd_kernel_vanishes() {
        let g = grid();
        let k = Field::kernel_samples(g, |d| d * (PI - d.abs()));
        let out = circular_convolve(&k, &Field::constant(g, 2.5)).unwrap();
        assert!(norm(&out, Norm::Linf) < 1e-10);
    }

    #[test]
    fn convolution_with_point_mass_translates_kernel() {
        let g = grid();
        let kf = |d: f64| (-d * d).exp() + 0.3 * d;
        let k = Field::kernel_samples(g, kf);
        let m = 0.7;
        let j0 = 37;
        let mut v = vec![0.0; g.n_points()];
        v[j0] = m / g.spacing();
        let out = circular_convolve(&k, &Field::new(g, v).unwrap()).unwrap();
        for i in 0..g.n_points() {
            let expect = m * kf(wrap_angle(g.node(i) - g.node(j0)));
            assert_abs_diff_eq!(out.values()[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_rejects_mismatched_grids() {
        let k = Field::zeros(Grid::new(10).unwrap());
        assert!(circular_convolve(&k, &Field::zeros(Grid::new(12).unwrap())).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let g = grid();
        let f = Field::from_fn(g, |x| x.sin() + 0.1 * x.cos());
        let n = g.n_points();
        for j in [0, 5, n - 1] {
            assert_abs_diff_eq!(
                interpolate(&f, g.node(j)).unwrap(),
                f.values()[j],
                epsilon = 1e-12
            );
        }
        let mid = 0.5 * (g.node(10) + g.node(11));
        assert_abs_diff_eq!(
            interpolate(&f, mid).unwrap(),
            0.5 * (f.values()[10] + f.values()[11]),
            epsilon = 1e-12
        );
        let x = g.node(n - 1) + 0.25 * g.spacing();
        assert_abs_diff_eq!(
            interpolate(&f, x).unwrap(),
            0.75 * f.values()[n - 1] + 0.25 * f.values()[0],
            epsilon = 1e-12
        );
        assert!(interpolate(&f, f64::NAN).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = grid();
        let one = Field::constant(g, 1.0);
        assert_abs_diff_eq!(norm(&one, Norm::L1), TAU, epsilon = 1e-12);
        assert_abs_diff_eq!(norm(&one, Norm::L2), TAU.sqrt(), epsilon = 1e-12);
        assert_eq!(norm(&one, Norm::Linf), 1.0);
        let zero = Field::zeros(g);
        for w in [Norm::L1, Norm::L2, Norm::Linf] {
            assert_eq!(norm(&zero, w), 0.0);
        }
        assert_abs_diff_eq!(
            norm(&Field::from_fn(g, f64::sin), Norm::L2),
            PI.sqrt(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn field_rejects_bad_input() {
        let g = Grid::new(4).unwrap();
        assert!(Field::new(g, vec![0.0; 3]).is_err());
        assert!(Field::new(g, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
    }

    fn smooth_field(g: Grid, coeffs: &[(f64, f64)]) -> Field {
        Field::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let k = (k + 1) as f64;
                    a * (k * x).cos() + b * (k * x).sin()
                })
                .sum::<f64>()
        })
    }

    proptest! {
        #[test]
        fn wrap_lands_in_half_open_interval(x in -1e4f64..1e4) {
            let y = wrap(x).unwrap();
            prop_assert!(y > -PI && y <= PI);
            let k = ((x - y) / TAU).round();
            prop_assert!((x - y - k * TAU).abs() < 1e-9);
        }

        #[test]
        fn transform_matches_direct_sum(
            coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6),
            ell in 0.3f64..5.0,
        ) {
            let g = grid();
            let f = smooth_field(g, &coeffs);
            // odd and periodic, so nodes at distance ±π agree
            let kf = |d: f64| d.sin() * (d.cos() / ell).exp();
            let fast = circular_convolve(&Field::kernel_samples(g, kf), &f).unwrap();
            let slow = circular_convolve_direct(kf, &f);
            prop_assert!(max_err(&fast, &slow) < 1e-10);
        }

        #[test]
        fn integral_of_derivative_vanishes(values in prop::collection::vec(-10.0f64..10.0, 20)) {
            let f = Field::new(Grid::new(20).unwrap(), values).unwrap();
            prop_assert!(integrate(&derivative(&f)).abs() < 1e-12);
        }

        #[test]
        fn antiderivative_of_derivative_recovers_field(
            coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..4),
        ) {
            let g = grid();
            let f = smooth_field(g, &coeffs);
            let back = cumulative_integral(&derivative(&f));
            let expect = &f + (-f.values()[0]);
            prop_assert!(max_err(&back, &expect) < 20.0 * g.spacing().powi(2));
        }

        #[test]
        fn norm_interpolation_inequality(values in prop::collection::vec(-5.0f64..5.0, 30)) {
            let f = Field::new(Grid::new(30).unwrap(), values).unwrap();
            let (l1, l2, li) = (norm(&f, Norm::L1), norm(&f, Norm::L2), norm(&f, Norm::Linf));
            prop_assert!(l1 >= 0.0 && l2 >= 0.0 && li >= 0.0);
            prop_assert!(l2 <= (l1 * li).sqrt() * (1.0 + 1e-12) + 1e-15);
        }
    }
}
