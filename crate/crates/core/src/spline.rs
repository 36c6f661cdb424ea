//! Linear B-spline functions on a fixed grid over `[-4, 4]`.
//!
//! A function with coefficients `a[0..G]` is
//! `phi(x) = sum_k a[k] * tri(x + 4 - k t)`, `t = 8 / (G - 1)`, which is the
//! piecewise-linear interpolant of the `a[k]` at the grid points. Inputs
//! outside the grid are clamped to the nearest endpoint, so `phi` is constant
//! there and has zero input gradient.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

pub const GRID_MIN: f64 = -4.0;
pub const GRID_MAX: f64 = 4.0;

/// Triangle of unit height supported on `(-t, t)`.
pub fn tri(x: f64, t: f64) -> f64 {
    (1.0 - x.abs() / t).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    g: usize,
    t: f64,
}

/// Where an input falls on the grid: segment `index` between points
/// `index` and `index + 1`, fractional position `frac` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub frac: f64,
    /// False when the input was clamped.
    pub inside: bool,
}

impl SplineGrid {
    pub fn new(g: usize) -> Result<Self> {
        if g < 2 {
            return Err(Error::config(format!("a spline grid needs at least 2 points, got {g}")));
        }
        Ok(Self {
            g,
            t: (GRID_MAX - GRID_MIN) / (g - 1) as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.g
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.t
    }

    pub fn point(&self, k: usize) -> f64 {
        if k + 1 == self.g {
            GRID_MAX
        } else {
            GRID_MIN + k as f64 * self.t
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.g).map(|k| self.point(k)).collect()
    }

    pub fn segments(&self) -> usize {
        self.g - 1
    }

    /// Locate `x`. Grid points belong to the segment on their right (the
    /// last point belongs to the last segment).
    #[inline]
    pub fn locate(&self, x: f64) -> Segment {
        let last = self.g - 2;
        if (GRID_MIN..=GRID_MAX).contains(&x) {
            let index = (((x - GRID_MIN) / self.t).floor() as usize).min(last);
            let frac = ((x - self.point(index)) / self.t).clamp(0.0, 1.0);
            Segment {
                index,
                frac,
                inside: true,
            }
        } else if x > GRID_MAX {
            Segment {
                index: last,
                frac: 1.0,
                inside: false,
            }
        } else {
            // below the grid, and NaN
            Segment {
                index: 0,
                frac: 0.0,
                inside: false,
            }
        }
    }
}

/// Interpolation of `coeffs` at a located input.
#[inline]
pub(crate) fn interpolate(coeffs: &[f64], seg: Segment) -> f64 {
    (1.0 - seg.frac) * coeffs[seg.index] + seg.frac * coeffs[seg.index + 1]
}

/// One trainable 1D function.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    pub grid: SplineGrid,
    pub coeffs: Vec<f64>,
}

impl SplineFunction {
    pub fn new(grid: SplineGrid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(Error::contract(format!(
                "{} coefficients for a {}-point grid",
                coeffs.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// `a[k] = points[k]`, i.e. `phi(x) = clamp(x, -4, 4)`.
    pub fn identity(grid: SplineGrid) -> Self {
        Self {
            coeffs: grid.points(),
            grid,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        interpolate(&self.coeffs, self.grid.locate(x))
    }

    /// Literal basis expansion `sum_k a[k] tri(x - points[k])` at the
    /// clamped input.
    pub fn eval_basis_sum(&self, x: f64) -> f64 {
        let x = clamp_to_grid(x);
        let t = self.grid.spacing();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a * tri(x - self.grid.point(k), t))
            .sum()
    }

    /// Gradients of `upstream * phi(x)` w.r.t. the coefficients and `x`.
    pub fn backward(&self, x: f64, upstream: f64) -> (Vec<f64>, f64) {
        let mut grad_a = vec![0.0; self.coeffs.len()];
        let grad_x = accumulate_backward(&self.coeffs, self.grid, x, upstream, &mut grad_a);
        (grad_a, grad_x)
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        let seg = self.grid.locate(x);
        if seg.inside {
            (self.coeffs[seg.index + 1] - self.coeffs[seg.index]) / self.grid.spacing()
        } else {
            0.0
        }
    }

    pub fn max_abs_slope(&self) -> f64 {
        self.coeffs
            .windows(2)
            .map(|w| ((w[1] - w[0]) / self.grid.spacing()).abs())
            .fold(0.0, f64::max)
    }
}

fn clamp_to_grid(x: f64) -> f64 {
    if x.is_nan() {
        GRID_MIN
    } else {
        x.clamp(GRID_MIN, GRID_MAX)
    }
}

/// Adds `upstream * d phi / d a` into `grad_a`; returns `upstream * d phi / d x`.
#[inline]
pub(crate) fn accumulate_backward(
    coeffs: &[f64],
    grid: SplineGrid,
    x: f64,
    upstream: f64,
    grad_a: &mut [f64],
) -> f64 {
    let seg = grid.locate(x);
    accumulate_backward_located(coeffs, grid, seg, upstream, grad_a)
}

#[inline]
pub(crate) fn accumulate_backward_located(
    coeffs: &[f64],
    grid: SplineGrid,
    seg: Segment,
    upstream: f64,
    grad_a: &mut [f64],
) -> f64 {
    grad_a[seg.index] += upstream * (1.0 - seg.frac);
    grad_a[seg.index + 1] += upstream * seg.frac;
    if seg.inside {
        upstream * (coeffs[seg.index + 1] - coeffs[seg.index]) / grid.spacing()
    } else {
        0.0
    }
}

/// Dense KAN layer `y[i] = sum_j phi[i][j](x[j])` with a pruning mask.
///
/// Coefficients are stored row-major as `[n_out][n_in][G]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayerDense {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    pub coeffs: Vec<f64>,
    pub mask: Vec<bool>,
}

impl KanLayerDense {
    pub fn zeros(n_in: usize, n_out: usize, grid: SplineGrid) -> Self {
        Self {
            n_in,
            n_out,
            grid,
            coeffs: vec![0.0; n_in * n_out * grid.len()],
            mask: vec![true; n_in * n_out],
        }
    }

    /// Every function set to the identity ramp.
    pub fn identity(n_in: usize, n_out: usize, grid: SplineGrid) -> Self {
        let mut layer = Self::zeros(n_in, n_out, grid);
        let points = grid.points();
        for f in layer.coeffs.chunks_exact_mut(grid.len()) {
            f.copy_from_slice(&points);
        }
        layer
    }

    /// Near-linear initialization: `a[k] = points[k] * w + eta` with
    /// `w ~ U(-1/sqrt(n_in), 1/sqrt(n_in))` per function and
    /// `eta ~ N(0, 0.05)` per coefficient.
    pub fn random<R: Rng + ?Sized>(n_in: usize, n_out: usize, grid: SplineGrid, rng: &mut R) -> Self {
        let mut layer = Self::zeros(n_in, n_out, grid);
        init_near_linear(&mut layer.coeffs, n_in, grid, rng);
        layer
    }

    pub fn functions(&self) -> usize {
        self.n_in * self.n_out
    }

    pub fn function_coeffs(&self, out: usize, inp: usize) -> &[f64] {
        let g = self.grid.len();
        let f = out * self.n_in + inp;
        &self.coeffs[f * g..(f + 1) * g]
    }

    pub fn function(&self, out: usize, inp: usize) -> SplineFunction {
        SplineFunction {
            grid: self.grid,
            coeffs: self.function_coeffs(out, inp).to_vec(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_in, "KAN layer input has wrong dimension");
        let g = self.grid.len();
        let segs: Vec<Segment> = x.iter().map(|&v| self.grid.locate(v)).collect();
        (0..self.n_out)
            .map(|i| {
                let mut acc = 0.0;
                for (j, seg) in segs.iter().enumerate() {
                    let f = i * self.n_in + j;
                    if self.mask[f] {
                        acc += interpolate(&self.coeffs[f * g..(f + 1) * g], *seg);
                    }
                }
                acc
            })
            .collect()
    }

    /// Returns `(grad_coeffs, grad_x)`; masked functions get zero gradient.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(x.len(), self.n_in, "KAN layer input has wrong dimension");
        assert_eq!(upstream.len(), self.n_out, "KAN layer gradient has wrong dimension");
        let g = self.grid.len();
        let mut grad_a = vec![0.0; self.coeffs.len()];
        let mut grad_x = vec![0.0; self.n_in];
        for (i, &up) in upstream.iter().enumerate() {
            for (j, &xj) in x.iter().enumerate() {
                let f = i * self.n_in + j;
                if !self.mask[f] {
                    continue;
                }
                let range = f * g..(f + 1) * g;
                grad_x[j] += accumulate_backward(
                    &self.coeffs[range.clone()],
                    self.grid,
                    xj,
                    up,
                    &mut grad_a[range],
                );
            }
        }
        (grad_a, grad_x)
    }

    pub fn compile_lut(&self) -> LutCompiled {
        LutCompiled::from_coeffs(self.n_in, self.n_out, self.grid, &self.coeffs, &self.mask)
    }
}

pub(crate) fn init_near_linear<R: Rng + ?Sized>(
    coeffs: &mut [f64],
    fan_in: usize,
    grid: SplineGrid,
    rng: &mut R,
) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let points = grid.points();
    for f in coeffs.chunks_exact_mut(grid.len()) {
        let w = rng.random_range(-bound..=bound);
        for (a, p) in f.iter_mut().zip(&points) {
            *a = p * w + noise.sample(rng);
        }
    }
}

/// Slope/offset table: `G - 1` entries per function, evaluated as
/// `slope[s] * x + offset[s]` with `s = floor((x + 4) / t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LutCompiled {
    pub n_in: usize,
    pub n_out: usize,
    pub grid: SplineGrid,
    pub slopes: Vec<f64>,
    pub offsets: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LutCompiled {
    pub fn from_coeffs(
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        coeffs: &[f64],
        mask: &[bool],
    ) -> Self {
        let g = grid.len();
        let t = grid.spacing();
        let mut slopes = Vec::with_capacity(n_in * n_out * (g - 1));
        let mut offsets = Vec::with_capacity(slopes.capacity());
        for f in coeffs.chunks_exact(g) {
            for k in 0..g - 1 {
                let s = (f[k + 1] - f[k]) / t;
                slopes.push(s);
                offsets.push((-s).mul_add(grid.point(k), f[k]));
            }
        }
        Self {
            n_in,
            n_out,
            grid,
            slopes,
            offsets,
            mask: mask.to_vec(),
        }
    }

    pub fn from_function(f: &SplineFunction) -> Self {
        Self::from_coeffs(1, 1, f.grid, &f.coeffs, &[true])
    }

    pub fn entries_per_function(&self) -> usize {
        self.grid.segments()
    }

    #[inline]
    fn segment(&self, x: f64) -> (usize, f64) {
        let x = clamp_to_grid(x);
        let s = (((x - GRID_MIN) / self.grid.spacing()).floor() as usize).min(self.grid.segments() - 1);
        (s, x)
    }

    /// Evaluate function `f` (row-major index `out * n_in + inp`).
    #[inline]
    pub fn eval_function(&self, f: usize, x: f64) -> f64 {
        let (s, x) = self.segment(x);
        let e = f * self.entries_per_function() + s;
        self.slopes[e].mul_add(x, self.offsets[e])
    }

    /// Magnitude scale of the quantities combined for function `f` at `x`:
    /// both table terms and the segment's endpoint coefficients. Rounding
    /// error of either evaluation path is bounded relative to this.
    pub fn term_scale(&self, f: usize, x: f64) -> f64 {
        let (s, x) = self.segment(x);
        let e = f * self.entries_per_function() + s;
        let (slope, offset) = (self.slopes[e], self.offsets[e]);
        let left = slope.mul_add(self.grid.point(s), offset);
        let right = slope.mul_add(self.grid.point(s + 1), offset);
        [slope * x, offset, left, right].iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_in, "LUT input has wrong dimension");
        (0..self.n_out)
            .map(|i| {
                x.iter()
                    .enumerate()
                    .filter(|(j, _)| self.mask[i * self.n_in + j])
                    .map(|(j, &xj)| self.eval_function(i * self.n_in + j, xj))
                    .sum()
            })
            .collect()
    }
}

/// Unit in the last place of `x`.
pub fn ulp(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let next = f64::from_bits(x.to_bits() + 1);
    next - x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn tri_values() {
        let t = 0.5;
        assert_eq!(tri(0.0, t), 1.0);
        assert_eq!(tri(t, t), 0.0);
        assert_eq!(tri(-t, t), 0.0);
        assert_eq!(tri(t / 2.0, t), 0.5);
    }

    #[test]
    fn grid_spacing() {
        assert_eq!(SplineGrid::new(5).unwrap().spacing(), 2.0);
        assert_eq!(SplineGrid::new(9).unwrap().spacing(), 1.0);
        let g = SplineGrid::new(17).unwrap();
        assert_eq!(g.point(0), -4.0);
        assert_eq!(g.point(16), 4.0);
        assert!(SplineGrid::new(1).is_err());
    }

    #[test]
    fn interpolates_grid_values() {
        let grid = SplineGrid::new(5).unwrap();
        let f = SplineFunction::new(grid, vec![1.0, -2.0, 0.5, 3.0, 7.0]).unwrap();
        for k in 0..5 {
            assert_eq!(f.eval(grid.point(k)), f.coeffs[k]);
            assert_eq!(f.eval_basis_sum(grid.point(k)), f.coeffs[k]);
        }
        assert_eq!(f.eval(-3.0), -0.5);
    }

    #[test]
    fn clamps_outside_grid() {
        let grid = SplineGrid::new(5).unwrap();
        let f = SplineFunction::new(grid, vec![1.0, -2.0, 0.5, 3.0, 7.0]).unwrap();
        assert_eq!(f.eval(-10.0), 1.0);
        assert_eq!(f.eval(10.0), 7.0);
        let (ga, gx) = f.backward(12.0, 2.0);
        assert_eq!(gx, 0.0);
        assert_eq!(ga, vec![0.0, 0.0, 0.0, 0.0, 2.0]);
        let (ga, gx) = f.backward(-5.0, 2.0);
        assert_eq!(gx, 0.0);
        assert_eq!(ga, vec![2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gradient_at_interior_grid_point() {
        let grid = SplineGrid::new(9).unwrap();
        let f = SplineFunction::new(grid, (0..9).map(|k| (k * k) as f64).collect()).unwrap();
        let (ga, gx) = f.backward(grid.point(3), 1.5);
        for (k, g) in ga.iter().enumerate() {
            assert_eq!(*g, if k == 3 { 1.5 } else { 0.0 });
        }
        // right-segment slope: (16 - 9) / 1
        assert_eq!(gx, 1.5 * 7.0);
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut rng = seed::rng(17);
        let grid = SplineGrid::new(9).unwrap();
        let f = SplineFunction::new(grid, (0..9).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let h = 1e-4;
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-3.99..3.99);
            let seg = grid.locate(x);
            let dist = seg.frac.min(1.0 - seg.frac) * grid.spacing();
            if dist < 2.0 * h {
                continue;
            }
            let fd = (f.eval(x + h) - f.eval(x - h)) / (2.0 * h);
            let (_, gx) = f.backward(x, 1.0);
            assert!((gx - fd).abs() <= 1e-5 * fd.abs().max(1e-8), "{gx} vs {fd}");
        }
    }

    #[test]
    fn dense_identity_is_clamp() {
        let grid = SplineGrid::new(17).unwrap();
        let layer = KanLayerDense::identity(1, 1, grid);
        for x in [-7.0, -4.0, -1.25, 0.0, 0.3, 3.9, 4.0, 8.0] {
            let y = layer.forward(&[x])[0];
            assert!((y - x.clamp(-4.0, 4.0)).abs() <= 4.0 * ulp(x));
        }
    }

    #[test]
    fn dense_zero_layer_outputs_zero() {
        let layer = KanLayerDense::zeros(3, 2, SplineGrid::new(5).unwrap());
        assert_eq!(layer.forward(&[0.2, -3.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn dense_two_by_two_by_hand() {
        let grid = SplineGrid::new(5).unwrap(); // points -4 -2 0 2 4
        let mut layer = KanLayerDense::zeros(2, 2, grid);
        layer.coeffs = vec![
            0.0, 1.0, 2.0, 3.0, 4.0, // phi00
            1.0, 1.0, 1.0, 1.0, 1.0, // phi01
            4.0, 0.0, 4.0, 0.0, 4.0, // phi10
            -1.0, -2.0, -3.0, -4.0, -5.0, // phi11
        ];
        let y = layer.forward(&[1.0, -3.0]);
        // phi00(1) = 2.5, phi01(-3) = 1, phi10(1) = 2, phi11(-3) = -1.5
        assert_eq!(y, vec![3.5, 0.5]);
    }

    #[test]
    fn masked_function_drops_its_term() {
        let mut rng = seed::rng(2);
        let grid = SplineGrid::new(9).unwrap();
        let mut layer = KanLayerDense::random(3, 2, grid, &mut rng);
        let x = [0.7, -1.3, 2.2];
        let full = layer.forward(&x);
        let removed = layer.function(1, 2).eval(x[2]);
        layer.mask[3 + 2] = false;
        let pruned = layer.forward(&x);
        assert_eq!(pruned[0], full[0]);
        assert!((full[1] - pruned[1] - removed).abs() < 1e-15);
        let (ga, _) = layer.backward(&x, &[1.0, 1.0]);
        let f = 3 + 2;
        assert!(ga[f * 9..(f + 1) * 9].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn lut_has_g_minus_one_entries() {
        let grid = SplineGrid::new(5).unwrap();
        let f = SplineFunction::new(grid, vec![0.0, 1.0, 0.0, 2.0, 2.0]).unwrap();
        let lut = LutCompiled::from_function(&f);
        assert_eq!(lut.slopes.len(), 4);
        assert_eq!(lut.offsets.len(), 4);
    }

    #[test]
    fn lut_constant_function() {
        let grid = SplineGrid::new(9).unwrap();
        let f = SplineFunction::new(grid, vec![2.5; 9]).unwrap();
        let lut = LutCompiled::from_function(&f);
        assert!(lut.slopes.iter().all(|&s| s == 0.0));
        assert!(lut.offsets.iter().all(|&o| o == 2.5));
    }

    #[test]
    fn continuity_across_segment_boundaries() {
        let mut rng = seed::rng(4);
        let grid = SplineGrid::new(17).unwrap();
        let f = SplineFunction::new(grid, (0..17).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let bound = f.max_abs_slope();
        let eps = 1e-3;
        for k in 1..16 {
            let p = grid.point(k);
            let d = (f.eval(p + eps) - f.eval(p - eps)).abs();
            assert!(d <= bound * 2.0 * eps * (1.0 + 1e-9));
        }
    }
}
