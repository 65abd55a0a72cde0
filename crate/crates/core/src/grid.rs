//! Cell-centered polar grid on the closed unit disk and shared quadrature
//! helpers.
//!
//! The disk M₀ carries a cell-centered (r, φ) lattice: radial centers
//! r_i = (i + ½)Δr stay strictly inside (0, 1), so the coordinate axis r = 0
//! carries no node and the Dirichlet circle r = 1 is honored exactly through
//! half-cell fluxes. Scalar fields are stored row-major with the radial index
//! major, which keeps the stiffness bandwidth at nφ for banded factorization.

use num_complex::Complex64;

/// Scalar types that fields on grids may take.
pub trait Scalar:
    Copy
    + Default
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<f64, Output = Self>
{
}

impl Scalar for f64 {}
impl Scalar for Complex64 {}

/// Cell-centered polar grid over the unit disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarGrid {
    pub nr: usize,
    pub nphi: usize,
    pub dr: f64,
    pub dphi: f64,
}

impl PolarGrid {
    pub fn new(nr: usize, nphi: usize) -> Self {
        assert!(nr >= 2 && nphi >= 4, "polar grid needs nr >= 2, nphi >= 4");
        PolarGrid {
            nr,
            nphi,
            dr: 1.0 / nr as f64,
            dphi: std::f64::consts::TAU / nphi as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.nr * self.nphi
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nphi + j
    }

    pub fn r_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr
    }

    pub fn phi_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dphi
    }

    /// Cartesian coordinates of the cell center (i, j).
    pub fn cell_xy(&self, i: usize, j: usize) -> (f64, f64) {
        let r = self.r_center(i);
        let p = self.phi_center(j);
        (r * p.cos(), r * p.sin())
    }

    /// Cell containing the point, or None outside the disk.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let r = (x * x + y * y).sqrt();
        if r >= 1.0 {
            return None;
        }
        let i = ((r / self.dr) as usize).min(self.nr - 1);
        let phi = y.atan2(x).rem_euclid(std::f64::consts::TAU);
        let j = ((phi / self.dphi) as usize).min(self.nphi - 1);
        Some((i, j))
    }

    /// All cell centers in index order.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.nr {
            for j in 0..self.nphi {
                out.push(self.cell_xy(i, j));
            }
        }
        out
    }

    /// Bilinear interpolation in (r, φ) with periodic φ.
    ///
    /// Radii below the innermost ring interpolate across the disk center
    /// (linear in the signed radius between the cell at φ and the cell at
    /// φ + π); radii beyond the outermost ring clamp to the outer ring.
    pub fn interp<T: Scalar>(&self, field: &[T], x: f64, y: f64) -> T {
        debug_assert_eq!(field.len(), self.len());
        let r = (x * x + y * y).sqrt();
        let phi = y.atan2(x);
        self.interp_polar(field, r, phi)
    }

    pub fn interp_polar<T: Scalar>(&self, field: &[T], r: f64, phi: f64) -> T {
        let ring_value = |ring: usize, phi: f64| -> T {
            let tau = std::f64::consts::TAU;
            let mut u = phi / self.dphi - 0.5;
            u = u.rem_euclid(nphi_f(self));
            let j0 = u.floor() as usize % self.nphi;
            let j1 = (j0 + 1) % self.nphi;
            let t = u - u.floor();
            let _ = tau;
            field[self.idx(ring, j0)] * (1.0 - t) + field[self.idx(ring, j1)] * t
        };
        let u = r / self.dr - 0.5;
        if u <= 0.0 {
            // across-center: endpoints on the innermost ring at φ and φ + π
            let r0 = self.r_center(0);
            let here = ring_value(0, phi);
            let opp = ring_value(0, phi + std::f64::consts::PI);
            let w = (r + r0) / (2.0 * r0);
            return here * w + opp * (1.0 - w);
        }
        if u >= (self.nr - 1) as f64 {
            return ring_value(self.nr - 1, phi);
        }
        let i0 = u.floor() as usize;
        let t = u - i0 as f64;
        let a = ring_value(i0, phi);
        let b = ring_value(i0 + 1, phi);
        a * (1.0 - t) + b * t
    }
}

fn nphi_f(g: &PolarGrid) -> f64 {
    g.nphi as f64
}

/// Integral of samples along a ray.
///
/// The sample times must be uniformly spaced except possibly for a shorter
/// final interval (the bisected exit step). Composite Simpson covers the
/// uniform part; a quadratic through the last three samples covers the tail.
pub fn integrate_ray<T: Scalar>(ts: &[f64], vals: &[T]) -> T {
    assert_eq!(ts.len(), vals.len());
    let w = ray_weights(ts);
    let mut acc = T::default();
    for (v, wi) in vals.iter().zip(&w) {
        acc = acc + *v * *wi;
    }
    acc
}

/// Quadrature weights of `integrate_ray` as an explicit linear functional,
/// so that ∫ f ≈ Σ w_m f(t_m) for any samples on the same time lattice.
pub fn ray_weights(ts: &[f64]) -> Vec<f64> {
    let n = ts.len();
    let mut w = vec![0.0; n];
    if n < 2 {
        return w;
    }
    if n == 2 {
        let h = 0.5 * (ts[1] - ts[0]);
        w[0] = h;
        w[1] = h;
        return w;
    }
    if n == 3 {
        let lw = lagrange3_weights(ts[0], ts[1], ts[2], ts[0], ts[2]);
        w.copy_from_slice(&lw);
        return w;
    }
    // Uniform intervals are 0..n-2; the final interval may be shorter.
    let h = ts[1] - ts[0];
    let mu = n - 2;
    let simpson_end = if mu % 2 == 0 { mu } else { mu - 1 };
    let mut k = 0;
    while k + 2 <= simpson_end {
        w[k] += h / 3.0;
        w[k + 1] += 4.0 * h / 3.0;
        w[k + 2] += h / 3.0;
        k += 2;
    }
    // Remaining piece: from ts[simpson_end] to the exit sample, one parabola
    // through the last three points restricted to that range.
    let lw = lagrange3_weights(ts[n - 3], ts[n - 2], ts[n - 1], ts[simpson_end], ts[n - 1]);
    w[n - 3] += lw[0];
    w[n - 2] += lw[1];
    w[n - 1] += lw[2];
    w
}

/// Weights of the integral over [a, b] of the parabola through nodes
/// x0 < x1 < x2 (Lagrange basis integrals).
fn lagrange3_weights(x0: f64, x1: f64, x2: f64, a: f64, b: f64) -> [f64; 3] {
    let w = |xi: f64, xj: f64, xk: f64| -> f64 {
        // ∫_a^b (x - xj)(x - xk) dx / ((xi - xj)(xi - xk))
        let p = |x: f64| x * x * x / 3.0 - (xj + xk) * x * x / 2.0 + xj * xk * x;
        (p(b) - p(a)) / ((xi - xj) * (xi - xk))
    };
    [w(x0, x1, x2), w(x1, x0, x2), w(x2, x0, x1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_centers_stay_inside_open_disk() {
        let g = PolarGrid::new(8, 16);
        for (x, y) in g.centers() {
            let r = (x * x + y * y).sqrt();
            assert!(r > 0.0 && r < 1.0, "cell center escaped the open disk: r = {r}");
        }
    }

    #[test]
    fn interp_reproduces_smooth_field_to_second_order() {
        let f = |x: f64, y: f64| (1.3 * x - 0.4 * y).sin() + 0.5 * x * y;
        let coarse = PolarGrid::new(24, 96);
        let fine = PolarGrid::new(48, 192);
        let sample = |g: &PolarGrid| -> Vec<f64> {
            g.centers().iter().map(|&(x, y)| f(x, y)).collect()
        };
        let fc = sample(&coarse);
        let ff = sample(&fine);
        let probes = [(0.3, 0.2), (-0.5, 0.1), (0.0, 0.0), (0.01, -0.02), (0.6, -0.6)];
        let mut err_c: f64 = 0.0;
        let mut err_f: f64 = 0.0;
        for &(x, y) in &probes {
            err_c = err_c.max((coarse.interp(&fc, x, y) - f(x, y)).abs());
            err_f = err_f.max((fine.interp(&ff, x, y) - f(x, y)).abs());
        }
        assert!(err_c < 2e-3, "coarse interpolation error too large: {err_c}");
        assert!(err_f < err_c / 2.5, "halving spacing should quarter the error: {err_c} -> {err_f}");
    }

    #[test]
    fn ray_integration_exact_on_quadratics_with_irregular_tail() {
        // f(t) = 3t^2 - t + 2 integrated over [0, 0.93], last step shorter
        let mut ts: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
        ts.push(0.93);
        let vals: Vec<f64> = ts.iter().map(|&t| 3.0 * t * t - t + 2.0).collect();
        let exact = 0.93f64.powi(3) - 0.93 * 0.93 / 2.0 + 2.0 * 0.93;
        let got = integrate_ray(&ts, &vals);
        assert!((got - exact).abs() < 1e-12, "Simpson+tail should be exact on quadratics: {got} vs {exact}");
    }

    #[test]
    fn ray_integration_handles_odd_uniform_counts() {
        let mut ts: Vec<f64> = (0..9).map(|k| 0.1 * k as f64).collect();
        ts.push(0.85);
        let vals: Vec<f64> = ts.iter().map(|&t| t * t).collect();
        let exact = 0.85f64.powi(3) / 3.0;
        let got = integrate_ray(&ts, &vals);
        assert!((got - exact).abs() < 1e-12, "odd interval count mishandled: {got} vs {exact}");
    }
}
