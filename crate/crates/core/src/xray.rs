//! Attenuated geodesic X-ray transform on the disk and its adjoint.
//!
//! For a constant attenuation σ ≥ 0 and an influx node (ω, X) ∈ ∂₊SM₀,
//!
//! ```text
//! I_σ f(ω, X) = ∫₀^𝒯 f(γ_{ω,X}(t)) e^{-σt} dt,
//! ```
//!
//! integrated along unit-speed geodesics. Two independent realizations of
//! the adjoint are kept deliberately:
//!
//! * `adjoint_scatter` integrates over the direction circle at each point,
//!   transporting sinogram values backward along geodesics with the weight
//!   e^{-σ 𝒯(x, -X)}; this mirrors the analytic formula.
//! * `NormalMatrix` assembles N_σ = B^{1/2} Gᵀ D G B^{1/2} from the forward
//!   quadrature alone (G maps hat coefficients to the sinogram, D holds the
//!   Santaló weights w μ, B the inverse hat masses), which is symmetric
//!   positive semidefinite by construction.
//!
//! The two routes are reconciled through the adjoint identity
//! ⟨I_σ f, h⟩_{L²(∂₊SM₀, μ)} = ⟨f, I*_σ h⟩_{L²(M₀)}.

use crate::geometry::{BoundaryFan, GeoError, SimpleSurface};
use crate::grid::{ray_weights, PolarGrid, Scalar};
use num_complex::Complex64;

/// One traced influx ray: uniform RK sample times plus the bisected exit
/// sample, positions, and the frozen quadrature weights of `integrate_ray`.
#[derive(Clone, Debug)]
pub struct TracedRay {
    pub ts: Vec<f64>,
    pub pos: Vec<[f64; 2]>,
    pub exit_time: f64,
    pub quad_w: Vec<f64>,
}

/// All rays of a boundary fan traced once; every σ reuses the same geometry,
/// only the attenuation factors change.
#[derive(Clone, Debug)]
pub struct RayTable {
    pub fan: BoundaryFan,
    pub rays: Vec<TracedRay>,
    pub step: f64,
}

impl RayTable {
    pub fn trace(surface: &SimpleSurface, fan: BoundaryFan, step: f64) -> Result<Self, GeoError> {
        let mut rays = Vec::with_capacity(fan.nodes.len());
        for node in &fan.nodes {
            let path = surface.trace_from_boundary(node.omega, node.alpha, step)?;
            let ts: Vec<f64> = path.samples.iter().map(|s| s.t).collect();
            let pos: Vec<[f64; 2]> = path.samples.iter().map(|s| s.pos).collect();
            let quad_w = ray_weights(&ts);
            rays.push(TracedRay { ts, pos, exit_time: path.exit_time, quad_w });
        }
        Ok(RayTable { fan, rays, step })
    }

    /// I_σ f over the whole fan for a pointwise-evaluable integrand.
    pub fn apply<T: Scalar>(&self, f: impl Fn(f64, f64) -> T, sigma: f64) -> Vec<T> {
        self.rays
            .iter()
            .map(|ray| {
                let mut acc = T::default();
                for ((p, t), w) in ray.pos.iter().zip(&ray.ts).zip(&ray.quad_w) {
                    acc = acc + f(p[0], p[1]) * (w * (-sigma * t).exp());
                }
                acc
            })
            .collect()
    }

    /// I_σ f for f sampled on a polar grid (bilinear interpolation).
    pub fn apply_grid<T: Scalar>(&self, grid: &PolarGrid, values: &[T], sigma: f64) -> Vec<T> {
        self.apply(|x, y| grid.interp(values, x, y), sigma)
    }

    /// L²(∂₊SM₀, μ) norm of sinogram values: √(Σ w μ |h|²).
    pub fn sinogram_norm(&self, values: &[Complex64]) -> f64 {
        self.fan
            .nodes
            .iter()
            .zip(values)
            .map(|(n, v)| n.weight * n.mu * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// ⟨g, h⟩_{L²(∂₊SM₀, μ)}.
    pub fn sinogram_inner(&self, g: &[f64], h: &[f64]) -> f64 {
        self.fan
            .nodes
            .iter()
            .zip(g.iter().zip(h))
            .map(|(n, (a, b))| n.weight * n.mu * a * b)
            .sum()
    }

    /// Bilinear interpolation of sinogram values at (ω, α); ω is periodic,
    /// α outside the fan range returns None (the datum does not exist).
    pub fn interp_sinogram(&self, values: &[f64], omega: f64, alpha: f64) -> Option<f64> {
        let fan = &self.fan;
        if alpha.abs() >= fan.alpha_max {
            return None;
        }
        let dw = std::f64::consts::TAU / fan.n_omega as f64;
        let da = 2.0 * fan.alpha_max / fan.n_dir as f64;
        let fw = (omega.rem_euclid(std::f64::consts::TAU)) / dw - 0.5;
        let fa = (alpha + fan.alpha_max) / da - 0.5;
        let i0 = fw.floor();
        let j0f = fa.floor().clamp(0.0, fan.n_dir as f64 - 2.0);
        let j0 = j0f as usize;
        let tw = fw - i0;
        let ta = (fa - j0f).clamp(0.0, 1.0);
        let iw0 = ((i0 as i64).rem_euclid(fan.n_omega as i64)) as usize;
        let iw1 = (iw0 + 1) % fan.n_omega;
        let v = |i: usize, j: usize| values[fan.node_index(i, j)];
        Some(
            v(iw0, j0) * (1.0 - tw) * (1.0 - ta)
                + v(iw1, j0) * tw * (1.0 - ta)
                + v(iw0, j0 + 1) * (1.0 - tw) * ta
                + v(iw1, j0 + 1) * tw * ta,
        )
    }
}

/// I*_σ h at a point by direction-circle quadrature: trace backward along
/// -X to the entry point, evaluate h there, weight by e^{-σ 𝒯(x, -X)}.
/// Directions whose entry angle falls outside the fan's α-range contribute
/// nothing, matching the fan-restricted forward transform.
pub fn adjoint_scatter(
    surface: &SimpleSurface,
    table: &RayTable,
    h: &[f64],
    x: f64,
    y: f64,
    sigma: f64,
    n_dir: usize,
    step: f64,
) -> Result<f64, GeoError> {
    let el = (-surface.lambda(x, y)).exp();
    let dbeta = std::f64::consts::TAU / n_dir as f64;
    let mut acc = 0.0;
    for j in 0..n_dir {
        let beta = (j as f64 + 0.5) * dbeta;
        // flow backward: trace along -X and read the geodesic at its exit
        let back = surface.trace([x, y], [-el * beta.cos(), -el * beta.sin()], step)?;
        let entry = back.exit_point();
        let vexit = back.exit_velocity();
        let omega = entry[1].atan2(entry[0]);
        // forward direction at entry is -v_exit; α is its angle from the
        // inward normal, signed by the tangent component
        let (c, s) = (omega.cos(), omega.sin());
        let inward = [-c, -s];
        let tangent = [-s, c];
        let vn = (vexit[0] * vexit[0] + vexit[1] * vexit[1]).sqrt();
        let fx = -vexit[0] / vn;
        let fy = -vexit[1] / vn;
        let alpha = (fx * tangent[0] + fy * tangent[1]).atan2(fx * inward[0] + fy * inward[1]);
        if let Some(val) = table.interp_sinogram(h, omega, alpha) {
            acc += val * (-sigma * back.exit_time).exp() * dbeta;
        }
    }
    Ok(acc)
}

/// Relative defect of ⟨I_σ f, h⟩_{μ} = ⟨f, I*_σ h⟩ for given f (pointwise
/// evaluable) and sinogram h, with both sides assembled by independent
/// quadratures.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_identity_defect(
    surface: &SimpleSurface,
    table: &RayTable,
    f: impl Fn(f64, f64) -> f64,
    h: &[f64],
    sigma: f64,
    grid: &PolarGrid,
    n_dir: usize,
    step: f64,
) -> Result<f64, GeoError> {
    let i_f = table.apply(&f, sigma);
    let lhs = table.sinogram_inner(&i_f, h);
    let mut rhs = 0.0;
    for i in 0..grid.nr {
        for j in 0..grid.nphi {
            let (x, y) = grid.cell_xy(i, j);
            let fv = f(x, y);
            if fv == 0.0 {
                continue;
            }
            let adj = adjoint_scatter(surface, table, h, x, y, sigma, n_dir, step)?;
            let mass = surface.e2l(x, y) * grid.r_center(i) * grid.dr * grid.dphi;
            rhs += mass * fv * adj;
        }
    }
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    Ok((lhs - rhs).abs() / scale)
}

// ---------------------------------------------------------------------------
// Hat-function support lattice and the Gram normal matrix
// ---------------------------------------------------------------------------

/// Uniform Cartesian lattice of tensor hat functions covering the closed
/// ball r ≤ radius, the reconstruction space for the normal operator.
#[derive(Clone, Debug)]
pub struct SupportLattice {
    pub h: f64,
    pub radius: f64,
    /// Lattice coordinates of the retained nodes.
    pub nodes: Vec<(i32, i32)>,
    index: std::collections::HashMap<(i32, i32), usize>,
}

impl SupportLattice {
    pub fn new(radius: f64, h: f64) -> Self {
        let m = (radius / h).ceil() as i32 + 1;
        let mut nodes = Vec::new();
        let mut index = std::collections::HashMap::new();
        for i in -m..=m {
            for j in -m..=m {
                let (x, y) = (i as f64 * h, j as f64 * h);
                // keep nodes whose hat support can intersect the ball
                if (x * x + y * y).sqrt() <= radius + h {
                    index.insert((i, j), nodes.len());
                    nodes.push((i, j));
                }
            }
        }
        SupportLattice { h, radius, nodes, index }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_xy(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.nodes[k];
        (i as f64 * self.h, j as f64 * self.h)
    }

    /// Up to four (node, weight) pairs of the bilinear hats at (x, y).
    pub fn stencil(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let fx = x / self.h;
        let fy = y / self.h;
        let i0 = fx.floor() as i32;
        let j0 = fy.floor() as i32;
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let mut out = [(usize::MAX, 0.0); 4];
        let corners = [
            (i0, j0, (1.0 - tx) * (1.0 - ty)),
            (i0 + 1, j0, tx * (1.0 - ty)),
            (i0, j0 + 1, (1.0 - tx) * ty),
            (i0 + 1, j0 + 1, tx * ty),
        ];
        for (k, (i, j, w)) in corners.into_iter().enumerate() {
            if let Some(&idx) = self.index.get(&(i, j)) {
                out[k] = (idx, w);
            }
        }
        out
    }

    /// Evaluate a coefficient vector at a point.
    pub fn eval(&self, coeffs: &[f64], x: f64, y: f64) -> f64 {
        self.stencil(x, y)
            .iter()
            .filter(|(i, _)| *i != usize::MAX)
            .map(|&(i, w)| coeffs[i] * w)
            .sum()
    }

    /// Lumped g₀-masses of the hats: V_i = e^{2λ(x_i)} h².
    pub fn masses(&self, surface: &SimpleSurface) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (x, y) = self.node_xy(k);
                surface.e2l(x, y) * self.h * self.h
            })
            .collect()
    }
}

/// Forward map G from hat coefficients to the fan sinogram at a fixed σ,
/// stored dense (rays × nodes).
pub struct ForwardMatrix {
    pub n_rays: usize,
    pub n_nodes: usize,
    pub entries: Vec<f64>,
}

impl ForwardMatrix {
    pub fn assemble(table: &RayTable, lattice: &SupportLattice, sigma: f64) -> Self {
        let n_rays = table.rays.len();
        let n_nodes = lattice.len();
        let mut entries = vec![0.0; n_rays * n_nodes];
        for (r, ray) in table.rays.iter().enumerate() {
            let row = &mut entries[r * n_nodes..(r + 1) * n_nodes];
            for ((p, t), w) in ray.pos.iter().zip(&ray.ts).zip(&ray.quad_w) {
                let att = w * (-sigma * t).exp();
                for (idx, hw) in lattice.stencil(p[0], p[1]) {
                    if idx != usize::MAX {
                        row[idx] += att * hw;
                    }
                }
            }
        }
        ForwardMatrix { n_rays, n_nodes, entries }
    }

    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rays];
        for r in 0..self.n_rays {
            let row = &self.entries[r * self.n_nodes..(r + 1) * self.n_nodes];
            out[r] = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        }
        out
    }
}

/// Normal operator N_σ = I*_σ I_σ restricted to the hat space, assembled in
/// mass-normalized coordinates so the matrix is exactly symmetric:
/// N = B^{1/2} Gᵀ D G B^{1/2} with D = diag(w μ) and B = diag(1/V_i).
pub struct NormalMatrix {
    pub n: usize,
    pub data: Vec<f64>,
    pub masses: Vec<f64>,
}

impl NormalMatrix {
    pub fn assemble(table: &RayTable, lattice: &SupportLattice, surface: &SimpleSurface, sigma: f64) -> Self {
        let g = ForwardMatrix::assemble(table, lattice, sigma);
        let n = g.n_nodes;
        let masses = lattice.masses(surface);
        let mut data = vec![0.0; n * n];
        for (r, node) in table.fan.nodes.iter().enumerate() {
            let d = node.weight * node.mu;
            let row = &g.entries[r * n..(r + 1) * n];
            // upper triangle only; mirrored below for exact symmetry
            for i in 0..n {
                let gi = row[i];
                if gi == 0.0 {
                    continue;
                }
                let di = d * gi;
                for j in i..n {
                    data[i * n + j] += di * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                data[i * n + j] = data[j * n + i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] /= (masses[i] * masses[j]).sqrt();
            }
        }
        NormalMatrix { n, data, masses }
    }

    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.data[i * self.n + j] - self.data[j * self.n + i]).abs());
            }
        }
        worst
    }

    /// Apply to nodal values f(x_i): out_i = (N f)(x_i) in function space
    /// (undoing the mass normalization on both sides).
    pub fn apply_nodal(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for j in 0..self.n {
                acc += self.data[i * self.n + j] * f[j] * self.masses[j].sqrt();
            }
            out[i] = acc / self.masses[i].sqrt();
        }
        out
    }

    /// Eigenvalues of the mass-normalized matrix (ascending); these are the
    /// Rayleigh quotients of N_σ against the L²(M₀) lumped inner product.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data);
        let mut e: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().cloned().collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        e
    }

    pub fn smallest_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Tikhonov-regularized solve (N + εI) x = y in mass coordinates; maps a
    /// measured adjoint image back to hat-space nodal values.
    pub fn tikhonov_solve(&self, rhs_nodal: &[f64], eps: f64) -> Vec<f64> {
        let mut m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data);
        for i in 0..self.n {
            m[(i, i)] += eps;
        }
        let b = nalgebra::DVector::from_iterator(
            self.n,
            rhs_nodal.iter().enumerate().map(|(i, v)| v * self.masses[i].sqrt()),
        );
        let sol = m.cholesky().expect("Tikhonov matrix must be positive definite").solve(&b);
        (0..self.n).map(|i| sol[i] / self.masses[i].sqrt()).collect()
    }

    /// Gram-route adjoint image I*_σ I_σ f as nodal values, for f given by
    /// hat coefficients (used to cross-check the scatter adjoint).
    pub fn normal_image(
        table: &RayTable,
        g: &ForwardMatrix,
        lattice: &SupportLattice,
        surface: &SimpleSurface,
        coeffs: &[f64],
    ) -> Vec<f64> {
        let sino = g.apply(coeffs);
        let masses = lattice.masses(surface);
        let mut out = vec![0.0; g.n_nodes];
        for (r, node) in table.fan.nodes.iter().enumerate() {
            let d = node.weight * node.mu * sino[r];
            let row = &g.entries[r * g.n_nodes..(r + 1) * g.n_nodes];
            for (o, gi) in out.iter_mut().zip(row) {
                *o += d * gi;
            }
        }
        for (o, m) in out.iter_mut().zip(&masses) {
            *o /= m;
        }
        out
    }
}

/// Smallest Rayleigh quotient of N_σ over a grid of attenuations: the
/// empirical injectivity profile σ ↦ μ_min(N_σ).
pub fn injectivity_profile(
    table: &RayTable,
    lattice: &SupportLattice,
    surface: &SimpleSurface,
    sigmas: &[f64],
) -> Vec<(f64, f64)> {
    sigmas
        .iter()
        .map(|&s| {
            let n = NormalMatrix::assemble(table, lattice, surface, s);
            (s, n.smallest_eigenvalue())
        })
        .collect()
}
