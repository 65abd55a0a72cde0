//! Complex geometrical optics on the cylinder ℝ_s × M₀.
//!
//! Solutions of (Δ_g − q)u = 0 on ℝ × M₀, g = ds² + g₀, of the form
//!
//!   u = e^{−τ(s+iψ)} (a + r),   a = e^{iσs} e^{−σψ} J^{−1/2} β(θ),
//!
//! where ψ(x) = d_{g₀}(ω, x) is the distance from a chart center ω placed
//! slightly outside the disk, (ψ, θ) are normal coordinates at ω with Jacobian
//! J, β ∈ C^∞ is a bump in the chart angle with support inside (0, π), and
//! σ ≥ 0 is the axial frequency of the amplitude. The factor e^{−σ(ψ−is)} is
//! holomorphic in s + iψ, so (∂_s + i∂_ψ) kills it exactly.
//!
//! Writing v = e^{τs} u and w = v − e^{iσs} e^{−iτψ} G β with the transversal
//! profile G = e^{−σψ} J^{−1/2}, the remainder solves
//!
//!   (Δ_g + τ² − 2τ∂_s) w = f + q w,
//!   f = e^{iσs} e^{−iτψ} G (qβ − B_β),
//!   B_β = β B + J^{−2} (β″ − 2 u_θ β′),   u = ln J,
//!
//! where B = K/2 + u_ρ²/4 + J^{−2}(¾u_θ² − ½u_θθ) is the amplitude defect,
//! (Δ_{g₀} − σ²)G = B·G in chart coordinates. The eikonal and transport
//! identities cancel every power of τ analytically, so the assembled
//! right-hand side depends on τ only through the phase e^{−iτψ} and never
//! through numerical cancellation of τ² terms. Negative τ (the sign-flipped
//! partner solution) runs through the same equations unchanged.
//!
//! The solve is spectral: Fourier modes e^{iξs} on a periodic box
//! [−S_pad, S_pad] (potentials must vanish for |s| > S = S_pad/4) tensored
//! with Dirichlet eigenmodes of Δ_{g₀}, where the operator is the diagonal
//! symbol D(ξ, k) = τ² − λ_k − ξ² − 2iτξ. On the carrier line ξ = σ the
//! symbol obeys |D| ≥ 2|τ|σ, which is the source of the τ^{−1} remainder
//! decay; q couples modes and is handled by a fixed-point iteration. The
//! same machinery solves the conjugated equation for an arbitrary given
//! right-hand side (`carleman_solve`), which is its own decay laboratory.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::geometry::{
    closest_approach, ChartCenter, ChartFields, GeoError, GeodesicPath, SimpleSurface,
};
use crate::grid::PolarGrid;
use crate::linalg::LinalgError;
use crate::spectral::{disk_stiffness, DiskDirichlet};

#[derive(Debug, Error)]
pub enum CgoError {
    #[error(transparent)]
    Geometry(#[from] GeoError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("τ² = {0:.6} sits in a cluster of eigenvalues; widest gap {1:.2e} is below {2:.2e}")]
    Resonant(f64, f64, f64),
    #[error("fixed point stalled after {0} iterations, relative update {1:.3e}")]
    NotConverged(usize, f64),
}

// ---------------------------------------------------------------------------
// Chart atlas: ψ, θ, J, J′ and the amplitude defect on the disk grid
// ---------------------------------------------------------------------------

/// Normal-chart data at every disk cell center, built from one dense fan of
/// geodesics out of the chart center. Next to the chart fields themselves it
/// carries the amplitude defect B with (Δ_{g₀} − σ²)(e^{−σρ}J^{−1/2}) =
/// B·e^{−σρ}J^{−1/2}, assembled from per-ray Jacobi data so that no τ or σ
/// enters numerically.
#[derive(Clone, Debug)]
pub struct ChartAtlas {
    pub center: ChartCenter,
    pub n_rays: usize,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub djacobian: Vec<f64>,
    /// ∂_θ ln J per cell (1/radian), for angular amplitude factors.
    pub utheta: Vec<f64>,
    /// Amplitude defect B = K/2 + u_ρ²/4 + J^{−2}(¾u_θ² − ½u_θθ), u = ln J.
    pub bracket: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ChartAtlas {
    /// Builds the atlas on the cell centers of `grid`. The fan has `n_rays`
    /// geodesics; chart values at a cell are interpolated between the two
    /// fan rays that straddle it (second order in the fan spacing), and the
    /// angular derivatives of ln J come from finite differences across
    /// neighbouring rays evaluated at equal arclength.
    pub fn build(
        surface: &SimpleSurface,
        center: ChartCenter,
        grid: &PolarGrid,
        n_rays: usize,
        step: f64,
    ) -> Result<ChartAtlas, CgoError> {
        if n_rays < 64 {
            return Err(CgoError::BadConfig(format!("fan of {n_rays} rays is too sparse")));
        }
        let dth = std::f64::consts::PI / n_rays as f64;
        let theta_of = |j: usize| (j as f64 + 0.5) * dth;
        let mut rays: Vec<GeodesicPath> = Vec::with_capacity(n_rays);
        for j in 0..n_rays {
            let (start, dir) = surface.circle_direction(center.omega, center.radius, theta_of(j));
            rays.push(surface.trace_ball(start, dir, step, center.r_exit)?);
        }

        // candidate rays per cell: walk every ray once and drop its index
        // into each cell it passes through
        let mut cand: Vec<Vec<u32>> = vec![Vec::new(); grid.len()];
        for (j, ray) in rays.iter().enumerate() {
            for s in &ray.samples {
                if let Some((ci, cj)) = grid.cell_of(s.pos[0], s.pos[1]) {
                    let list = &mut cand[grid.idx(ci, cj)];
                    if list.last() != Some(&(j as u32)) {
                        list.push(j as u32);
                    }
                }
            }
        }
        for list in cand.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }

        let n = grid.len();
        let mut atlas = ChartAtlas {
            center,
            n_rays,
            psi: vec![0.0; n],
            theta: vec![0.0; n],
            jacobian: vec![0.0; n],
            djacobian: vec![0.0; n],
            utheta: vec![0.0; n],
            bracket: vec![0.0; n],
            valid: vec![false; n],
        };
        let mut failed = 0usize;

        for i in 0..grid.nr {
            for jcell in 0..grid.nphi {
                let idx = grid.idx(i, jcell);
                let (px, py) = grid.cell_xy(i, jcell);
                // gather candidates from the 3×3 cell neighbourhood
                let mut set: Vec<u32> = Vec::new();
                for di in -1i64..=1 {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= grid.nr as i64 {
                        continue;
                    }
                    for dj in -1i64..=1 {
                        let jj = (jcell as i64 + dj).rem_euclid(grid.nphi as i64) as usize;
                        set.extend_from_slice(&cand[grid.idx(ii as usize, jj)]);
                    }
                }
                set.sort_unstable();
                set.dedup();
                if set.is_empty() {
                    failed += 1;
                    continue;
                }
                // signed miss of each candidate ray at this cell center
                let mut misses: Vec<(u32, f64, f64, f64, f64)> = Vec::with_capacity(set.len());
                for &j in &set {
                    let (_, t, jac, signed) = closest_approach(&rays[j as usize], px, py);
                    misses.push((j, signed, t, jac, rays[j as usize].djacobi_at(t)));
                }
                // best pair of index-adjacent rays with a sign change
                let mut pair: Option<(usize, usize)> = None;
                let mut pair_score = f64::INFINITY;
                for a in 0..misses.len() {
                    for b in (a + 1)..misses.len() {
                        if misses[b].0 == misses[a].0 + 1 && misses[a].1 * misses[b].1 <= 0.0 {
                            let score = misses[a].1.abs() + misses[b].1.abs();
                            if score < pair_score {
                                pair_score = score;
                                pair = Some((a, b));
                            }
                        }
                    }
                }
                // fall back to the nearest ray and its missing neighbour
                let (left, right) = match pair {
                    Some((a, b)) => (misses[a], misses[b]),
                    None => {
                        let best = misses
                            .iter()
                            .min_by(|u, v| u.1.abs().partial_cmp(&v.1.abs()).unwrap())
                            .copied()
                            .unwrap();
                        let j = best.0 as i64;
                        let jn = if best.1 > 0.0 { j + 1 } else { j - 1 };
                        if jn < 0 || jn >= n_rays as i64 {
                            failed += 1;
                            continue;
                        }
                        let (_, t, jac, signed) = closest_approach(&rays[jn as usize], px, py);
                        let other =
                            (jn as u32, signed, t, jac, rays[jn as usize].djacobi_at(t));
                        if jn > j {
                            (best, other)
                        } else {
                            (other, best)
                        }
                    }
                };
                let (jl, ml, tl, _, _) = left;
                let (_, mr, tr, _, _) = right;
                let denom = ml - mr;
                let frac = if denom.abs() < 1e-300 { 0.5 } else { (ml / denom).clamp(0.0, 1.0) };
                let theta_star = theta_of(jl as usize) + frac * dth;
                let psi_star = tl + frac * (tr - tl);
                if !(psi_star > 0.0) {
                    failed += 1;
                    continue;
                }

                // J and J′ at (ψ*, θ*): cubic along each of the five rays
                // around θ*, then one quartic across the fan evaluated at θ*
                let j0 = ((theta_star / dth - 0.5).round() as i64).clamp(2, n_rays as i64 - 3)
                    as usize;
                let mut u5 = [0.0f64; 5];
                let mut v5 = [0.0f64; 5];
                let mut ok = true;
                for m in 0..5 {
                    let ray = &rays[j0 + m - 2];
                    if psi_star >= ray.exit_time {
                        ok = false;
                        break;
                    }
                    let jv = cubic_sample(ray, psi_star, |s| s.jacobi);
                    if jv <= 0.0 {
                        ok = false;
                        break;
                    }
                    u5[m] = jv.ln();
                    v5[m] = cubic_sample(ray, psi_star, |s| s.djacobi);
                }
                if !ok {
                    failed += 1;
                    continue;
                }
                let z = theta_star / dth - 0.5 - j0 as f64;
                let (u_val, u_t_unit, u_tt_unit) = quartic_eval(&u5, z);
                let (djac_star, _, _) = quartic_eval(&v5, z);
                let jac_star = u_val.exp();
                let u_t = u_t_unit / dth;
                let u_tt = u_tt_unit / (dth * dth);

                let jet = surface.lambda_jet(px, py);
                let gauss = -(-2.0 * jet.v).exp() * jet.laplacian();
                let u_rho = djac_star / jac_star;
                let bracket = 0.5 * gauss
                    + 0.25 * u_rho * u_rho
                    + (0.75 * u_t * u_t - 0.5 * u_tt) / (jac_star * jac_star);

                atlas.psi[idx] = psi_star;
                atlas.theta[idx] = theta_star;
                atlas.jacobian[idx] = jac_star;
                atlas.djacobian[idx] = djac_star;
                atlas.utheta[idx] = u_t;
                atlas.bracket[idx] = bracket;
                atlas.valid[idx] = true;
            }
        }
        if failed > 0 {
            return Err(CgoError::Geometry(GeoError::ChartFailure { failed, total: n }));
        }
        Ok(atlas)
    }
}

/// Cubic Lagrange interpolation of a sample field at arclength t, using the
/// uniform section of the ray (the final exit sample is irregular and only
/// reached through the clamp, where the formula degrades gracefully).
fn cubic_sample(ray: &GeodesicPath, t: f64, pick: fn(&crate::geometry::GeodesicSample) -> f64) -> f64 {
    let n = ray.samples.len();
    if n < 6 {
        let s = ray.samples.last().unwrap();
        return pick(s);
    }
    let h = ray.samples[1].t;
    let k = ((t / h).floor() as i64).clamp(1, n as i64 - 4) as usize;
    let z = t / h - k as f64;
    let w = [
        -z * (z - 1.0) * (z - 2.0) / 6.0,
        (z * z - 1.0) * (z - 2.0) / 2.0,
        -z * (z + 1.0) * (z - 2.0) / 2.0,
        z * (z * z - 1.0) / 6.0,
    ];
    (0..4).map(|m| w[m] * pick(&ray.samples[k - 1 + m])).sum()
}

/// Value, first and second derivative (in units of the node spacing) of the
/// quartic interpolating u at the five unit-spaced nodes −2..2, evaluated
/// at z.
fn quartic_eval(u: &[f64; 5], z: f64) -> (f64, f64, f64) {
    let c0 = u[2];
    let c1 = (8.0 * (u[3] - u[1]) - (u[4] - u[0])) / 12.0;
    let c2 = (-30.0 * u[2] + 16.0 * (u[3] + u[1]) - (u[4] + u[0])) / 24.0;
    let c3 = ((u[4] - u[0]) - 2.0 * (u[3] - u[1])) / 12.0;
    let c4 = (6.0 * u[2] - 4.0 * (u[3] + u[1]) + (u[4] + u[0])) / 24.0;
    let val = c0 + z * (c1 + z * (c2 + z * (c3 + z * c4)));
    let d1 = c1 + z * (2.0 * c2 + z * (3.0 * c3 + z * 4.0 * c4));
    let d2 = 2.0 * c2 + z * (6.0 * c3 + z * 12.0 * c4);
    (val, d1, d2)
}

/// Transversal amplitude e^{−iτψ} e^{−σψ} J^{−1/2} over chart fields (for
/// evaluating the unconjugated solution on boundary surfaces and slices).
pub fn amplitude(fields: &ChartFields, sigma: f64, tau: f64) -> Vec<Complex64> {
    fields
        .psi
        .iter()
        .zip(&fields.jacobian)
        .zip(&fields.valid)
        .map(|((&psi, &jac), &ok)| {
            if ok {
                Complex64::from_polar((-sigma * psi).exp() / jac.sqrt(), -tau * psi)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Angular amplitude bump
// ---------------------------------------------------------------------------

/// Smooth bump β(θ) = exp(−1/(1−z²)), z = (θ−θ₀)/width, compactly supported
/// in |θ−θ₀| < width. With the default parameters the support is the middle
/// half of the chart angle range (0, π), well away from the fan edges.
#[derive(Clone, Copy, Debug)]
pub struct AngularBump {
    pub theta0: f64,
    pub width: f64,
}

impl AngularBump {
    pub const DEFAULT: AngularBump = AngularBump {
        theta0: std::f64::consts::FRAC_PI_2,
        width: std::f64::consts::FRAC_PI_4,
    };

    /// (β, β′, β″) at the chart angle θ; identically zero outside the support.
    pub fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let z = (theta - self.theta0) / self.width;
        if z.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let p = 1.0 - z * z;
        let b = (-1.0 / p).exp();
        let d1z = b * (-2.0 * z / (p * p));
        let d2z = b * (4.0 * z * z / (p * p * p * p) - 2.0 / (p * p) - 8.0 * z * z / (p * p * p));
        (b, d1z / self.width, d2z / (self.width * self.width))
    }
}

// ---------------------------------------------------------------------------
// Configurations
// ---------------------------------------------------------------------------

/// Empirical ceiling for the first-order remainder constant: twice the
/// largest measured value of max_τ τ‖w‖_{L²}/‖f‖_{L²} across the solve
/// fixtures (0.18 on the 1600-mode disk, both with and without a potential).
/// The admissibility floor τ ≥ max(1, C₀‖q‖_∞) collapses to τ ≥ 1 for every
/// potential in range (‖q‖_∞ ≤ 2.5); the constant is asserted against fresh
/// fits in the decay tests and bounds the fixed-point contraction τρ ≤ C₀‖q‖.
pub const ADMISSIBILITY_C0: f64 = 0.4;

/// Parameters of the conjugated 1-D-per-mode solve on the periodic box
/// [−s_half, s_half]. Potentials must vanish outside |s| ≤ s_support; the
/// padding between s_support and s_half emulates the infinite cylinder.
#[derive(Clone, Copy, Debug)]
pub struct CarlemanConfig {
    /// Signed Carleman parameter (1/length), |τ| ≥ 1.
    pub tau: f64,
    pub s_half: f64,
    pub ns: usize,
    /// Potentials are required to vanish for |s| > s_support.
    pub s_support: f64,
    /// Weight exponent of the norms ‖(1+s²)^{−δ/2}·‖, must exceed 1/2.
    pub delta: f64,
    /// Minimal distance kept between τ² and the Dirichlet spectrum.
    pub resonance_gap: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl CarlemanConfig {
    pub fn new(tau: f64) -> Self {
        CarlemanConfig {
            tau,
            s_half: 4.0,
            ns: 128,
            s_support: 1.0,
            delta: 1.0,
            resonance_gap: 0.5,
            max_iter: 60,
            tol: 1e-11,
        }
    }

    pub fn ds(&self) -> f64 {
        2.0 * self.s_half / self.ns as f64
    }

    pub fn s_center(&self, m: usize) -> f64 {
        -self.s_half + (m as f64 + 0.5) * self.ds()
    }
}

/// Parameters of one CGO build. The axial frequency is σ = π·sigma_index /
/// s_half so the amplitude is exactly one Fourier harmonic of the box;
/// sigma_index = 0 gives the constant-in-s amplitude of the partner
/// solution. `sign` = ±1 selects e^{∓τ(s+iψ)} growth. The chart center
/// sits `offset` outside the rim; pushing it well away keeps the
/// amplitude defect B = O(1) on the disk, while a center hugging the rim
/// plants a 1/(4ψ²) spike next to the boundary whose coupling to the
/// λ ≈ τ² eigenmodes stalls the remainder decay.
#[derive(Clone, Copy, Debug)]
pub struct CgoConfig {
    pub omega: f64,
    /// How far outside the unit circle the chart center sits.
    pub offset: f64,
    pub sigma_index: usize,
    /// Magnitude of the Carleman parameter (1/length).
    pub tau: f64,
    /// ±1: the solution pair uses opposite exponential weights.
    pub sign: f64,
    /// Angular amplitude bump; `None` means β ≡ 1 over the whole chart.
    pub beta: Option<AngularBump>,
    pub s_half: f64,
    pub ns: usize,
    pub n_rays: usize,
    pub trace_step: f64,
    pub resonance_gap: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Weight exponent for the recorded weighted norms.
    pub delta: f64,
}

impl CgoConfig {
    pub fn new(omega: f64, sigma_index: usize, tau: f64) -> Self {
        CgoConfig {
            omega,
            offset: 0.8,
            sigma_index,
            tau,
            sign: 1.0,
            beta: Some(AngularBump::DEFAULT),
            s_half: 4.0,
            ns: 128,
            n_rays: 1024,
            trace_step: 1e-3,
            resonance_gap: 0.5,
            max_iter: 60,
            tol: 1e-11,
            delta: 1.0,
        }
    }

    pub fn sigma(&self) -> f64 {
        std::f64::consts::PI * self.sigma_index as f64 / self.s_half
    }

    pub fn ds(&self) -> f64 {
        2.0 * self.s_half / self.ns as f64
    }

    pub fn s_center(&self, m: usize) -> f64 {
        -self.s_half + (m as f64 + 0.5) * self.ds()
    }

    pub fn s_support(&self) -> f64 {
        self.s_half / 4.0
    }

    pub fn center(&self) -> ChartCenter {
        ChartCenter::exterior(self.omega, self.offset)
    }
}

/// Signed Fourier frequency of FFT bin n on the box [−s_half, s_half].
pub fn xi_of_bin(n: usize, ns: usize, s_half: f64) -> f64 {
    let nu = if n <= ns / 2 { n as i64 } else { n as i64 - ns as i64 };
    std::f64::consts::PI * nu as f64 / s_half
}

/// Moves τ² to the midpoint of the nearest spectral gap at least 2·`gap`
/// wide whenever it comes closer than `gap` to a Dirichlet eigenvalue.
/// Angular eigenvalues carry multiplicity two, so the gap bracketing τ²
/// itself may be degenerate; the scan skips such collapsed gaps. Returns
/// (τ, nudged); τ keeps its sign.
pub fn nudge_tau(tau: f64, eigenvalues: &[f64], gap: f64) -> Result<(f64, bool), CgoError> {
    let t2 = tau * tau;
    let near = eigenvalues.iter().fold(f64::INFINITY, |m, &l| m.min((t2 - l).abs()));
    if near >= gap {
        return Ok((tau, false));
    }
    let mut lams: Vec<f64> = eigenvalues.to_vec();
    lams.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if t2 < lams[0] || t2 > lams[lams.len() - 1] {
        return Err(CgoError::BadConfig(format!("τ² = {t2:.3} leaves the computed spectrum")));
    }
    let mut best: Option<(f64, f64)> = None;
    for w in lams.windows(2) {
        let half = 0.5 * (w[1] - w[0]);
        if half < gap {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let dist = (mid - t2).abs();
        if best.map_or(true, |(d, _)| dist < d) {
            best = Some((dist, mid));
        }
    }
    match best {
        Some((_, mid)) => Ok((mid.sqrt().copysign(tau), true)),
        None => Err(CgoError::Resonant(t2, near, gap)),
    }
}

// ---------------------------------------------------------------------------
// Spectral fixed point shared by the generic and the CGO solve
// ---------------------------------------------------------------------------

/// Norms of a box field: plain and (1+s²)^{−δ/2}-weighted L² and H¹, with
/// H¹ counting |∂_s w|² + |∇_{g₀} w|² + |w|².
#[derive(Clone, Copy, Debug)]
pub struct BoxNorms {
    pub l2: f64,
    pub h1: f64,
    pub l2_weighted: f64,
    pub h1_weighted: f64,
}

/// Solution of e^{τs}(−Δ_g + q)e^{−τs} w = −f on the periodic box, i.e.
/// (Δ_g + τ² − 2τ∂_s)w = f + qw, expanded over (disk mode k, FFT bin n).
#[derive(Clone, Debug)]
pub struct CarlemanSolution {
    /// τ actually used (signed, after any resonance nudge).
    pub tau: f64,
    pub nudged: bool,
    pub delta: f64,
    pub s_half: f64,
    pub ns: usize,
    /// ŵ[k][n]: coefficient of φ_k(x) e^{iξ_n s}.
    pub w_hat: Vec<Vec<Complex64>>,
    /// w projected on φ_k per slice: tracks[k][m] = ⟨w(s_m, ·), φ_k⟩.
    pub w_tracks: Vec<Vec<Complex64>>,
    pub iterations: usize,
    pub final_update: f64,
    /// Ratio of the last two fixed-point updates.
    pub contraction: f64,
    /// ‖D ŵ − f̂ − (q w)∧‖ / ‖f̂‖ over all retained modes.
    pub residual_rel: f64,
    /// min |D(ξ_n, λ_k)| over the retained symbol grid.
    pub min_symbol: f64,
    /// ‖f̂‖_{L²} after projection onto the retained modes.
    pub f_hat_l2: f64,
    /// Norms of w at the configured weight exponent.
    pub norms: BoxNorms,
}

impl CarlemanSolution {
    pub fn ds(&self) -> f64 {
        2.0 * self.s_half / self.ns as f64
    }

    pub fn s_center(&self, m: usize) -> f64 {
        -self.s_half + (m as f64 + 0.5) * self.ds()
    }

    /// H^k norm of w on the box: √(L · Σ (1 + ξ² + λ)^k |ŵ|²).
    pub fn sobolev(&self, eigenvalues: &[f64], order: f64) -> f64 {
        let l_box = 2.0 * self.s_half;
        let mut total = 0.0;
        for (k, track) in self.w_hat.iter().enumerate() {
            let lam = eigenvalues[k];
            for (n, c) in track.iter().enumerate() {
                let xi = xi_of_bin(n, self.ns, self.s_half);
                total += (1.0 + xi * xi + lam).powf(order) * c.norm_sqr();
            }
        }
        (l_box * total).sqrt()
    }

    /// L² norm of w (the order-zero Sobolev norm).
    pub fn l2(&self, eigenvalues: &[f64]) -> f64 {
        self.sobolev(eigenvalues, 0.0)
    }

    /// ∫ ⟨s⟩^{−2δ} ‖w(s)‖²_{L²(M₀)} ds via the mode tracks.
    pub fn weighted_l2_modes(&self, delta: f64) -> f64 {
        let ds = self.ds();
        let mut total = 0.0;
        for m in 0..self.ns {
            let s = self.s_center(m);
            let weight = (1.0 + s * s).powf(-delta);
            let slice: f64 = self.w_tracks.iter().map(|t| t[m].norm_sqr()).sum();
            total += weight * slice * ds;
        }
        total.sqrt()
    }

    /// Same weighted norm by synthesising each slice and integrating with
    /// the cell masses (the dual route through physical space).
    pub fn weighted_l2_physical(&self, disk: &DiskDirichlet, delta: f64) -> f64 {
        let ds = self.ds();
        let mut total = 0.0;
        for m in 0..self.ns {
            let s = self.s_center(m);
            let weight = (1.0 + s * s).powf(-delta);
            let slice = self.remainder_slice(disk, m);
            let norm2: f64 =
                slice.iter().zip(&disk.mass).map(|(z, mass)| z.norm_sqr() * mass).sum();
            total += weight * norm2 * ds;
        }
        total.sqrt()
    }

    /// w(s_m, ·) on the disk cells.
    pub fn remainder_slice(&self, disk: &DiskDirichlet, m: usize) -> Vec<Complex64> {
        let coeffs: Vec<Complex64> = self.w_tracks.iter().map(|t| t[m]).collect();
        disk.synth_complex(&coeffs)
    }
}

/// Per-slice potential samples with their sparsity pattern.
struct PotentialSamples {
    q_slices: Vec<Vec<f64>>,
    supp_cells: Vec<usize>,
    active_slices: Vec<usize>,
}

fn sample_potential<Q>(
    disk: &DiskDirichlet,
    q: &Q,
    ns: usize,
    s_half: f64,
    s_support: f64,
) -> Result<PotentialSamples, CgoError>
where
    Q: Fn(f64, f64, f64) -> f64,
{
    let n_cells = disk.grid.len();
    let centers = disk.grid.centers();
    let ds = 2.0 * s_half / ns as f64;
    let mut q_slices: Vec<Vec<f64>> = Vec::with_capacity(ns);
    let mut supp = vec![false; n_cells];
    let mut slice_active = vec![false; ns];
    for m in 0..ns {
        let s = -s_half + (m as f64 + 0.5) * ds;
        let mut row = vec![0.0; n_cells];
        for (c, &(x, y)) in centers.iter().enumerate() {
            let v = q(x, y, s);
            if v != 0.0 {
                if s.abs() > s_support {
                    return Err(CgoError::BadConfig(format!(
                        "potential is nonzero at s = {s:.3}, outside the support window ±{s_support}"
                    )));
                }
                row[c] = v;
                supp[c] = true;
                slice_active[m] = true;
            }
        }
        q_slices.push(row);
    }
    Ok(PotentialSamples {
        q_slices,
        supp_cells: (0..n_cells).filter(|&c| supp[c]).collect(),
        active_slices: (0..ns).filter(|&m| slice_active[m]).collect(),
    })
}

struct CoreOut {
    w_hat: Vec<Vec<Complex64>>,
    w_tracks: Vec<Vec<Complex64>>,
    iterations: usize,
    final_update: f64,
    contraction: f64,
    residual_rel: f64,
    min_symbol: f64,
    f_hat_l2: f64,
}

/// Symbol division plus the q fixed point, on already-projected f tracks
/// (f_tracks[k][m] = ⟨f(s_m,·), φ_k⟩). τ is signed and already nudged.
fn spectral_core(
    disk: &DiskDirichlet,
    f_tracks: &[Vec<Complex64>],
    pot: &PotentialSamples,
    tau: f64,
    s_half: f64,
    ns: usize,
    resonance_gap: f64,
    max_iter: usize,
    tol: f64,
) -> Result<CoreOut, CgoError> {
    let k_modes = disk.n_modes();
    let mut planner = FftPlanner::<f64>::new();
    let fft_fwd = planner.plan_fft_forward(ns);
    let fft_inv = planner.plan_fft_inverse(ns);
    let forward = |track: &[Complex64]| -> Vec<Complex64> {
        let mut buf = track.to_vec();
        fft_fwd.process(&mut buf);
        let scale = 1.0 / ns as f64;
        buf.iter_mut().for_each(|z| *z *= scale);
        buf
    };
    let inverse = |hat: &[Complex64]| -> Vec<Complex64> {
        let mut buf = hat.to_vec();
        fft_inv.process(&mut buf);
        buf
    };

    let mut symbol = vec![vec![Complex64::new(0.0, 0.0); ns]; k_modes];
    let mut min_symbol = f64::INFINITY;
    for (k, row) in symbol.iter_mut().enumerate() {
        let lam = disk.eigenvalues[k];
        for (n, d) in row.iter_mut().enumerate() {
            let xi = xi_of_bin(n, ns, s_half);
            *d = Complex64::new(tau * tau - lam - xi * xi, -2.0 * tau * xi);
            min_symbol = min_symbol.min(d.norm());
        }
    }
    if min_symbol < (0.9 * resonance_gap).max(1e-8) {
        return Err(CgoError::Resonant(tau * tau, min_symbol, resonance_gap));
    }

    let f_hat: Vec<Vec<Complex64>> = f_tracks.iter().map(|t| forward(t)).collect();
    let f_hat_l2 =
        (f_hat.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>() * 2.0 * s_half).sqrt();

    let div_symbol = |rhs: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        rhs.iter()
            .zip(&symbol)
            .map(|(row, drow)| row.iter().zip(drow).map(|(z, d)| z / d).collect())
            .collect()
    };
    let qw_hat = |w_hat: &[Vec<Complex64>]| -> Vec<Vec<Complex64>> {
        let tracks: Vec<Vec<Complex64>> = w_hat.iter().map(|h| inverse(h)).collect();
        let mut g_tracks = vec![vec![Complex64::new(0.0, 0.0); ns]; k_modes];
        for &m in &pot.active_slices {
            // synthesise w on the support cells only
            let mut w_supp = vec![Complex64::new(0.0, 0.0); pot.supp_cells.len()];
            for (k, track) in tracks.iter().enumerate() {
                let wk = track[m];
                if wk.norm_sqr() == 0.0 {
                    continue;
                }
                for (slot, &c) in w_supp.iter_mut().zip(&pot.supp_cells) {
                    *slot += wk * disk.modes[k][c];
                }
            }
            let mut proj = vec![Complex64::new(0.0, 0.0); k_modes];
            for (slot, &c) in w_supp.iter().zip(&pot.supp_cells) {
                let val = slot * pot.q_slices[m][c];
                for (k, p) in proj.iter_mut().enumerate() {
                    *p += val * (disk.modes[k][c] * disk.mass[c]);
                }
            }
            for k in 0..k_modes {
                g_tracks[k][m] = proj[k];
            }
        }
        g_tracks.iter().map(|t| forward(t)).collect()
    };

    let frob =
        |a: &[Vec<Complex64>]| -> f64 { a.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt() };

    let mut w_hat = div_symbol(&f_hat);
    let mut iterations = 1usize;
    let mut final_update = 0.0f64;
    let mut prev_update = f64::INFINITY;
    let mut contraction = 0.0;
    if !pot.supp_cells.is_empty() {
        final_update = f64::INFINITY;
        for _ in 0..max_iter {
            let g = qw_hat(&w_hat);
            let mut rhs = f_hat.clone();
            for (r, gk) in rhs.iter_mut().zip(&g) {
                for (z, gz) in r.iter_mut().zip(gk) {
                    *z += gz;
                }
            }
            let next = div_symbol(&rhs);
            let mut diff = 0.0;
            for (a, b) in next.iter().flatten().zip(w_hat.iter().flatten()) {
                diff += (a - b).norm_sqr();
            }
            let scale = frob(&next).max(1e-300);
            final_update = diff.sqrt() / scale;
            iterations += 1;
            w_hat = next;
            if prev_update.is_finite() && prev_update > 0.0 {
                contraction = final_update / prev_update;
            }
            prev_update = final_update;
            if final_update < tol {
                break;
            }
        }
        if final_update >= tol.max(1e-9) {
            return Err(CgoError::NotConverged(iterations, final_update));
        }
    }

    // residual of the solved system over retained modes
    let g_final = if pot.supp_cells.is_empty() {
        vec![vec![Complex64::new(0.0, 0.0); ns]; k_modes]
    } else {
        qw_hat(&w_hat)
    };
    let mut res_sq = 0.0;
    for k in 0..k_modes {
        for n in 0..ns {
            let r = symbol[k][n] * w_hat[k][n] - f_hat[k][n] - g_final[k][n];
            res_sq += r.norm_sqr();
        }
    }
    let residual_rel = (res_sq * 2.0 * s_half).sqrt() / f_hat_l2.max(1e-300);

    let w_tracks: Vec<Vec<Complex64>> = w_hat.iter().map(|h| inverse(h)).collect();

    Ok(CoreOut {
        w_hat,
        w_tracks,
        iterations,
        final_update,
        contraction,
        residual_rel,
        min_symbol,
        f_hat_l2,
    })
}

/// Plain and weighted box norms from the spectral coefficients.
fn box_norms(
    w_hat: &[Vec<Complex64>],
    w_tracks: &[Vec<Complex64>],
    eigenvalues: &[f64],
    ns: usize,
    s_half: f64,
    delta: f64,
) -> BoxNorms {
    let l_box = 2.0 * s_half;
    let ds = l_box / ns as f64;
    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    for (k, track) in w_hat.iter().enumerate() {
        let lam = eigenvalues[k];
        for (n, c) in track.iter().enumerate() {
            let xi = xi_of_bin(n, ns, s_half);
            let e = c.norm_sqr();
            l2_sq += e;
            h1_sq += (1.0 + xi * xi + lam) * e;
        }
    }
    // ∂_s tracks for the weighted H¹ sum
    let mut planner = FftPlanner::<f64>::new();
    let fft_inv = planner.plan_fft_inverse(ns);
    let mut dw_tracks: Vec<Vec<Complex64>> = Vec::with_capacity(w_hat.len());
    for hat in w_hat {
        let mut buf: Vec<Complex64> = hat
            .iter()
            .enumerate()
            .map(|(n, c)| c * Complex64::new(0.0, xi_of_bin(n, ns, s_half)))
            .collect();
        fft_inv.process(&mut buf);
        dw_tracks.push(buf);
    }
    let mut l2w_sq = 0.0;
    let mut h1w_sq = 0.0;
    for m in 0..ns {
        let s = -s_half + (m as f64 + 0.5) * ds;
        let weight = (1.0 + s * s).powf(-delta);
        let mut a = 0.0;
        let mut b = 0.0;
        for (k, track) in w_tracks.iter().enumerate() {
            let e = track[m].norm_sqr();
            a += e;
            b += (1.0 + eigenvalues[k]) * e + dw_tracks[k][m].norm_sqr();
        }
        l2w_sq += weight * a * ds;
        h1w_sq += weight * b * ds;
    }
    BoxNorms {
        l2: (l_box * l2_sq).sqrt(),
        h1: (l_box * h1_sq).sqrt(),
        l2_weighted: l2w_sq.sqrt(),
        h1_weighted: h1w_sq.sqrt(),
    }
}

/// Solves (Δ_g + τ² − 2τ∂_s)w = f + qw for an arbitrary right-hand side
/// given slice-wise on the disk cells (f_slices[m][cell] = f(s_m, cell)).
/// Every mode solve is a Fourier division by D(ξ, k) = τ² − λ_k − ξ² − 2iτξ;
/// the potential enters through the fixed point w ← D^{−1}(f̂ + (qw)∧).
pub fn carleman_solve<Q>(
    disk: &DiskDirichlet,
    f_slices: &[Vec<Complex64>],
    q: Q,
    cfg: &CarlemanConfig,
) -> Result<CarlemanSolution, CgoError>
where
    Q: Fn(f64, f64, f64) -> f64,
{
    let n_cells = disk.grid.len();
    if f_slices.len() != cfg.ns || f_slices.iter().any(|s| s.len() != n_cells) {
        return Err(CgoError::BadConfig(format!(
            "right-hand side must be {} slices of {} cells",
            cfg.ns, n_cells
        )));
    }
    if cfg.tau.abs() < 1.0 {
        return Err(CgoError::BadConfig(format!("|τ| = {} is below 1", cfg.tau.abs())));
    }
    if cfg.delta <= 0.5 {
        return Err(CgoError::BadConfig(format!("weight exponent δ = {} must exceed 1/2", cfg.delta)));
    }
    let (tau, nudged) = nudge_tau(cfg.tau, &disk.eigenvalues, cfg.resonance_gap)?;
    let pot = sample_potential(disk, &q, cfg.ns, cfg.s_half, cfg.s_support)?;
    let mut f_tracks = vec![vec![Complex64::new(0.0, 0.0); cfg.ns]; disk.n_modes()];
    for (m, slice) in f_slices.iter().enumerate() {
        let proj = disk.project_complex(slice);
        for (k, p) in proj.into_iter().enumerate() {
            f_tracks[k][m] = p;
        }
    }
    let core = spectral_core(
        disk,
        &f_tracks,
        &pot,
        tau,
        cfg.s_half,
        cfg.ns,
        cfg.resonance_gap,
        cfg.max_iter,
        cfg.tol,
    )?;
    let norms =
        box_norms(&core.w_hat, &core.w_tracks, &disk.eigenvalues, cfg.ns, cfg.s_half, cfg.delta);
    Ok(CarlemanSolution {
        tau,
        nudged,
        delta: cfg.delta,
        s_half: cfg.s_half,
        ns: cfg.ns,
        w_hat: core.w_hat,
        w_tracks: core.w_tracks,
        iterations: core.iterations,
        final_update: core.final_update,
        contraction: core.contraction,
        residual_rel: core.residual_rel,
        min_symbol: core.min_symbol,
        f_hat_l2: core.f_hat_l2,
        norms,
    })
}

// ---------------------------------------------------------------------------
// CGO assembly
// ---------------------------------------------------------------------------

/// One assembled CGO solution u = e^{−τ(s+iψ)}(a + r) in conjugated form:
/// the stored remainder w equals e^{−iτψ} r, and v = e^{τs} u is recovered
/// slice-wise as e^{iσs}·amp + w.
#[derive(Clone, Debug)]
pub struct CgoSolution {
    pub config: CgoConfig,
    /// Signed τ actually used (sign × nudged magnitude).
    pub tau: f64,
    pub nudged: bool,
    pub sigma: f64,
    pub sign: f64,
    /// Transversal profile G = e^{−σψ} J^{−1/2} per cell (β not included).
    pub g_profile: Vec<f64>,
    /// β(θ) per cell.
    pub beta_cells: Vec<f64>,
    /// e^{−iτψ} G β per cell: the s-independent factor of the ansatz.
    pub amp: Vec<Complex64>,
    /// ‖f‖_{L²} of the assembled right-hand side by slice quadrature.
    pub f_l2: f64,
    /// The solved remainder with its diagnostics and norms.
    pub remainder: CarlemanSolution,
}

impl CgoSolution {
    /// v(s_m, ·) = e^{iσ s_m}·amp + w(s_m, ·): the conjugated solution whose
    /// unconjugated form is u = e^{−τs} v.
    pub fn slice(&self, disk: &DiskDirichlet, m: usize) -> Vec<Complex64> {
        let s = self.remainder.s_center(m);
        let phase = Complex64::from_polar(1.0, self.sigma * s);
        let mut v = self.remainder.remainder_slice(disk, m);
        for (out, a) in v.iter_mut().zip(&self.amp) {
            *out += phase * a;
        }
        v
    }
}

/// Assembles the amplitude from the chart atlas, forms the remainder
/// equation's right-hand side analytically (no numerical τ² cancellation)
/// and solves it spectrally. The disk modes, the atlas and the potential
/// are supplied by the caller so eigendata and chart fans can be shared
/// across a τ sweep.
pub fn build_cgo<Q>(
    disk: &DiskDirichlet,
    atlas: &ChartAtlas,
    q: Q,
    cfg: &CgoConfig,
) -> Result<CgoSolution, CgoError>
where
    Q: Fn(f64, f64, f64) -> f64,
{
    let n_cells = disk.grid.len();
    if atlas.psi.len() != n_cells {
        return Err(CgoError::BadConfig("atlas and disk grids disagree".into()));
    }
    if atlas.valid.iter().any(|v| !v) {
        let failed = atlas.valid.iter().filter(|v| !**v).count();
        return Err(CgoError::Geometry(GeoError::ChartFailure { failed, total: n_cells }));
    }
    if cfg.sigma_index > cfg.ns / 4 {
        return Err(CgoError::BadConfig(format!(
            "sigma_index {} must lie in 0..={}",
            cfg.sigma_index,
            cfg.ns / 4
        )));
    }
    if cfg.sign.abs() != 1.0 {
        return Err(CgoError::BadConfig(format!("sign must be ±1, got {}", cfg.sign)));
    }
    if cfg.tau < 1.0 {
        return Err(CgoError::BadConfig(format!("τ = {} is below 1", cfg.tau)));
    }
    let lambda_max = *disk.eigenvalues.last().unwrap();
    let (tau_abs, nudged) = nudge_tau(cfg.tau, &disk.eigenvalues, cfg.resonance_gap)?;
    if tau_abs * tau_abs > 0.8 * lambda_max {
        return Err(CgoError::BadConfig(format!(
            "τ² = {:.1} too close to the spectral cutoff λ_max = {lambda_max:.1}",
            tau_abs * tau_abs
        )));
    }
    let tau = cfg.sign * tau_abs;
    let sigma = cfg.sigma();
    let ns = cfg.ns;
    let ds = cfg.ds();

    // amplitude profile, angular bump and the defect field B_β
    let mut g_profile = vec![0.0; n_cells];
    let mut beta_cells = vec![0.0; n_cells];
    let mut famp = vec![Complex64::new(0.0, 0.0); n_cells];
    let mut amp = vec![Complex64::new(0.0, 0.0); n_cells];
    let mut b_field = vec![0.0; n_cells];
    for c in 0..n_cells {
        g_profile[c] = (-sigma * atlas.psi[c]).exp() / atlas.jacobian[c].sqrt();
        famp[c] = Complex64::from_polar(g_profile[c], -tau * atlas.psi[c]);
        let (b, b1, b2) = match &cfg.beta {
            Some(bump) => bump.eval(atlas.theta[c]),
            None => (1.0, 0.0, 0.0),
        };
        beta_cells[c] = b;
        amp[c] = famp[c] * b;
        let jac2 = atlas.jacobian[c] * atlas.jacobian[c];
        b_field[c] = b * atlas.bracket[c] + (b2 - 2.0 * atlas.utheta[c] * b1) / jac2;
    }

    let pot = sample_potential(disk, &q, ns, cfg.s_half, cfg.s_support())?;

    // f tracks: F̂[k][m] = e^{iσ s_m} ⟨(q(s_m)β − B_β) e^{−iτψ} G, φ_k⟩
    let k_modes = disk.n_modes();
    let minus_defect_amp: Vec<Complex64> =
        famp.iter().zip(&b_field).map(|(a, b)| -a * b).collect();
    let base_hat = disk.project_complex(&minus_defect_amp);
    let base_l2_sq: f64 = minus_defect_amp
        .iter()
        .zip(&disk.mass)
        .map(|(z, mass)| z.norm_sqr() * mass)
        .sum();
    let mut f_tracks = vec![vec![Complex64::new(0.0, 0.0); ns]; k_modes];
    let mut f_l2_sq = 0.0;
    let mut slice_is_active = vec![false; ns];
    for &m in &pot.active_slices {
        slice_is_active[m] = true;
    }
    for m in 0..ns {
        let s = cfg.s_center(m);
        let phase = Complex64::from_polar(1.0, sigma * s);
        if slice_is_active[m] {
            let mut extra = vec![Complex64::new(0.0, 0.0); k_modes];
            for &c in &pot.supp_cells {
                let val = amp[c] * pot.q_slices[m][c];
                if val.norm_sqr() == 0.0 {
                    continue;
                }
                for (k, e) in extra.iter_mut().enumerate() {
                    *e += val * (disk.modes[k][c] * disk.mass[c]);
                }
            }
            for k in 0..k_modes {
                f_tracks[k][m] = phase * (base_hat[k] + extra[k]);
            }
            let mut slice_sq = 0.0;
            for c in 0..n_cells {
                let fv = famp[c] * (pot.q_slices[m][c] * beta_cells[c] - b_field[c]);
                slice_sq += fv.norm_sqr() * disk.mass[c];
            }
            f_l2_sq += slice_sq * ds;
        } else {
            for k in 0..k_modes {
                f_tracks[k][m] = phase * base_hat[k];
            }
            f_l2_sq += base_l2_sq * ds;
        }
    }

    let core = spectral_core(
        disk,
        &f_tracks,
        &pot,
        tau,
        cfg.s_half,
        ns,
        cfg.resonance_gap,
        cfg.max_iter,
        cfg.tol,
    )?;
    let norms =
        box_norms(&core.w_hat, &core.w_tracks, &disk.eigenvalues, ns, cfg.s_half, cfg.delta);

    Ok(CgoSolution {
        config: *cfg,
        tau,
        nudged,
        sigma,
        sign: cfg.sign,
        g_profile,
        beta_cells,
        amp,
        f_l2: f_l2_sq.sqrt(),
        remainder: CarlemanSolution {
            tau,
            nudged,
            delta: cfg.delta,
            s_half: cfg.s_half,
            ns,
            w_hat: core.w_hat,
            w_tracks: core.w_tracks,
            iterations: core.iterations,
            final_update: core.final_update,
            contraction: core.contraction,
            residual_rel: core.residual_rel,
            min_symbol: core.min_symbol,
            f_hat_l2: core.f_hat_l2,
            norms,
        },
    })
}

// ---------------------------------------------------------------------------
// Decay fits and the sign-flipped pair
// ---------------------------------------------------------------------------

/// Records of a τ sweep of CGO builds with least-squares decay fits of the
/// remainder norms against τ.
#[derive(Clone, Debug)]
pub struct DecayFit {
    /// |τ| actually used per run (after nudges).
    pub taus: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    pub f_l2: Vec<f64>,
    pub iterations: Vec<usize>,
    pub contraction: Vec<f64>,
    /// Slope and intercept of log‖w‖_{L²} against log τ.
    pub slope: f64,
    pub intercept: f64,
    /// Slope of log‖w‖_{H¹} against log τ.
    pub h1_slope: f64,
    /// Smallest C with ‖w‖_{L²} ≤ C·τ^{−1}·‖f‖_{L²} over the sweep.
    pub fitted_c: f64,
}

fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().map(|x| x.ln()).sum();
    let sy: f64 = ys.iter().map(|y| y.ln()).sum();
    let sxx: f64 = xs.iter().map(|x| x.ln() * x.ln()).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x.ln() * y.ln()).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

/// Sweeps `build_cgo` over a τ list (all with the sign and frequency of
/// `cfg0`) and fits the decay of the remainder norms.
pub fn remainder_decay_fit<Q>(
    disk: &DiskDirichlet,
    atlas: &ChartAtlas,
    q: Q,
    cfg0: &CgoConfig,
    taus: &[f64],
) -> Result<DecayFit, CgoError>
where
    Q: Fn(f64, f64, f64) -> f64,
{
    if taus.len() < 4 {
        return Err(CgoError::BadConfig(format!("decay fit needs ≥ 4 values of τ, got {}", taus.len())));
    }
    let mut fit = DecayFit {
        taus: Vec::new(),
        l2: Vec::new(),
        h1: Vec::new(),
        f_l2: Vec::new(),
        iterations: Vec::new(),
        contraction: Vec::new(),
        slope: 0.0,
        intercept: 0.0,
        h1_slope: 0.0,
        fitted_c: 0.0,
    };
    for &tau in taus {
        let mut cfg = *cfg0;
        cfg.tau = tau;
        let sol = build_cgo(disk, atlas, &q, &cfg)?;
        let t = sol.tau.abs();
        fit.taus.push(t);
        fit.l2.push(sol.remainder.norms.l2);
        fit.h1.push(sol.remainder.norms.h1);
        fit.f_l2.push(sol.f_l2);
        fit.iterations.push(sol.remainder.iterations);
        fit.contraction.push(sol.remainder.contraction);
        fit.fitted_c = fit.fitted_c.max(t * sol.remainder.norms.l2 / sol.f_l2);
    }
    let (slope, intercept) = loglog_fit(&fit.taus, &fit.l2);
    fit.slope = slope;
    fit.intercept = intercept;
    fit.h1_slope = loglog_fit(&fit.taus, &fit.h1).0;
    Ok(fit)
}

/// max over the grid of |v₁ v₂| for two conjugated solutions built with
/// opposite signs: the e^{±τ(s+iψ)} factors cancel in the product, so this
/// equals max |V₁ V₂| of the stored slice fields.
pub fn pair_product_max(disk: &DiskDirichlet, a: &CgoSolution, b: &CgoSolution) -> f64 {
    assert_eq!(a.remainder.ns, b.remainder.ns, "solutions live on different slice stacks");
    assert_eq!(a.remainder.s_half, b.remainder.s_half, "solutions live on different boxes");
    let mut worst = 0.0f64;
    for m in 0..a.remainder.ns {
        let va = a.slice(disk, m);
        let vb = b.slice(disk, m);
        for (x, y) in va.iter().zip(&vb) {
            worst = worst.max((x * y).norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Independent residual checks in physical space
// ---------------------------------------------------------------------------

/// Worst relative residual of (∂_s + i∂_ρ) applied to the holomorphic
/// amplitude factor αβ = e^{−σ(ψ−is)}β(θ): the s-derivative is taken
/// spectrally on the sampled slice stack, the ρ-derivative is the analytic
/// −σ (the factor is exactly e^{−σψ} along rays since |∇ψ| = 1).
pub fn transport_factor_residual(
    atlas: &ChartAtlas,
    beta: Option<&AngularBump>,
    sigma: f64,
    s_half: f64,
    ns: usize,
) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let fft_fwd = planner.plan_fft_forward(ns);
    let fft_inv = planner.plan_fft_inverse(ns);
    let ds = 2.0 * s_half / ns as f64;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for c in 0..atlas.psi.len() {
        if !atlas.valid[c] {
            continue;
        }
        let b = match beta {
            Some(bump) => bump.eval(atlas.theta[c]).0,
            None => 1.0,
        };
        if b == 0.0 {
            continue;
        }
        let base = (-sigma * atlas.psi[c]).exp() * b;
        scale = scale.max(base);
        // sample h(s) = base·e^{iσs}, differentiate by FFT
        let mut buf: Vec<Complex64> = (0..ns)
            .map(|m| {
                let s = -s_half + (m as f64 + 0.5) * ds;
                Complex64::from_polar(base, sigma * s)
            })
            .collect();
        fft_fwd.process(&mut buf);
        let inv_ns = 1.0 / ns as f64;
        for (n, z) in buf.iter_mut().enumerate() {
            *z *= Complex64::new(0.0, xi_of_bin(n, ns, s_half)) * inv_ns;
        }
        fft_inv.process(&mut buf);
        for (m, dh) in buf.iter().enumerate() {
            let s = -s_half + (m as f64 + 0.5) * ds;
            let h = Complex64::from_polar(base, sigma * s);
            // ∂_s h + i ∂_ρ h with ∂_ρ h = −σ h
            let res = dh + Complex64::i() * (-sigma) * h;
            worst = worst.max(res.norm());
        }
    }
    worst / scale.max(1e-300)
}

/// Relative L² residual of the full transport identity
/// 2⟨d(s + iψ), d a⟩_g + Δ_g(s + iψ)·a = 0 for a = e^{iσs}A,
/// A = e^{−σψ}J^{−1/2}β(θ), evaluated with finite-difference gradients and
/// the finite-volume Laplacian on interior cells. The e^{iσs} factor drops
/// out; what remains is ‖2σA·i + 2i⟨∇ψ,∇A⟩ + iΔψ·A‖ / ((1+2σ)‖A‖).
///
/// Cells closer than `psi_min` to the chart center are skipped: the center
/// sits just outside the rim, so the nearest cells see J^{−1/2} vary on a
/// scale comparable to the grid spacing and their finite differences say
/// nothing about the identity.
pub fn transport_identity_residual(
    surface: &SimpleSurface,
    atlas: &ChartAtlas,
    grid: &PolarGrid,
    sigma: f64,
    beta: Option<&AngularBump>,
    psi_min: f64,
) -> f64 {
    let a_field: Vec<f64> = (0..grid.len())
        .map(|c| {
            let b = match beta {
                Some(bump) => bump.eval(atlas.theta[c]).0,
                None => 1.0,
            };
            (-sigma * atlas.psi[c]).exp() / atlas.jacobian[c].sqrt() * b
        })
        .collect();
    let stiff = disk_stiffness(grid);
    let mut k_psi = vec![0.0; grid.len()];
    stiff.matvec(&atlas.psi, &mut k_psi);
    let mut res_sq = 0.0;
    let mut scale_sq = 0.0;
    for i in 1..grid.nr - 1 {
        for j in 0..grid.nphi {
            let idx = grid.idx(i, j);
            if atlas.psi[idx] < psi_min {
                continue;
            }
            let jm = grid.idx(i, (j + grid.nphi - 1) % grid.nphi);
            let jp = grid.idx(i, (j + 1) % grid.nphi);
            let im = grid.idx(i - 1, j);
            let ip = grid.idx(i + 1, j);
            let r = grid.r_center(i);
            let phi = grid.phi_center(j);
            let grad = |f: &[f64]| -> (f64, f64) {
                let fr = (f[ip] - f[im]) / (2.0 * grid.dr);
                let fp = (f[jp] - f[jm]) / (2.0 * grid.dphi * r);
                (phi.cos() * fr - phi.sin() * fp, phi.sin() * fr + phi.cos() * fp)
            };
            let (px, py) = grid.cell_xy(i, j);
            let e2l = surface.e2l(px, py);
            let mass = e2l * r * grid.dr * grid.dphi;
            let (psix, psiy) = grad(&atlas.psi);
            let (ax, ay) = grad(&a_field);
            let lap_psi = -k_psi[idx] / mass;
            // the common factor i is dropped: all three terms are imaginary
            let res = 2.0 * sigma * a_field[idx]
                + 2.0 * (psix * ax + psiy * ay) / e2l
                + lap_psi * a_field[idx];
            res_sq += res * res * mass;
            let sc = (1.0 + 2.0 * sigma) * a_field[idx];
            scale_sq += sc * sc * mass;
        }
    }
    (res_sq / scale_sq.max(1e-300)).sqrt()
}

/// Worst relative defect of the chart identities on interior cells, by pure
/// finite differences on the polar grid (no chart data reused): the eikonal
/// identity e^{−2λ}|∇ψ|² = 1 and the transport identity
/// σG + ⟨∇ψ, ∇G⟩_{g₀} + ½(Δ_{g₀}ψ)G = 0. Cells with ψ < psi_min are
/// skipped; see `transport_identity_residual`.
pub struct ChartDefects {
    pub eikonal_max: f64,
    pub transport_max: f64,
}

pub fn chart_defects(
    surface: &SimpleSurface,
    atlas: &ChartAtlas,
    grid: &PolarGrid,
    sigma: f64,
    psi_min: f64,
) -> ChartDefects {
    let g: Vec<f64> = atlas
        .psi
        .iter()
        .zip(&atlas.jacobian)
        .map(|(&p, &j)| (-sigma * p).exp() / j.sqrt())
        .collect();
    let stiff = disk_stiffness(grid);
    let mut lap_psi = vec![0.0; grid.len()];
    stiff.matvec(&atlas.psi, &mut lap_psi);
    let mut eik = 0.0f64;
    let mut tra = 0.0f64;
    for i in 1..grid.nr - 1 {
        for j in 0..grid.nphi {
            let idx = grid.idx(i, j);
            if atlas.psi[idx] < psi_min {
                continue;
            }
            let jm = grid.idx(i, (j + grid.nphi - 1) % grid.nphi);
            let jp = grid.idx(i, (j + 1) % grid.nphi);
            let im = grid.idx(i - 1, j);
            let ip = grid.idx(i + 1, j);
            let r = grid.r_center(i);
            let phi = grid.phi_center(j);
            let grad = |f: &[f64]| -> (f64, f64) {
                let fr = (f[ip] - f[im]) / (2.0 * grid.dr);
                let fp = (f[jp] - f[jm]) / (2.0 * grid.dphi * r);
                (phi.cos() * fr - phi.sin() * fp, phi.sin() * fr + phi.cos() * fp)
            };
            let (px, py) = grid.cell_xy(i, j);
            let e2l = surface.e2l(px, py);
            let (psix, psiy) = grad(&atlas.psi);
            eik = eik.max(((psix * psix + psiy * psiy) / e2l - 1.0).abs());

            // FV Laplacian: Δ_{g₀}ψ = −(Kψ)_i / mass_i, mass = e^{2λ} r dr dφ
            let mass = e2l * r * grid.dr * grid.dphi;
            let lap = -lap_psi[idx] / mass;
            let (gx, gy) = grad(&g);
            let res = sigma * g[idx] + (psix * gx + psiy * gy) / e2l + 0.5 * lap * g[idx];
            tra = tra.max(res.abs() / (g[idx] * (sigma + 1.0)));
        }
    }
    ChartDefects { eikonal_max: eik, transport_max: tra }
}

/// Relative residual of (Δ_g + τ² − 2τ∂_s − q)v at a few slices, where v is
/// rebuilt in physical space and all derivatives are finite differences
/// (s-second differences across neighbouring slices, the FV Laplacian in x).
/// Cells on the two outermost rings are skipped since v does not vanish at
/// the rim. Normalised by τ²‖v‖ on the checked cells.
pub fn conjugated_residual_fd<Q>(
    disk: &DiskDirichlet,
    sol: &CgoSolution,
    q: Q,
    slices: &[usize],
) -> f64
where
    Q: Fn(f64, f64, f64) -> f64,
{
    let grid = &disk.grid;
    let stiff = disk_stiffness(grid);
    let ns = sol.remainder.ns;
    let ds = sol.remainder.ds();
    let tau = sol.tau;
    let centers = grid.centers();
    let mut worst = 0.0f64;
    for &m in slices {
        let mp = (m + 1) % ns;
        let mm = (m + ns - 1) % ns;
        let v0 = sol.slice(disk, m);
        let vp = sol.slice(disk, mp);
        let vm = sol.slice(disk, mm);
        // banded FV Laplacian applied to the complex slice
        let re: Vec<f64> = v0.iter().map(|z| z.re).collect();
        let im: Vec<f64> = v0.iter().map(|z| z.im).collect();
        let mut kre = vec![0.0; grid.len()];
        let mut kim = vec![0.0; grid.len()];
        stiff.matvec(&re, &mut kre);
        stiff.matvec(&im, &mut kim);
        let s = sol.remainder.s_center(m);
        let mut res_sq = 0.0;
        let mut scale_sq = 0.0;
        for i in 1..grid.nr - 2 {
            for j in 0..grid.nphi {
                let idx = grid.idx(i, j);
                let lap = -Complex64::new(kre[idx], kim[idx]) / disk.mass[idx];
                let dss = (vp[idx] - 2.0 * v0[idx] + vm[idx]) / (ds * ds);
                let dsv = (vp[idx] - vm[idx]) / (2.0 * ds);
                let (x, y) = centers[idx];
                let lv = lap + dss + tau * tau * v0[idx]
                    - 2.0 * tau * dsv
                    - q(x, y, s) * v0[idx];
                res_sq += lv.norm_sqr() * disk.mass[idx];
                scale_sq += (tau * tau * v0[idx]).norm_sqr() * disk.mass[idx];
            }
        }
        worst = worst.max((res_sq / scale_sq.max(1e-300)).sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chart_fields, DEFAULT_STEP};
    use std::sync::OnceLock;

    fn bump_surface() -> SimpleSurface {
        SimpleSurface::from_expr("0.1*exp(-((x-0.2)^2+y^2)/0.09)", 64).unwrap()
    }

    /// Compactly supported bump of height h: a disk bump of radius w_xy
    /// around (cx, cy) times an axial bump of half-width w_s around cs.
    fn bump_q(
        h: f64,
        cx: f64,
        cy: f64,
        w_xy: f64,
        cs: f64,
        w_s: f64,
    ) -> impl Fn(f64, f64, f64) -> f64 {
        move |x: f64, y: f64, s: f64| {
            let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (w_xy * w_xy);
            let z2 = (s - cs).powi(2) / (w_s * w_s);
            if d2 < 1.0 && z2 < 1.0 {
                h * (2.0 - 1.0 / (1.0 - d2) - 1.0 / (1.0 - z2)).exp()
            } else {
                0.0
            }
        }
    }

    fn euclid_disk() -> &'static DiskDirichlet {
        static DISK: OnceLock<DiskDirichlet> = OnceLock::new();
        DISK.get_or_init(|| {
            let surface = SimpleSurface::euclidean(32);
            DiskDirichlet::build(&surface, 40, 80, 360, 7).unwrap()
        })
    }

    fn euclid_atlas() -> &'static ChartAtlas {
        static ATLAS: OnceLock<ChartAtlas> = OnceLock::new();
        ATLAS.get_or_init(|| {
            let surface = SimpleSurface::euclidean(32);
            let disk = euclid_disk();
            ChartAtlas::build(&surface, ChartCenter::exterior(0.3, 0.8), &disk.grid, 1024, 1e-3)
                .unwrap()
        })
    }

    #[test]
    fn euclidean_amplitude_defect_is_quarter_inverse_square() {
        let surface = SimpleSurface::euclidean(32);
        let grid = PolarGrid::new(32, 64);
        let atlas =
            ChartAtlas::build(&surface, ChartCenter::exterior(0.7, 0.08), &grid, 1024, 1e-3)
                .unwrap();
        let mut worst = 0.0f64;
        for idx in 0..grid.len() {
            assert!(atlas.valid[idx], "cell {idx} must be covered by the chart");
            let exact = 0.25 / (atlas.psi[idx] * atlas.psi[idx]);
            worst = worst.max((atlas.bracket[idx] - exact).abs() / exact);
        }
        assert!(worst < 3e-6, "flat amplitude defect should be 1/(4ρ²), got rel err {worst:.2e}");
    }

    #[test]
    fn atlas_agrees_with_shooting_chart() {
        let surface = bump_surface();
        let grid = PolarGrid::new(24, 48);
        let center = ChartCenter::exterior(2.1, 0.08);
        let atlas = ChartAtlas::build(&surface, center, &grid, 1024, 1e-3).unwrap();
        let pts: Vec<(f64, f64)> = grid.centers().iter().step_by(37).copied().collect();
        let fields = chart_fields(&surface, center, &pts, DEFAULT_STEP).unwrap();
        let mut w_psi = 0.0f64;
        let mut w_theta = 0.0f64;
        let mut w_jac = 0.0f64;
        for (k, _) in pts.iter().enumerate() {
            let idx = k * 37;
            if !fields.valid[k] {
                continue;
            }
            w_psi = w_psi.max((atlas.psi[idx] - fields.psi[k]).abs());
            w_theta = w_theta.max((atlas.theta[idx] - fields.theta[k]).abs());
            w_jac = w_jac.max((atlas.jacobian[idx] - fields.jacobian[k]).abs());
        }
        // measured on this configuration: 2.5e-6 / 5.0e-6 / 3.8e-5 (the
        // Jacobian inherits the θ* inversion error times dJ/dθ)
        assert!(w_psi < 1e-5, "distance mismatch vs shooting: {w_psi:.2e}");
        assert!(w_theta < 2e-5, "angle mismatch vs shooting: {w_theta:.2e}");
        assert!(w_jac < 2e-4, "Jacobian mismatch vs shooting: {w_jac:.2e}");
    }

    #[test]
    fn amplitude_defect_converges_in_fan_resolution() {
        let surface = bump_surface();
        let grid = PolarGrid::new(20, 40);
        let center = ChartCenter::exterior(0.0, 0.08);
        let coarse = ChartAtlas::build(&surface, center, &grid, 512, 2e-3).unwrap();
        let fine = ChartAtlas::build(&surface, center, &grid, 1024, 2e-3).unwrap();
        let finest = ChartAtlas::build(&surface, center, &grid, 2048, 2e-3).unwrap();
        let diff = |a: &ChartAtlas, b: &ChartAtlas| -> f64 {
            a.bracket
                .iter()
                .zip(&b.bracket)
                .map(|(u, v)| (u - v).abs() / (1.0 + v.abs()))
                .fold(0.0f64, f64::max)
        };
        // measured: 7.9e-4 at 512 rays, 1.4e-4 at 1024 (ratio 5.7)
        let d_coarse = diff(&coarse, &finest);
        let d_fine = diff(&fine, &finest);
        assert!(d_coarse < 2e-3, "coarse fan defect error too large: {d_coarse:.2e}");
        assert!(
            d_fine < 0.35 * d_coarse,
            "defect should converge with fan resolution: {d_fine:.2e} vs {d_coarse:.2e}"
        );
    }

    #[test]
    fn angular_bump_derivatives_match_finite_differences() {
        let bump = AngularBump::DEFAULT;
        let h = 1e-5;
        for &theta in &[0.9, 1.3, std::f64::consts::FRAC_PI_2, 2.0, 2.3] {
            let (b, b1, b2) = bump.eval(theta);
            let (bp, _, _) = bump.eval(theta + h);
            let (bm, _, _) = bump.eval(theta - h);
            let fd1 = (bp - bm) / (2.0 * h);
            let fd2 = (bp - 2.0 * b + bm) / (h * h);
            assert!((b1 - fd1).abs() < 1e-6 * (1.0 + b1.abs()), "β′ mismatch at θ = {theta}");
            assert!((b2 - fd2).abs() < 1e-3 * (1.0 + b2.abs()), "β″ mismatch at θ = {theta}");
        }
        // compact support: zero value and derivatives at and beyond the edge
        for &theta in &[std::f64::consts::FRAC_PI_4, 0.2, 2.5, 3.0] {
            let (b, b1, b2) = bump.eval(theta);
            assert_eq!((b, b1, b2), (0.0, 0.0, 0.0), "β must vanish outside the support");
        }
    }

    #[test]
    fn chart_identities_hold_under_finite_differences() {
        let surface = bump_surface();
        let disk = euclid_disk();
        let center = ChartCenter::exterior(0.3, 0.08);
        let atlas = ChartAtlas::build(&surface, center, &disk.grid, 1024, 1e-3).unwrap();
        let defects = chart_defects(&surface, &atlas, &disk.grid, 1.5, 0.5);
        // measured on this grid: eikonal 7.73e-3, transport 1.75e-2
        assert!(
            defects.eikonal_max < 1.5e-2,
            "eikonal identity defect {:.2e} too large",
            defects.eikonal_max
        );
        assert!(
            defects.transport_max < 3e-2,
            "transport identity defect {:.2e} too large",
            defects.transport_max
        );
    }

    #[test]
    fn transport_identity_residual_halves_under_grid_refinement() {
        let surface = bump_surface();
        let center = ChartCenter::exterior(0.3, 0.08);
        let g40 = PolarGrid::new(40, 80);
        let g80 = PolarGrid::new(80, 160);
        let a40 = ChartAtlas::build(&surface, center, &g40, 1024, 1e-3).unwrap();
        let a80 = ChartAtlas::build(&surface, center, &g80, 2048, 1e-3).unwrap();
        // measured: with the bump 3.76e-2 → 9.79e-3 (ratio 3.84), flat
        // σ = 0 profile 9.98e-3 → 5.21e-3 (ratio 1.92)
        for (beta, sigma) in [(Some(&AngularBump::DEFAULT), 1.5), (None, 0.0)] {
            let coarse = transport_identity_residual(&surface, &a40, &g40, sigma, beta, 0.5);
            let fine = transport_identity_residual(&surface, &a80, &g80, sigma, beta, 0.5);
            assert!(fine < 1.5e-2, "refined transport residual {fine:.2e} at σ = {sigma}");
            assert!(
                coarse / fine > 1.8,
                "transport residual should at least halve: {coarse:.2e} → {fine:.2e}"
            );
        }
    }

    #[test]
    fn amplitude_factor_is_holomorphic_on_carrier_bins() {
        let atlas = euclid_atlas();
        // carrier σ = π/2 sits exactly on an FFT bin; measured 2.1e-14
        let sigma = std::f64::consts::PI * 2.0 / 4.0;
        let on_bin = transport_factor_residual(atlas, Some(&AngularBump::DEFAULT), sigma, 4.0, 128);
        assert!(on_bin < 1e-10, "carrier-line transport residual {on_bin:.2e}");
        // σ = 0 has no s-dependence at all
        let flat = transport_factor_residual(atlas, None, 0.0, 4.0, 128);
        assert_eq!(flat, 0.0, "σ = 0 factor must be exactly s-independent");
    }

    #[test]
    fn zero_potential_solution_is_a_single_harmonic() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let cfg = CgoConfig::new(0.3, 2, 6.0);
        let sol = build_cgo(disk, atlas, |_, _, _| 0.0, &cfg).unwrap();
        assert!(sol.remainder.iterations <= 2, "no iteration needed without a potential");
        assert!(
            sol.remainder.residual_rel < 1e-12,
            "diagonal solve residual {:.2e}",
            sol.remainder.residual_rel
        );
        // every bin except the σ harmonic is empty
        let sigma_bin = cfg.sigma_index;
        let mut off = 0.0f64;
        let mut on = 0.0f64;
        for track in &sol.remainder.w_hat {
            for (n, z) in track.iter().enumerate() {
                if n == sigma_bin {
                    on += z.norm_sqr();
                } else {
                    off += z.norm_sqr();
                }
            }
        }
        assert!(
            off.sqrt() < 1e-10 * on.sqrt().max(1e-300),
            "side bins should be empty: off {off:.3e} vs on {on:.3e}"
        );
        // the resolvent bound on the σ line
        let bound = sol.remainder.f_hat_l2 / (2.0 * sol.tau * sol.sigma);
        let norm = sol.remainder.norms.l2;
        assert!(
            norm <= bound * (1.0 + 1e-9),
            "|D| ≥ 2τσ must bound the remainder: {norm:.3e} vs {bound:.3e}"
        );
    }

    #[test]
    fn potential_coupling_contracts() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let q = bump_q(1.0, -0.2, 0.1, 0.5, -0.3, 0.6);
        let cfg = CgoConfig::new(0.3, 2, 5.0);
        let sol = build_cgo(disk, atlas, &q, &cfg).unwrap();
        assert!(sol.remainder.iterations < 30, "fixed point too slow: {}", sol.remainder.iterations);
        assert!(
            sol.remainder.contraction < 0.6,
            "coupling should contract, ratio {}",
            sol.remainder.contraction
        );
        assert!(sol.remainder.residual_rel < 1e-9, "final residual {:.2e}", sol.remainder.residual_rel);
    }

    #[test]
    fn weighted_norm_routes_agree() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let q = bump_q(0.7, 0.0, 0.2, 0.4, 0.0, 0.5);
        let cfg = CgoConfig::new(0.3, 2, 7.0);
        let sol = build_cgo(disk, atlas, &q, &cfg).unwrap();
        for delta in [0.0, 0.75, 1.5] {
            let via_modes = sol.remainder.weighted_l2_modes(delta);
            let via_cells = sol.remainder.weighted_l2_physical(disk, delta);
            let rel = (via_modes - via_cells).abs() / via_modes;
            assert!(
                rel < 1e-8,
                "weighted L² routes disagree at δ = {delta}: {via_modes:.6e} vs {via_cells:.6e}"
            );
        }
        // the box-norm builder agrees with the Parseval route at δ = 1
        let direct = sol.remainder.weighted_l2_modes(1.0);
        assert!(
            (direct - sol.remainder.norms.l2_weighted).abs() < 1e-10 * direct,
            "stored weighted norm should match the track sum"
        );
    }

    #[test]
    fn carleman_matches_single_mode_symbol_division() {
        let disk = euclid_disk();
        let k_star = 25usize;
        let cfg = CarlemanConfig::new(12.0);
        let env = |s: f64| (-3.0 * (s - 0.2) * (s - 0.2)).exp();
        let f_slices: Vec<Vec<Complex64>> = (0..cfg.ns)
            .map(|m| {
                let e = env(cfg.s_center(m));
                disk.modes[k_star].iter().map(|&p| Complex64::new(e * p, 0.0)).collect()
            })
            .collect();
        let sol = carleman_solve(disk, &f_slices, |_, _, _| 0.0, &cfg).unwrap();
        // divide the envelope spectrum by the symbol directly
        let mut env_hat: Vec<Complex64> =
            (0..cfg.ns).map(|m| Complex64::new(env(cfg.s_center(m)), 0.0)).collect();
        let mut planner = FftPlanner::<f64>::new();
        planner.plan_fft_forward(cfg.ns).process(&mut env_hat);
        let lam = disk.eigenvalues[k_star];
        let mut worst = 0.0f64;
        for (n, e) in env_hat.iter().enumerate() {
            let xi = xi_of_bin(n, cfg.ns, cfg.s_half);
            let d = Complex64::new(sol.tau * sol.tau - lam - xi * xi, -2.0 * sol.tau * xi);
            let direct = e / (cfg.ns as f64) / d;
            worst = worst.max((sol.w_hat[k_star][n] - direct).norm());
        }
        // measured: 2.9e-17 on the forced mode, 1.6e-17 elsewhere
        assert!(worst < 1e-6, "single-mode solve should equal symbol division, off by {worst:.2e}");
        let mut off = 0.0f64;
        for (k, row) in sol.w_hat.iter().enumerate() {
            if k != k_star {
                off = off.max(row.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        assert!(off < 1e-12, "unforced modes must stay empty, worst {off:.2e}");
    }

    #[test]
    fn zero_forcing_yields_zero_remainder() {
        let disk = euclid_disk();
        let cfg = CarlemanConfig::new(9.0);
        let zero: Vec<Vec<Complex64>> =
            (0..cfg.ns).map(|_| vec![Complex64::new(0.0, 0.0); disk.grid.len()]).collect();
        let sol =
            carleman_solve(disk, &zero, bump_q(0.5, 0.0, 0.0, 0.3, 0.0, 0.5), &cfg).unwrap();
        assert_eq!(sol.norms.l2, 0.0, "zero forcing must give the zero solution exactly");
        assert!(sol.iterations <= 2, "zero solve should converge immediately");
    }

    #[test]
    fn potential_outside_support_window_is_rejected() {
        let disk = euclid_disk();
        let cfg = CarlemanConfig::new(9.0);
        let zero: Vec<Vec<Complex64>> =
            (0..cfg.ns).map(|_| vec![Complex64::new(0.0, 0.0); disk.grid.len()]).collect();
        let err = carleman_solve(disk, &zero, bump_q(0.5, 0.0, 0.0, 0.3, 3.0, 0.5), &cfg)
            .err()
            .expect("a potential reaching into the padding must be refused");
        assert!(
            matches!(err, CgoError::BadConfig(_)),
            "expected a configuration error, got {err}"
        );
    }

    #[test]
    fn fixed_forcing_remainder_decays_first_order() {
        let disk = euclid_disk();
        let fq = bump_q(1.0, 0.1, -0.1, 0.5, 0.0, 0.8);
        let taus = [8.0f64, 16.0, 32.0, 64.0];
        let mut l2 = Vec::new();
        let mut l2w = Vec::new();
        for &tau in &taus {
            let cfg = CarlemanConfig::new(tau);
            let f_slices: Vec<Vec<Complex64>> = (0..cfg.ns)
                .map(|m| {
                    let s = cfg.s_center(m);
                    disk.grid
                        .centers()
                        .iter()
                        .map(|&(x, y)| Complex64::new(fq(x, y, s), 0.0))
                        .collect()
                })
                .collect();
            let sol = carleman_solve(disk, &f_slices, |_, _, _| 0.0, &cfg).unwrap();
            l2.push(sol.norms.l2);
            l2w.push(sol.norms.l2_weighted);
        }
        let logt: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
        let slope = |ys: &[f64]| {
            let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
            let n = 4.0;
            let sx: f64 = logt.iter().sum();
            let sy: f64 = ly.iter().sum();
            let sxy: f64 = logt.iter().zip(&ly).map(|(x, y)| x * y).sum();
            let sxx: f64 = logt.iter().map(|x| x * x).sum();
            (n * sxy - sx * sy) / (n * sxx - sx * sx)
        };
        // measured: -2.263 plain, -2.200 weighted (the forcing has little
        // spectral content near the high-τ shells, so decay beats 1/τ)
        let s_plain = slope(&l2);
        let s_weighted = slope(&l2w);
        assert!(s_plain <= -0.9, "plain L² slope {s_plain:.3} above the first-order rate");
        assert!(s_weighted <= -0.9, "weighted L² slope {s_weighted:.3} above the first-order rate");
    }

    #[test]
    fn fixed_point_contraction_obeys_admissibility_bound() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let q = bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85);
        // measured τρ/‖q‖: 0.045, 0.033, 0.059, 0.100
        for tau in [8.0, 11.3, 16.0, 22.6] {
            let cfg = CgoConfig::new(0.3, 2, tau);
            let sol = build_cgo(disk, atlas, &q, &cfg).unwrap();
            let tau_rho = sol.tau * sol.remainder.contraction;
            assert!(
                tau_rho <= ADMISSIBILITY_C0 * 0.5,
                "contraction τρ = {tau_rho:.4} above C₀‖q‖ at τ = {tau}"
            );
        }
    }

    #[test]
    fn pad_doubling_leaves_remainder_unchanged() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let q = bump_q(0.5, 0.82 * (2.2f64).cos(), 0.82 * (2.2f64).sin(), 0.1, 0.1, 0.85);
        let cfg_small = CgoConfig::new(0.3, 2, 16.0);
        let sol_small = build_cgo(disk, atlas, &q, &cfg_small).unwrap();
        // same σ on the doubled box: twice the bins, twice the σ index
        let mut cfg_wide = CgoConfig::new(0.3, 4, 16.0);
        cfg_wide.s_half = 8.0;
        cfg_wide.ns = 256;
        let sol_wide = build_cgo(disk, atlas, &q, &cfg_wide).unwrap();
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for m in 0..cfg_small.ns {
            let ws = sol_small.remainder.remainder_slice(disk, m);
            let ww = sol_wide.remainder.remainder_slice(disk, m + 64);
            for (a, b) in ws.iter().zip(&ww) {
                worst = worst.max((a - b).norm());
                scale = scale.max(a.norm());
            }
        }
        // measured: 3.5e-4 relative; the box truncation is not the
        // bottleneck of any asserted quantity
        assert!(
            worst / scale < 2e-3,
            "doubling the padding moved the remainder by {:.2e} relative",
            worst / scale
        );
    }

    #[test]
    fn decay_fit_demands_enough_points() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let cfg = CgoConfig::new(0.3, 2, 8.0);
        let err = remainder_decay_fit(disk, atlas, |_, _, _| 0.0, &cfg, &[8.0, 16.0, 32.0])
            .err()
            .expect("three τ values must be refused");
        assert!(matches!(err, CgoError::BadConfig(_)), "expected a configuration error, got {err}");
    }

    #[test]
    fn shallow_spectrum_fit_shows_decay_onset() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let cfg = CgoConfig::new(0.3, 2, 8.0);
        // the 360-mode spectrum tops out at λ ≈ 1269, so τ stays below 23
        // here; measured slope -0.844, fitted_c 0.182
        let fit =
            remainder_decay_fit(disk, atlas, |_, _, _| 0.0, &cfg, &[8.0, 11.3, 16.0, 22.6])
                .unwrap();
        assert!(fit.slope <= -0.75, "shallow-spectrum decay slope {:.3}", fit.slope);
        assert!(
            2.0 * fit.fitted_c <= ADMISSIBILITY_C0,
            "fitted first-order constant {:.3} escapes the frozen ceiling",
            fit.fitted_c
        );
    }

    #[test]
    fn tau_on_an_eigenvalue_is_nudged_into_the_gap() {
        let disk = euclid_disk();
        let atlas = euclid_atlas();
        let lam = disk.eigenvalues[40];
        let cfg = CgoConfig::new(0.3, 2, lam.sqrt());
        let sol = build_cgo(disk, atlas, |_, _, _| 0.0, &cfg).unwrap();
        assert!(sol.nudged, "τ² equal to an eigenvalue must be nudged");
        let t2 = sol.tau * sol.tau;
        let nearest = disk
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &l| m.min((t2 - l).abs()));
        assert!(
            nearest >= cfg.resonance_gap,
            "nudged τ² still too close to the spectrum: {nearest:.3e}"
        );
        assert!(sol.remainder.residual_rel < 1e-12);
    }

    #[test]
    fn symbol_on_sigma_line_scales_like_two_tau_sigma() {
        let disk = euclid_disk();
        let s_half = 4.0;
        let sigma = std::f64::consts::PI * 2.0 / s_half;
        for tau in [4.0, 8.0, 16.0, 28.0] {
            let (t, _) = nudge_tau(tau, &disk.eigenvalues, 0.5).unwrap();
            let min_line = disk
                .eigenvalues
                .iter()
                .map(|&lam| {
                    Complex64::new(t * t - lam - sigma * sigma, -2.0 * t * sigma).norm()
                })
                .fold(f64::INFINITY, f64::min);
            let ratio = min_line / (2.0 * t * sigma);
            assert!(
                (1.0..1.1).contains(&ratio),
                "worst symbol on the σ line should sit at 2τσ: ratio {ratio:.4} at τ {tau}"
            );
        }
    }

    #[test]
    fn curved_metric_solve_is_consistent() {
        let surface = bump_surface();
        let disk = DiskDirichlet::build(&surface, 32, 64, 220, 11).unwrap();
        let center = ChartCenter::exterior(0.3, 0.8);
        let atlas = ChartAtlas::build(&surface, center, &disk.grid, 1024, 1e-3).unwrap();
        let q = bump_q(0.8, 0.1, -0.15, 0.45, 0.2, 0.5);
        let mut cfg = CgoConfig::new(0.3, 2, 6.0);
        cfg.ns = 96;
        let sol = build_cgo(&disk, &atlas, &q, &cfg).unwrap();
        assert!(sol.remainder.residual_rel < 1e-9, "residual {:.2e}", sol.remainder.residual_rel);
        // coarse-grid reading (measured 4.84e-2); the resolved interior
        // residual bound lives in the fine-grid integration test
        let res = conjugated_residual_fd(&disk, &sol, &q, &[cfg.ns / 2]);
        assert!(res < 8e-2, "curved-metric residual too large: {res:.3e}");
        // measured 0.424 of the carrier-line resolvent cap
        let l2 = sol.remainder.norms.l2;
        let cap = sol.remainder.f_hat_l2 / (2.0 * sol.tau * sol.sigma);
        assert!(l2 <= cap * 1.05, "remainder {l2:.3e} above cap {cap:.3e}");
    }

    #[test]
    fn transport_identity_meets_contract_on_flat_cylinder() {
        let surface = SimpleSurface::euclidean(32);
        let center = ChartCenter::exterior(0.3, 0.8);
        let g64 = PolarGrid::new(64, 128);
        let g128 = PolarGrid::new(128, 256);
        let a64 = ChartAtlas::build(&surface, center, &g64, 2048, 1e-3).unwrap();
        let a128 = ChartAtlas::build(&surface, center, &g128, 8192, 1e-3).unwrap();
        // measured: 3.31e-3 at 128 angular nodes, 1.47e-3 doubled (ratio 2.26)
        let beta = Some(&AngularBump::DEFAULT);
        let sigma = std::f64::consts::PI * 2.0 / 4.0;
        let coarse = transport_identity_residual(&surface, &a64, &g64, sigma, beta, 0.5);
        let fine = transport_identity_residual(&surface, &a128, &g128, sigma, beta, 0.5);
        assert!(coarse < 1e-2, "transport identity residual {coarse:.2e} at 128 angular nodes");
        assert!(
            coarse / fine > 1.8,
            "transport residual should at least halve: {coarse:.2e} → {fine:.2e}"
        );
        // the flat σ = 0 profile stays small but its finite-difference error
        // is dominated by the near-axis cells, so no halving is claimed
        // (measured 1.04e-2 → 8.36e-3)
        let flat64 = transport_identity_residual(&surface, &a64, &g64, 0.0, None, 0.5);
        let flat128 = transport_identity_residual(&surface, &a128, &g128, 0.0, None, 0.5);
        assert!(flat64 < 1.5e-2, "flat-profile residual {flat64:.2e}");
        assert!(flat128 < 1e-2, "flat-profile residual {flat128:.2e} after refinement");
    }
}
