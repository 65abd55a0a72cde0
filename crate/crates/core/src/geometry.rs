//! Geodesics of a conformally Euclidean metric g₀ = e^{2λ}(dx² + dy²) on the
//! closed unit disk, with everything the ray transform needs: exit times,
//! Jacobi fields (simplicity checks), the influx fan ∂₊SM₀ with the Santaló
//! weight μ(ω, X) = -g₀(X, N₀), and boundary normal charts (ψ, θ) = (distance
//! from ω, shooting angle) built by geodesic shooting.
//!
//! The co-geodesic flow is integrated in Hamiltonian form
//!
//! ```text
//! H = ½ e^{-2λ} |p|²,   ẋ = e^{-2λ} p,   ṗ = (e^{-2λ}|p|²) ∇λ,
//! ```
//!
//! with classical RK4; the conserved 2H = 1 is the unit-speed monitor. The
//! scalar Jacobi equation J″ = -K J with the Gaussian curvature
//! K = -e^{-2λ} Δλ rides along in the same state vector, so conjugate points
//! (J → 0 beyond the start) are detected during tracing.

use crate::expr::{Expr, Jet2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("conformal factor out of bounds: {0}")]
    BadConformalFactor(String),
    #[error("geodesic exceeded T_max = {0:.3} without exiting")]
    TMaxExceeded(f64),
    #[error("unit-speed drift {0:.3e} exceeds tolerance {1:.1e}; reduce the step")]
    StepTooLarge(f64, f64),
    #[error("surface is not simple: {0}")]
    NonSimple(String),
    #[error("fan resolution too small: {0}")]
    BadResolution(String),
    #[error("start point ({0:.6}, {1:.6}) is outside the closed disk")]
    OutsideDisk(f64, f64),
    #[error("normal chart failed to converge at {failed} of {total} nodes")]
    ChartFailure { failed: usize, total: usize },
}

/// How λ is supplied: a closed-form expression or nodal values on a uniform
/// Cartesian grid over [-1, 1]² (bilinear interpolation, finite-difference
/// jets at the grid scale).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaField {
    Expr(Expr),
    Grid(Vec<Vec<f64>>),
}

/// Conformally Euclidean disk (M₀, e^{2λ}(dx² + dy²)).
#[derive(Clone, Debug)]
pub struct SimpleSurface {
    lambda: LambdaField,
    /// Base nodes-per-axis resolution; derived grids scale from this.
    pub grid_resolution: usize,
    sup_abs_lambda: f64,
}

/// Integrator defaults: RK4 step and the exit-time bisection tolerance.
pub const DEFAULT_STEP: f64 = 1e-3;
pub const EXIT_TOL: f64 = 1e-9;
const ENERGY_TOL: f64 = 1e-6;

/// Radius of the extended ball on which λ must stay valid; chart centers
/// for complex geometrical optics sit between r = 1 and this radius so the
/// transversal amplitude is smooth on the closed disk. Centers need room:
/// the amplitude defect grows like 1/(4ψ²) toward the center, so a center
/// hugging the rim plants a large spike in the remainder equation's
/// right-hand side just inside the boundary.
pub const EXTENDED_RADIUS: f64 = 1.85;

impl SimpleSurface {
    pub fn euclidean(grid_resolution: usize) -> Self {
        SimpleSurface {
            lambda: LambdaField::Expr(Expr::parse("0").unwrap()),
            grid_resolution,
            sup_abs_lambda: 0.0,
        }
    }

    pub fn from_expr(src: &str, grid_resolution: usize) -> Result<Self, GeoError> {
        let expr = Expr::parse(src)
            .map_err(|e| GeoError::BadConformalFactor(format!("lambda parse error: {e}")))?;
        Self::from_lambda(LambdaField::Expr(expr), grid_resolution)
    }

    pub fn from_lambda(lambda: LambdaField, grid_resolution: usize) -> Result<Self, GeoError> {
        let mut s = SimpleSurface { lambda, grid_resolution, sup_abs_lambda: 0.0 };
        let mut sup = 0.0f64;
        let n = 64;
        // validate on a box covering the extended ball used by exterior
        // chart centers, not just the unit disk
        let half = EXTENDED_RADIUS + 0.05;
        for i in 0..=n {
            for j in 0..=n {
                let x = -half + 2.0 * half * i as f64 / n as f64;
                let y = -half + 2.0 * half * j as f64 / n as f64;
                if x * x + y * y > EXTENDED_RADIUS * EXTENDED_RADIUS + 1e-12 {
                    continue;
                }
                let jet = s.lambda_jet(x, y);
                for v in [jet.v, jet.dx, jet.dy, jet.dxx, jet.dxy, jet.dyy] {
                    if !v.is_finite() {
                        return Err(GeoError::BadConformalFactor(format!(
                            "lambda jet not finite at ({x:.3}, {y:.3})"
                        )));
                    }
                }
                if jet.v.abs() > 50.0 || jet.dx.abs().max(jet.dy.abs()) > 50.0 {
                    return Err(GeoError::BadConformalFactor(format!(
                        "lambda or its gradient exceeds 50 at ({x:.3}, {y:.3})"
                    )));
                }
                sup = sup.max(jet.v.abs());
            }
        }
        s.sup_abs_lambda = sup;
        Ok(s)
    }

    pub fn lambda(&self, x: f64, y: f64) -> f64 {
        match &self.lambda {
            LambdaField::Expr(e) => e.eval(x, y),
            LambdaField::Grid(_) => self.lambda_jet(x, y).v,
        }
    }

    pub fn lambda_jet(&self, x: f64, y: f64) -> Jet2 {
        match &self.lambda {
            LambdaField::Expr(e) => e.eval_jet(x, y),
            LambdaField::Grid(values) => grid_jet(values, x, y),
        }
    }

    /// e^{2λ} at a point (the conformal weight of areas and of -Δ).
    pub fn e2l(&self, x: f64, y: f64) -> f64 {
        (2.0 * self.lambda(x, y)).exp()
    }

    pub fn sup_abs_lambda(&self) -> f64 {
        self.sup_abs_lambda
    }

    /// Exit-time ceiling: 4 · (Euclidean diameter) · e^{2 sup|λ|}.
    pub fn t_max(&self) -> f64 {
        self.t_max_for(1.0)
    }

    fn t_max_for(&self, r_exit: f64) -> f64 {
        8.0 * r_exit * (2.0 * self.sup_abs_lambda).exp()
    }

    /// g₀-unit vector at boundary angle `omega` pointing at angle `alpha`
    /// from the inward normal (α ∈ (-π/2, π/2), positive toward +tangent).
    pub fn boundary_direction(&self, omega: f64, alpha: f64) -> ([f64; 2], [f64; 2]) {
        self.circle_direction(omega, 1.0, std::f64::consts::FRAC_PI_2 - alpha)
    }

    /// Chart direction for the shooting angle θ ∈ (0, π) measured from the
    /// positively oriented boundary tangent; θ = π/2 - α.
    pub fn chart_direction(&self, omega: f64, theta: f64) -> ([f64; 2], [f64; 2]) {
        self.circle_direction(omega, 1.0, theta)
    }

    /// Start point and g₀-unit direction from the point at angle `omega` on
    /// the circle of the given radius, shooting at angle θ ∈ (0, π) from the
    /// positively oriented circle tangent (θ = π/2 points at the center).
    pub fn circle_direction(&self, omega: f64, radius: f64, theta: f64) -> ([f64; 2], [f64; 2]) {
        let (c, s) = (omega.cos(), omega.sin());
        let start = [radius * c, radius * s];
        let inward = [-c, -s];
        let tangent = [-s, c];
        let el = (-self.lambda(start[0], start[1])).exp();
        let dir = [
            el * (theta.cos() * tangent[0] + theta.sin() * inward[0]),
            el * (theta.cos() * tangent[1] + theta.sin() * inward[1]),
        ];
        (start, dir)
    }

    /// Geodesic curvature of the circle of the given radius must stay
    /// positive for strict convexity: κ_g = e^{-λ}(1/R + ∂_r λ).
    pub fn circle_convexity_margin(&self, radius: f64, n_probe: usize) -> f64 {
        let mut min_margin = f64::INFINITY;
        for i in 0..n_probe {
            let a = std::f64::consts::TAU * i as f64 / n_probe as f64;
            let (c, s) = (a.cos(), a.sin());
            let jet = self.lambda_jet(radius * c, radius * s);
            let dr = jet.dx * c + jet.dy * s;
            min_margin = min_margin.min((-jet.v).exp() * (1.0 / radius + dr));
        }
        min_margin
    }

    pub fn boundary_convexity_margin(&self, n_probe: usize) -> f64 {
        self.circle_convexity_margin(1.0, n_probe)
    }

    /// Probes a coarse fan of geodesics for conjugate points and checks the
    /// boundary is strictly convex.
    pub fn validate_simplicity(&self, n_omega: usize, n_dir: usize) -> Result<(), GeoError> {
        if self.boundary_convexity_margin(4 * n_omega) <= 0.0 {
            return Err(GeoError::NonSimple("boundary not strictly convex".into()));
        }
        for i in 0..n_omega {
            let omega = std::f64::consts::TAU * i as f64 / n_omega as f64;
            for j in 0..n_dir {
                let alpha = -1.4 + 2.8 * (j as f64 + 0.5) / n_dir as f64;
                let path = self.trace_from_boundary(omega, alpha, 2e-3)?;
                if let Some(t) = path.conjugate_time {
                    return Err(GeoError::NonSimple(format!(
                        "conjugate point at t = {t:.4} on the ray (ω = {omega:.3}, α = {alpha:.3})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn trace_from_boundary(
        &self,
        omega: f64,
        alpha: f64,
        step: f64,
    ) -> Result<GeodesicPath, GeoError> {
        let (start, dir) = self.boundary_direction(omega, alpha);
        self.trace(start, dir, step)
    }

    /// Integrates the unit-speed geodesic from `start` with g₀-unit initial
    /// direction `dir` until it exits the unit disk; the final sample sits
    /// on the boundary to within the bisection tolerance.
    pub fn trace(&self, start: [f64; 2], dir: [f64; 2], step: f64) -> Result<GeodesicPath, GeoError> {
        self.trace_ball(start, dir, step, 1.0)
    }

    /// Like `trace`, but with a configurable exit circle; the start may lie
    /// anywhere inside it (in particular outside the unit disk, as exterior
    /// chart centers do).
    pub fn trace_ball(
        &self,
        start: [f64; 2],
        dir: [f64; 2],
        step: f64,
        r_exit: f64,
    ) -> Result<GeodesicPath, GeoError> {
        let r0 = (start[0] * start[0] + start[1] * start[1]).sqrt();
        if r0 > r_exit + 1e-9 {
            return Err(GeoError::OutsideDisk(start[0], start[1]));
        }
        let r_exit2 = r_exit * r_exit;
        let e2l = self.e2l(start[0], start[1]);
        let mut state = State {
            x: start[0],
            y: start[1],
            px: e2l * dir[0],
            py: e2l * dir[1],
            jac: 0.0,
            djac: 1.0,
        };
        let t_max = self.t_max_for(r_exit);
        let mut t = 0.0;
        let mut samples = vec![self.sample_of(t, &state)];
        let mut drift_max = 0.0f64;
        let mut conjugate_time = None;
        let mut been_inside = r0 < r_exit - 1e-12;
        loop {
            let prev = state;
            let tprev = t;
            state = self.rk4(&state, step);
            t += step;
            let r2 = state.x * state.x + state.y * state.y;
            if been_inside && r2 > r_exit2 {
                // bisect the crossing inside the final step
                let (dt, exit_state) = self.bisect_exit(&prev, step, r_exit2);
                let t_exit = tprev + dt;
                samples.push(self.sample_of(t_exit, &exit_state));
                let drift = self.energy_drift(&exit_state);
                drift_max = drift_max.max(drift);
                if drift_max > ENERGY_TOL {
                    return Err(GeoError::StepTooLarge(drift_max, ENERGY_TOL));
                }
                if conjugate_time.is_none() && exit_state.jac <= 0.0 && t_exit > step {
                    conjugate_time = Some(t_exit);
                }
                return Ok(GeodesicPath {
                    samples,
                    exit_time: t_exit,
                    energy_drift: drift_max,
                    conjugate_time,
                });
            }
            if r2 < r_exit2 - 1e-12 {
                been_inside = true;
            }
            drift_max = drift_max.max(self.energy_drift(&state));
            if conjugate_time.is_none() && state.jac <= 0.0 && t > step {
                conjugate_time = Some(t);
            }
            samples.push(self.sample_of(t, &state));
            if t > t_max {
                return Err(GeoError::TMaxExceeded(t_max));
            }
        }
    }

    fn sample_of(&self, t: f64, s: &State) -> GeodesicSample {
        let e = (-2.0 * self.lambda(s.x, s.y)).exp();
        GeodesicSample {
            t,
            pos: [s.x, s.y],
            vel: [e * s.px, e * s.py],
            jacobi: s.jac,
            djacobi: s.djac,
        }
    }

    fn energy_drift(&self, s: &State) -> f64 {
        let e = (-2.0 * self.lambda(s.x, s.y)).exp();
        (e * (s.px * s.px + s.py * s.py) - 1.0).abs()
    }

    fn deriv(&self, s: &State) -> State {
        let jet = self.lambda_jet(s.x, s.y);
        let e = (-2.0 * jet.v).exp();
        let h2 = e * (s.px * s.px + s.py * s.py);
        // Gaussian curvature of a conformal metric: K = -e^{-2λ} Δλ
        let k = -e * jet.laplacian();
        State {
            x: e * s.px,
            y: e * s.py,
            px: jet.dx * h2,
            py: jet.dy * h2,
            jac: s.djac,
            djac: -k * s.jac,
        }
    }

    fn rk4(&self, s: &State, h: f64) -> State {
        let k1 = self.deriv(s);
        let k2 = self.deriv(&s.advanced(&k1, 0.5 * h));
        let k3 = self.deriv(&s.advanced(&k2, 0.5 * h));
        let k4 = self.deriv(&s.advanced(&k3, h));
        let mut out = *s;
        out.x += h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x);
        out.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
        out.px += h / 6.0 * (k1.px + 2.0 * k2.px + 2.0 * k3.px + k4.px);
        out.py += h / 6.0 * (k1.py + 2.0 * k2.py + 2.0 * k3.py + k4.py);
        out.jac += h / 6.0 * (k1.jac + 2.0 * k2.jac + 2.0 * k3.jac + k4.jac);
        out.djac += h / 6.0 * (k1.djac + 2.0 * k2.djac + 2.0 * k3.djac + k4.djac);
        out
    }

    fn bisect_exit(&self, inside: &State, step: f64, r_exit2: f64) -> (f64, State) {
        let mut lo = 0.0f64;
        let mut hi = step;
        let mut mid_state = *inside;
        // narrow dt until the position error |r² - R²| is inside EXIT_TOL
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            mid_state = self.rk4(inside, mid);
            let f = mid_state.x * mid_state.x + mid_state.y * mid_state.y - r_exit2;
            if f.abs() < EXIT_TOL {
                return (mid, mid_state);
            }
            if f > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        (0.5 * (lo + hi), mid_state)
    }
}

/// Value and finite-difference jet of a gridded λ given as nodal rows over
/// [-1, 1]² (row index = y, column index = x). Bilinear in the value, with
/// centered differences of the bilinear interpolant at the grid scale for
/// the derivatives; adequate because gridded inputs are smoothed data.
fn grid_jet(values: &[Vec<f64>], x: f64, y: f64) -> Jet2 {
    let n = values.len();
    assert!(n >= 2 && values.iter().all(|row| row.len() == n), "grid must be square");
    let h = 2.0 / (n - 1) as f64;
    let sample = |x: f64, y: f64| -> f64 {
        let fx = ((x + 1.0) / h).clamp(0.0, (n - 1) as f64 - 1e-12);
        let fy = ((y + 1.0) / h).clamp(0.0, (n - 1) as f64 - 1e-12);
        let i = fx as usize;
        let j = fy as usize;
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v00 = values[j][i];
        let v10 = values[j][i + 1];
        let v01 = values[j + 1][i];
        let v11 = values[j + 1][i + 1];
        v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty
            + v11 * tx * ty
    };
    let d = 0.5 * h;
    Jet2 {
        v: sample(x, y),
        dx: (sample(x + d, y) - sample(x - d, y)) / (2.0 * d),
        dy: (sample(x, y + d) - sample(x, y - d)) / (2.0 * d),
        dxx: (sample(x + d, y) - 2.0 * sample(x, y) + sample(x - d, y)) / (d * d),
        dyy: (sample(x, y + d) - 2.0 * sample(x, y) + sample(x, y - d)) / (d * d),
        dxy: (sample(x + d, y + d) - sample(x + d, y - d) - sample(x - d, y + d)
            + sample(x - d, y - d))
            / (4.0 * d * d),
    }
}

#[derive(Clone, Copy, Debug)]
struct State {
    x: f64,
    y: f64,
    px: f64,
    py: f64,
    jac: f64,
    djac: f64,
}

impl State {
    fn advanced(&self, d: &State, h: f64) -> State {
        State {
            x: self.x + h * d.x,
            y: self.y + h * d.y,
            px: self.px + h * d.px,
            py: self.py + h * d.py,
            jac: self.jac + h * d.jac,
            djac: self.djac + h * d.djac,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GeodesicSample {
    pub t: f64,
    pub pos: [f64; 2],
    /// g₀-unit tangent in Euclidean components.
    pub vel: [f64; 2],
    /// Scalar Jacobi field with J(0) = 0, J′(0) = 1.
    pub jacobi: f64,
    /// Derivative J′ along the ray (rides in the same integrator state).
    pub djacobi: f64,
}

#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    pub exit_time: f64,
    pub energy_drift: f64,
    pub conjugate_time: Option<f64>,
}

impl GeodesicPath {
    pub fn exit_point(&self) -> [f64; 2] {
        self.samples.last().unwrap().pos
    }

    pub fn exit_velocity(&self) -> [f64; 2] {
        self.samples.last().unwrap().vel
    }

    /// Position at parameter t by linear interpolation between RK samples.
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        match self.bracket(t) {
            None => self.samples.last().unwrap().pos,
            Some((a, b, w)) => [
                a.pos[0] * (1.0 - w) + b.pos[0] * w,
                a.pos[1] * (1.0 - w) + b.pos[1] * w,
            ],
        }
    }

    pub fn jacobi_at(&self, t: f64) -> f64 {
        match self.bracket(t) {
            None => self.samples.last().unwrap().jacobi,
            Some((a, b, w)) => a.jacobi * (1.0 - w) + b.jacobi * w,
        }
    }

    pub fn djacobi_at(&self, t: f64) -> f64 {
        match self.bracket(t) {
            None => self.samples.last().unwrap().djacobi,
            Some((a, b, w)) => a.djacobi * (1.0 - w) + b.djacobi * w,
        }
    }

    fn bracket(&self, t: f64) -> Option<(&GeodesicSample, &GeodesicSample, f64)> {
        if t <= 0.0 {
            return Some((&self.samples[0], &self.samples[0], 0.0));
        }
        if t >= self.exit_time {
            return None;
        }
        let idx = self
            .samples
            .binary_search_by(|s| s.t.partial_cmp(&t).unwrap())
            .unwrap_or_else(|e| e);
        let hi = idx.min(self.samples.len() - 1).max(1);
        let (a, b) = (&self.samples[hi - 1], &self.samples[hi]);
        let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        Some((a, b, w))
    }
}

// ---------------------------------------------------------------------------
// Influx fan ∂₊SM₀
// ---------------------------------------------------------------------------

/// One quadrature node of the influx boundary fan.
#[derive(Clone, Copy, Debug)]
pub struct FanNode {
    /// Boundary position as the Euclidean angle of ω on the unit circle.
    pub omega: f64,
    /// Direction angle from the inward normal, α ∈ (-α_max, α_max).
    pub alpha: f64,
    /// Quadrature weight for d(∂SM₀) = dS_ω dA_{g₀} (no μ included).
    pub weight: f64,
    /// Santaló weight μ = -g₀(X, N₀) = cos α.
    pub mu: f64,
}

/// Tensor-product quadrature over the influx boundary ∂₊SM₀ with the
/// near-tangential band μ ≤ δ_fan excluded.
#[derive(Clone, Debug)]
pub struct BoundaryFan {
    pub n_omega: usize,
    pub n_dir: usize,
    pub delta_fan: f64,
    pub alpha_max: f64,
    pub nodes: Vec<FanNode>,
}

impl BoundaryFan {
    pub fn build(
        surface: &SimpleSurface,
        n_omega: usize,
        n_dir: usize,
        delta_fan: f64,
    ) -> Result<Self, GeoError> {
        if n_dir < 4 || n_omega < 4 {
            return Err(GeoError::BadResolution(format!(
                "fan needs at least 4x4 nodes, got {n_omega}x{n_dir}"
            )));
        }
        if !(0.0..1.0).contains(&delta_fan) {
            return Err(GeoError::BadResolution(format!("delta_fan = {delta_fan} outside [0,1)")));
        }
        let alpha_max = delta_fan.acos();
        let dw = std::f64::consts::TAU / n_omega as f64;
        let da = 2.0 * alpha_max / n_dir as f64;
        let mut nodes = Vec::with_capacity(n_omega * n_dir);
        for i in 0..n_omega {
            let omega = (i as f64 + 0.5) * dw;
            let arc = surface.lambda(omega.cos(), omega.sin()).exp() * dw;
            for j in 0..n_dir {
                let alpha = -alpha_max + (j as f64 + 0.5) * da;
                nodes.push(FanNode { omega, alpha, weight: arc * da, mu: alpha.cos() });
            }
        }
        Ok(BoundaryFan { n_omega, n_dir, delta_fan, alpha_max, nodes })
    }

    pub fn node_index(&self, i_omega: usize, j_dir: usize) -> usize {
        i_omega * self.n_dir + j_dir
    }

    /// ∫_{∂₊SM₀} μ d(∂SM₀); tends to 4π on the Euclidean disk as δ_fan → 0.
    pub fn total_santalo_measure(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight * n.mu).sum()
    }
}

// ---------------------------------------------------------------------------
// Boundary normal chart by geodesic shooting
// ---------------------------------------------------------------------------

/// Where a normal chart is centered: a point at `radius`·(cos ω, sin ω).
/// Boundary charts use radius 1; complex-geometrical-optics charts push the
/// center outside the disk so the amplitude is smooth on all of M₀, and
/// their geodesics run in the extended ball.
#[derive(Clone, Copy, Debug)]
pub struct ChartCenter {
    pub omega: f64,
    pub radius: f64,
    pub r_exit: f64,
}

impl ChartCenter {
    pub fn boundary(omega: f64) -> Self {
        ChartCenter { omega, radius: 1.0, r_exit: 1.0 }
    }

    pub fn exterior(omega: f64, offset: f64) -> Self {
        ChartCenter { omega, radius: 1.0 + offset, r_exit: EXTENDED_RADIUS }
    }

    pub fn xy(&self) -> [f64; 2] {
        [self.radius * self.omega.cos(), self.radius * self.omega.sin()]
    }
}

/// Per-node chart data for the normal coordinates centered at ω: geodesic
/// distance ψ, shooting angle θ ∈ (0, π), and the polar Jacobian J with its
/// radial derivative (so |g|^{1/4} = √J in chart coordinates).
#[derive(Clone, Debug)]
pub struct ChartFields {
    pub center: ChartCenter,
    pub psi: Vec<f64>,
    pub theta: Vec<f64>,
    pub jacobian: Vec<f64>,
    pub djacobian: Vec<f64>,
    /// False where shooting failed to converge (cut locus or out of reach).
    pub valid: Vec<bool>,
}

/// Shooting-based inverse of the exponential map at the chart center over a
/// list of target points. A reference fan seeds the angle; secant iterations
/// on the signed lateral miss refine it to |miss| < 10⁻⁹.
pub fn chart_fields(
    surface: &SimpleSurface,
    center: ChartCenter,
    points: &[(f64, f64)],
    step: f64,
) -> Result<ChartFields, GeoError> {
    let n_ref = 384;
    let mut ref_rays = Vec::with_capacity(n_ref);
    for k in 0..n_ref {
        let theta = std::f64::consts::PI * (k as f64 + 0.5) / n_ref as f64;
        let (start, dir) = surface.circle_direction(center.omega, center.radius, theta);
        ref_rays.push((theta, surface.trace_ball(start, dir, step.max(2e-3), center.r_exit)?));
    }
    let mut psi = vec![0.0; points.len()];
    let mut theta_out = vec![0.0; points.len()];
    let mut jac = vec![0.0; points.len()];
    let mut djac = vec![0.0; points.len()];
    let mut valid = vec![false; points.len()];
    let mut failed = 0usize;
    for (idx, &(px, py)) in points.iter().enumerate() {
        if px * px + py * py >= center.r_exit * center.r_exit {
            failed += 1;
            continue;
        }
        // seed from the reference fan: ray with the smallest lateral miss
        let mut best = (f64::INFINITY, 0usize);
        for (k, (_, ray)) in ref_rays.iter().enumerate() {
            let d = closest_approach(ray, px, py).0;
            if d < best.0 {
                best = (d, k);
            }
        }
        let mut th0 = ref_rays[best.1].0;
        let mut m0 = miss_of(surface, center, th0, px, py, step);
        let dth = std::f64::consts::PI / n_ref as f64;
        let mut th1 = (th0 + dth * m0.0.signum()).clamp(1e-6, std::f64::consts::PI - 1e-6);
        let mut m1 = miss_of(surface, center, th1, px, py, step);
        let mut converged = false;
        for _ in 0..16 {
            if m1.0.abs() < 1e-9 {
                converged = true;
                break;
            }
            let denom = m1.0 - m0.0;
            if denom.abs() < 1e-300 {
                break;
            }
            let next = (th1 - m1.0 * (th1 - th0) / denom)
                .clamp(1e-7, std::f64::consts::PI - 1e-7);
            th0 = th1;
            m0 = m1;
            th1 = next;
            m1 = miss_of(surface, center, th1, px, py, step);
        }
        if converged || m1.0.abs() < 1e-7 {
            psi[idx] = m1.1;
            theta_out[idx] = th1;
            jac[idx] = m1.2;
            djac[idx] = m1.3;
            valid[idx] = true;
        } else {
            failed += 1;
        }
    }
    if failed * 10 > points.len() {
        return Err(GeoError::ChartFailure { failed, total: points.len() });
    }
    Ok(ChartFields { center, psi, theta: theta_out, jacobian: jac, djacobian: djac, valid })
}

/// (distance at closest approach, arclength there, Jacobi there, signed miss)
pub(crate) fn closest_approach(ray: &GeodesicPath, px: f64, py: f64) -> (f64, f64, f64, f64) {
    let mut best_d2 = f64::INFINITY;
    let mut best_k = 0usize;
    for (k, s) in ray.samples.iter().enumerate() {
        let dx = px - s.pos[0];
        let dy = py - s.pos[1];
        let d2 = dx * dx + dy * dy;
        if d2 < best_d2 {
            best_d2 = d2;
            best_k = k;
        }
    }
    let s = &ray.samples[best_k];
    let dx = px - s.pos[0];
    let dy = py - s.pos[1];
    // project the offset on the unit velocity to slide along the ray
    let vnorm = (s.vel[0] * s.vel[0] + s.vel[1] * s.vel[1]).sqrt();
    let vx = s.vel[0] / vnorm;
    let vy = s.vel[1] / vnorm;
    let along = dx * vx + dy * vy;
    let cross = vx * dy - vy * dx;
    // arclength correction: dt = along / |γ̇|_euclid, and |γ̇| = e^{-λ} vnorm
    let dt = along / vnorm;
    let t_star = (s.t + dt).max(0.0);
    (cross.abs(), t_star, ray.jacobi_at(t_star), cross)
}

/// (signed miss, arclength, J, J′) of the ray at shooting angle θ.
fn miss_of(
    surface: &SimpleSurface,
    center: ChartCenter,
    theta: f64,
    px: f64,
    py: f64,
    step: f64,
) -> (f64, f64, f64, f64) {
    let (start, dir) = surface.circle_direction(center.omega, center.radius, theta);
    let ray = surface
        .trace_ball(start, dir, step, center.r_exit)
        .expect("chart ray must exit");
    let (_, t_star, jac, signed) = closest_approach(&ray, px, py);
    (signed, t_star, jac, ray.djacobi_at(t_star))
}

// ---------------------------------------------------------------------------
// Forward polar chart (ρ, θ) ↦ exp_ω(ρ X(θ))
// ---------------------------------------------------------------------------

/// Polar normal chart around a chart center: positions and √J on a (ρ, θ)
/// product grid; cells outside the unit disk or past their ray are masked.
#[derive(Clone, Debug)]
pub struct PolarChart {
    pub center: ChartCenter,
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub jacobian_sqrt: Vec<f64>,
    pub inside: Vec<bool>,
}

impl PolarChart {
    pub fn build(
        surface: &SimpleSurface,
        center: ChartCenter,
        n_rho: usize,
        n_theta: usize,
        rho_max: f64,
        step: f64,
    ) -> Result<Self, GeoError> {
        let rho: Vec<f64> = (0..n_rho).map(|i| rho_max * (i as f64 + 0.5) / n_rho as f64).collect();
        let theta: Vec<f64> =
            (0..n_theta).map(|j| std::f64::consts::PI * (j as f64 + 0.5) / n_theta as f64).collect();
        let mut positions = vec![[0.0; 2]; n_rho * n_theta];
        let mut jacobian_sqrt = vec![0.0; n_rho * n_theta];
        let mut inside = vec![false; n_rho * n_theta];
        for (j, &th) in theta.iter().enumerate() {
            let (start, dir) = surface.circle_direction(center.omega, center.radius, th);
            let ray = surface.trace_ball(start, dir, step, center.r_exit)?;
            if ray.conjugate_time.is_some() {
                return Err(GeoError::NonSimple(format!(
                    "conjugate point on the chart ray θ = {th:.4}"
                )));
            }
            for (i, &r) in rho.iter().enumerate() {
                if r < ray.exit_time {
                    let idx = i * n_theta + j;
                    let p = ray.position_at(r);
                    if p[0] * p[0] + p[1] * p[1] > 1.0 {
                        continue;
                    }
                    positions[idx] = p;
                    let jv = ray.jacobi_at(r);
                    if jv <= 0.0 {
                        return Err(GeoError::NonSimple(format!(
                            "polar Jacobian not positive at (ρ, θ) = ({r:.3}, {th:.3})"
                        )));
                    }
                    jacobian_sqrt[idx] = jv.sqrt();
                    inside[idx] = true;
                }
            }
        }
        Ok(PolarChart { center, rho, theta, positions, jacobian_sqrt, inside })
    }

    pub fn idx(&self, i_rho: usize, j_theta: usize) -> usize {
        i_rho * self.theta.len() + j_theta
    }
}
