//! Scratch probe for chart-atlas accuracy (not part of the test suite).

use calderon_core::cgo::ChartAtlas;
use calderon_core::geometry::{chart_fields, ChartCenter, SimpleSurface};
use calderon_core::grid::PolarGrid;

fn main() {
    let surface = SimpleSurface::from_expr("0.1*exp(-((x-0.2)^2+y^2)/0.09)", 64).unwrap();
    let grid = PolarGrid::new(24, 48);
    let center = ChartCenter::exterior(2.1, 0.08);
    let atlas = ChartAtlas::build(&surface, center, &grid, 1024, 1e-3).unwrap();
    let pts: Vec<(f64, f64)> = grid.centers().iter().step_by(37).copied().collect();
    let fields = chart_fields(&surface, center, &pts, 1e-3).unwrap();
    let mut worst = [(0.0f64, 0usize); 3];
    for (k, _) in pts.iter().enumerate() {
        let idx = k * 37;
        if !fields.valid[k] {
            continue;
        }
        let d = [
            (atlas.psi[idx] - fields.psi[k]).abs(),
            (atlas.theta[idx] - fields.theta[k]).abs(),
            (atlas.jacobian[idx] - fields.jacobian[k]).abs(),
        ];
        for (w, dv) in worst.iter_mut().zip(d) {
            if dv > w.0 {
                *w = (dv, idx);
            }
        }
    }
    let names = ["psi", "theta", "jac"];
    for (n, w) in names.iter().zip(worst) {
        let (i, j) = (w.1 / grid.nphi, w.1 % grid.nphi);
        let (x, y) = grid.cell_xy(i, j);
        println!(
            "{n}: worst {:.3e} at cell ({i},{j}) xy=({x:.3},{y:.3}) psi={:.4} theta={:.4}",
            w.0, atlas.psi[w.1], atlas.theta[w.1]
        );
    }

    // fan-resolution convergence of the amplitude defect
    let grid2 = PolarGrid::new(20, 40);
    let center2 = ChartCenter::exterior(0.0, 0.08);
    let coarse = ChartAtlas::build(&surface, center2, &grid2, 512, 2e-3).unwrap();
    let fine = ChartAtlas::build(&surface, center2, &grid2, 1024, 2e-3).unwrap();
    let finest = ChartAtlas::build(&surface, center2, &grid2, 2048, 2e-3).unwrap();
    let rel_diff = |a: &ChartAtlas, b: &ChartAtlas| -> (f64, usize) {
        let mut worst = (0.0f64, 0usize);
        for (idx, (u, v)) in a.bracket.iter().zip(&b.bracket).enumerate() {
            let d = (u - v).abs() / (1.0 + v.abs());
            if d > worst.0 {
                worst = (d, idx);
            }
        }
        worst
    };
    let (dc, ic) = rel_diff(&coarse, &finest);
    let (df, fi) = rel_diff(&fine, &finest);
    println!("bracket rel diff 512 vs 2048: {dc:.3e} at cell {ic} (psi {:.3})", finest.psi[ic]);
    println!("bracket rel diff 1024 vs 2048: {df:.3e} at cell {fi} (psi {:.3})", finest.psi[fi]);
}
