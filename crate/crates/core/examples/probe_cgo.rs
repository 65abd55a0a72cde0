//! Scratch measurements for the CGO module: prints every quantity needed to
//! pin test tolerances. Run with an argument: a | sigma0 | big.

use calderon_core::cgo::{
    build_cgo, carleman_solve, chart_defects, conjugated_residual_fd, nudge_tau,
    pair_product_max, remainder_decay_fit, transport_factor_residual,
    transport_identity_residual, xi_of_bin, AngularBump, CarlemanConfig, CgoConfig, ChartAtlas,
};
use calderon_core::geometry::{ChartCenter, SimpleSurface};
use calderon_core::grid::PolarGrid;
use calderon_core::spectral::DiskDirichlet;
use num_complex::Complex64;
use std::time::Instant;

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

fn main() {
    let phase = std::env::args().nth(1).unwrap_or_else(|| "a".into());
    match phase.as_str() {
        "a" => phase_a(),
        "off" => phase_offsets(),
        "qleak" => phase_qleak(),
        "sigma0" => phase_sigma0(),
        "big" => phase_big(),
        "h1" => phase_h1(),
        other => eprintln!("unknown phase {other}"),
    }
}

fn phase_qleak() {
    let euclid = SimpleSurface::euclidean(32);
    let disk = DiskDirichlet::build(&euclid, 40, 80, 360, 7).unwrap();
    let atlas =
        ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &disk.grid, 1024, 1e-3)
            .unwrap();
    let q = bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85);
    for (s_half, ns, sidx) in [(4.0f64, 128usize, 2usize), (8.0, 256, 4), (16.0, 512, 8)] {
        let mut cfg0 = CgoConfig::new(0.3, sidx, 8.0);
        cfg0.offset = 0.8;
        cfg0.s_half = s_half;
        cfg0.ns = ns;
        let taus = [8.0, 11.3, 16.0, 22.6];
        match remainder_decay_fit(&disk, &atlas, &q, &cfg0, &taus) {
            Ok(fit) => println!(
                "s_half {s_half:4.1}: q slope {:+.3}  h1 {:+.3}  c {:.4}  l2 {:.3e} {:.3e} {:.3e} {:.3e}  it {:?}",
                fit.slope, fit.h1_slope, fit.fitted_c, fit.l2[0], fit.l2[1], fit.l2[2], fit.l2[3], fit.iterations
            ),
            Err(e) => println!("s_half {s_half:4.1}: ERR {e}"),
        }
        match remainder_decay_fit(&disk, &atlas, |_, _, _| 0.0, &cfg0, &taus) {
            Ok(fit) => println!("           q=0 slope {:+.3}  l2 {:.3e} {:.3e} {:.3e} {:.3e}", fit.slope, fit.l2[0], fit.l2[1], fit.l2[2], fit.l2[3]),
            Err(e) => println!("           q=0 ERR {e}"),
        }
    }
}

fn phase_offsets() {
    let euclid = SimpleSurface::euclidean(32);
    let disk = DiskDirichlet::build(&euclid, 40, 80, 360, 7).unwrap();
    for offset in [0.6f64, 0.7, 0.8] {
        let atlas = ChartAtlas::build(
            &euclid,
            ChartCenter::exterior(0.3, offset),
            &disk.grid,
            1024,
            1e-3,
        )
        .unwrap();
        for sidx in [1usize, 2, 4] {
            let mut cfg0 = CgoConfig::new(0.3, sidx, 8.0);
            cfg0.offset = offset;
            let fit = remainder_decay_fit(&disk, &atlas, |_, _, _| 0.0, &cfg0, &[8.0, 11.3, 16.0, 22.6])
                .unwrap();
            println!(
                "offset {offset:.2} sidx {sidx}: slope {:+.3}  h1_slope {:+.3}  fitted_c {:.4}  f {:.3e}  l2 {:.3e} {:.3e} {:.3e} {:.3e}",
                fit.slope, fit.h1_slope, fit.fitted_c, fit.f_l2[0],
                fit.l2[0], fit.l2[1], fit.l2[2], fit.l2[3]
            );
        }
    }
}

fn phase_a() {
    let euclid = SimpleSurface::euclidean(32);
    let t0 = Instant::now();
    let disk = DiskDirichlet::build(&euclid, 40, 80, 360, 7).unwrap();
    println!("small eigensolve: {:.1?}, lam_max {:.2}", t0.elapsed(), disk.eigenvalues[359]);
    let atlas =
        ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &disk.grid, 1024, 1e-3)
            .unwrap();

    // transport factor residual (should be roundoff)
    let sigma = std::f64::consts::PI * 2.0 / 4.0;
    let tf = transport_factor_residual(&atlas, Some(&AngularBump::DEFAULT), sigma, 4.0, 128);
    println!("transport factor residual (on-bin sigma): {tf:.3e}");
    let tf0 = transport_factor_residual(&atlas, None, 0.0, 4.0, 128);
    println!("transport factor residual (sigma=0):      {tf0:.3e}");

    // full transport identity under grid halving, curved surface
    let bump = SimpleSurface::from_expr("0.1*exp(-((x-0.2)^2+y^2)/0.09)", 64).unwrap();
    let g40 = PolarGrid::new(40, 80);
    let g80 = PolarGrid::new(80, 160);
    let a40 = ChartAtlas::build(&bump, ChartCenter::exterior(0.3, 0.08), &g40, 1024, 1e-3).unwrap();
    let a80 = ChartAtlas::build(&bump, ChartCenter::exterior(0.3, 0.08), &g80, 2048, 1e-3).unwrap();
    for (tag, sg, be) in [
        ("sigma=1.5 beta", 1.5, true),
        ("sigma=0 flat", 0.0, false),
    ] {
        let bopt = if be { Some(&AngularBump::DEFAULT) } else { None };
        let r40 = transport_identity_residual(&bump, &a40, &g40, sg, bopt, 0.5);
        let r80 = transport_identity_residual(&bump, &a80, &g80, sg, bopt, 0.5);
        println!("transport identity {tag}: 40x80 {r40:.3e}  80x160 {r80:.3e}  ratio {:.2}", r40 / r80);
    }
    let d = chart_defects(&bump, &a40, &g40, 1.5, 0.5);
    println!("chart defects bump 40x80: eik {:.3e}  transport {:.3e}", d.eikonal_max, d.transport_max);

    // carleman oracle: one mode times a smooth envelope
    let k_star = 25usize;
    let cfg = CarlemanConfig::new(12.0);
    let env = |s: f64| (-3.0 * (s - 0.2) * (s - 0.2)).exp();
    let f_slices: Vec<Vec<Complex64>> = (0..cfg.ns)
        .map(|m| {
            let e = env(cfg.s_center(m));
            disk.modes[k_star].iter().map(|&p| Complex64::new(e * p, 0.0)).collect()
        })
        .collect();
    let sol = carleman_solve(&disk, &f_slices, |_, _, _| 0.0, &cfg).unwrap();
    // direct symbol division of the envelope spectrum
    let mut env_hat: Vec<Complex64> =
        (0..cfg.ns).map(|m| Complex64::new(env(cfg.s_center(m)), 0.0)).collect();
    let mut planner = rustfft::FftPlanner::<f64>::new();
    planner.plan_fft_forward(cfg.ns).process(&mut env_hat);
    let lam = disk.eigenvalues[k_star];
    let mut worst = 0.0f64;
    for (n, e) in env_hat.iter().enumerate() {
        let xi = xi_of_bin(n, cfg.ns, cfg.s_half);
        let d = Complex64::new(sol.tau * sol.tau - lam - xi * xi, -2.0 * sol.tau * xi);
        let direct = e / (cfg.ns as f64) / d;
        worst = worst.max((sol.w_hat[k_star][n] - direct).norm());
    }
    let mut off = 0.0f64;
    for (k, row) in sol.w_hat.iter().enumerate() {
        if k != k_star {
            off = off.max(row.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    println!("carleman oracle: on-mode worst {worst:.3e}  off-mode worst {off:.3e}");

    // fixed smooth f decay
    let fq = bump_q(1.0, 0.1, -0.1, 0.5, 0.0, 0.8);
    let mut l2s = Vec::new();
    let mut l2w = Vec::new();
    for tau in [8.0, 16.0, 32.0, 64.0] {
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
        let sol = carleman_solve(&disk, &f_slices, |_, _, _| 0.0, &cfg).unwrap();
        println!(
            "fixed-f tau {tau:5.1}: l2 {:.6e}  h1 {:.6e}  l2w {:.6e}  h1w {:.6e}  min|D| {:.2}  tau* {:.4} nudged {}",
            sol.norms.l2, sol.norms.h1, sol.norms.l2_weighted, sol.norms.h1_weighted, sol.min_symbol,
            sol.tau, sol.nudged
        );
        l2s.push(sol.norms.l2);
        l2w.push(sol.norms.l2_weighted);
    }
    let slope = |ys: &[f64]| {
        let xs = [8.0f64, 16.0, 32.0, 64.0];
        let n = 4.0;
        let sx: f64 = xs.iter().map(|x| x.ln()).sum();
        let sy: f64 = ys.iter().map(|y: &f64| y.ln()).sum();
        let sxx: f64 = xs.iter().map(|x| x.ln() * x.ln()).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x.ln() * y.ln()).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    println!("fixed-f slopes: l2 {:.3}  l2w {:.3}", slope(&l2s), slope(&l2w));

    // zero f
    let zero: Vec<Vec<Complex64>> =
        (0..128).map(|_| vec![Complex64::new(0.0, 0.0); disk.grid.len()]).collect();
    let sol = carleman_solve(&disk, &zero, bump_q(0.5, 0.0, 0.0, 0.3, 0.0, 0.5), &CarlemanConfig::new(9.0)).unwrap();
    println!("zero f: l2 {:.3e}  update {:.3e}  iters {}", sol.norms.l2, sol.final_update, sol.iterations);

    // q outside window must fail
    let r = carleman_solve(&disk, &zero, bump_q(0.5, 0.0, 0.0, 0.3, 3.0, 0.5), &CarlemanConfig::new(9.0));
    println!("q outside window: {:?}", r.err().map(|e| e.to_string()));

    // contraction scaling on overlapping and offset bumps
    for (tag, q) in [
        ("overlap w=0.4", bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85)),
        ("small  w=0.1", bump_q(0.5, 0.82 * (0.3f64 + 1.9).cos(), 0.82 * (0.3f64 + 1.9).sin(), 0.1, 0.1, 0.85)),
    ] {
        print!("contraction {tag}:");
        for tau in [8.0, 11.3, 16.0, 22.6] {
            let cfg = CgoConfig::new(0.3, 2, tau);
            match build_cgo(&disk, &atlas, &q, &cfg) {
                Ok(sol) => print!(
                    "  tau {tau}: rho {:.4} (tau*rho/h {:.3}) it {}",
                    sol.remainder.contraction,
                    tau * sol.remainder.contraction / 0.5,
                    sol.remainder.iterations
                ),
                Err(e) => print!("  tau {tau}: ERR {e}"),
            }
        }
        println!();
    }

    // sign-flip pair and the sigma=0 partner norms, q = 0
    for tau in [8.0, 16.0, 27.0] {
        let mut c1 = CgoConfig::new(0.3, 2, tau);
        c1.sign = -1.0;
        let v1 = build_cgo(&disk, &atlas, |_, _, _| 0.0, &c1).unwrap();
        let mut c2 = CgoConfig::new(0.3, 0, tau);
        c2.beta = None;
        let v2 = build_cgo(&disk, &atlas, |_, _, _| 0.0, &c2).unwrap();
        let prod = pair_product_max(&disk, &v1, &v2);
        println!(
            "pair tau {tau:4.0}: max|v1 v2| {prod:.4}  w1_l2 {:.4e}  w2_l2 {:.4e}  w2_l2w {:.4e}",
            v1.remainder.norms.l2, v2.remainder.norms.l2, v2.remainder.norms.l2_weighted
        );
    }

    // H1 constant stability, sigma = pi/2
    for tau in [8.0, 11.3, 16.0, 22.6] {
        let cfg = CgoConfig::new(0.3, 2, tau);
        let sol = build_cgo(&disk, &atlas, |_, _, _| 0.0, &cfg).unwrap();
        println!(
            "h1 ratio tau {tau:4.0}: h1/f {:.5}  l2*tau/f {:.5}",
            sol.remainder.norms.h1 / sol.f_l2,
            sol.tau * sol.remainder.norms.l2 / sol.f_l2
        );
    }

    // pad doubling at tau 16 with the small offset bump
    let qd = bump_q(0.5, 0.82 * (0.3f64 + 1.9).cos(), 0.82 * (0.3f64 + 1.9).sin(), 0.1, 0.1, 0.85);
    let cfg_small = CgoConfig::new(0.3, 2, 16.0);
    let sol_small = build_cgo(&disk, &atlas, &qd, &cfg_small).unwrap();
    let mut cfg_big = CgoConfig::new(0.3, 4, 16.0);
    cfg_big.s_half = 8.0;
    cfg_big.ns = 256;
    let sol_big = build_cgo(&disk, &atlas, &qd, &cfg_big).unwrap();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for m in 0..cfg_small.ns {
        let ws = sol_small.remainder.remainder_slice(&disk, m);
        let wb = sol_big.remainder.remainder_slice(&disk, m + 64);
        for (a, b) in ws.iter().zip(&wb) {
            worst = worst.max((a - b).norm());
            scale = scale.max(a.norm());
        }
    }
    println!("pad doubling: max |diff| {worst:.3e}  max |w| {scale:.3e}  rel {:.3e}", worst / scale);

    // q=0 quick fit on the small fixture (tau up to 32 only)
    let cfg0 = CgoConfig::new(0.3, 2, 8.0);
    let fit = remainder_decay_fit(&disk, &atlas, |_, _, _| 0.0, &cfg0, &[8.0, 11.3, 16.0, 22.6]).unwrap();
    println!(
        "small q=0 fit: slope {:.4}  h1_slope {:.4}  fitted_c {:.4}  l2 {:?}",
        fit.slope, fit.h1_slope, fit.fitted_c, fit.l2
    );
}

fn phase_sigma0() {
    let euclid = SimpleSurface::euclidean(32);
    let t0 = Instant::now();
    let disk = DiskDirichlet::build(&euclid, 48, 288, 100, 13).unwrap();
    println!("fine eigensolve 48x288/100: {:.1?}  lam_max {:.1}", t0.elapsed(), disk.eigenvalues[99]);
    let t0 = Instant::now();
    let atlas =
        ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &disk.grid, 2048, 1e-3)
            .unwrap();
    println!("fine atlas: {:.1?}", t0.elapsed());
    let mut cfg = CgoConfig::new(0.3, 0, 16.0);
    cfg.offset = 0.8;
    cfg.beta = None;
    let sol = build_cgo(&disk, &atlas, |_, _, _| 0.0, &cfg).unwrap();
    println!(
        "sigma0 tau16: w_l2 {:.4e}  residual_rel {:.2e}  min|D| {:.3}",
        sol.remainder.norms.l2, sol.remainder.residual_rel, sol.remainder.min_symbol
    );
    for m in [16usize, 48, 64, 80, 112] {
        let r = conjugated_residual_fd(&disk, &sol, |_, _, _| 0.0, &[m]);
        println!("assembled residual slice {m}: {r:.4e}");
    }
    // sigma = 2 pi with beta on the same fine grid for comparison
    let mut cfg2 = CgoConfig::new(0.3, 2, 16.0);
    cfg2.offset = 0.8;
    let sol2 = build_cgo(&disk, &atlas, |_, _, _| 0.0, &cfg2).unwrap();
    let r2 = conjugated_residual_fd(&disk, &sol2, |_, _, _| 0.0, &[64]);
    println!("sigma=2pi beta tau16 fine grid assembled residual: {r2:.4e}");

    // and on the coarse 40x80 grid
    let disk_c = DiskDirichlet::build(&euclid, 40, 80, 360, 7).unwrap();
    let atlas_c =
        ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &disk_c.grid, 1024, 1e-3)
            .unwrap();
    let mut cfg_c = CgoConfig::new(0.3, 0, 16.0);
    cfg_c.offset = 0.8;
    cfg_c.beta = None;
    let sol_c = build_cgo(&disk_c, &atlas_c, |_, _, _| 0.0, &cfg_c).unwrap();
    let r_c = conjugated_residual_fd(&disk_c, &sol_c, |_, _, _| 0.0, &[64]);
    println!("sigma0 tau16 coarse 40x80 assembled residual: {r_c:.4e}");
    let mut cfg_c2 = CgoConfig::new(0.3, 2, 16.0);
    cfg_c2.offset = 0.8;
    let sol_c2 = build_cgo(&disk_c, &atlas_c, |_, _, _| 0.0, &cfg_c2).unwrap();
    let r_c2 = conjugated_residual_fd(&disk_c, &sol_c2, |_, _, _| 0.0, &[64]);
    println!("sigma=2pi tau16 coarse 40x80 assembled residual: {r_c2:.4e}");
    // tau 8 with the offset potential, coarse grid
    let qd = bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85);
    let mut cfg_c3 = CgoConfig::new(0.3, 2, 8.0);
    cfg_c3.offset = 0.8;
    let sol_c3 = build_cgo(&disk_c, &atlas_c, &qd, &cfg_c3).unwrap();
    let r_c3 = conjugated_residual_fd(&disk_c, &sol_c3, &qd, &[64, 70]);
    println!("sigma=2pi tau8 q coarse assembled residual: {r_c3:.4e}");
}

fn phase_big() {
    let euclid = SimpleSurface::euclidean(32);
    let t0 = Instant::now();
    let disk = DiskDirichlet::build(&euclid, 40, 80, 1600, 7).unwrap();
    let worst_res = disk.residuals.iter().cloned().fold(0.0f64, f64::max);
    println!(
        "big eigensolve 40x80/1600: {:.1?}  lam[359] {:.1}  lam[1599] {:.1}  worst ritz residual {:.2e}",
        t0.elapsed(),
        disk.eigenvalues[359],
        disk.eigenvalues[1599],
        worst_res
    );
    let t0 = Instant::now();
    let atlas =
        ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &disk.grid, 1024, 1e-3)
            .unwrap();
    println!("atlas: {:.1?}", t0.elapsed());

    for tau in [8.0f64, 16.0, 32.0, 64.0] {
        match nudge_tau(tau, &disk.eigenvalues, 0.5) {
            Ok((t, n)) => println!("nudge tau {tau}: -> {t:.6} (nudged {n})"),
            Err(e) => println!("nudge tau {tau}: ERR {e}"),
        }
    }

    let mut cfg0 = CgoConfig::new(0.3, 2, 8.0);
    cfg0.offset = 0.8;
    let t0 = Instant::now();
    let fit = remainder_decay_fit(&disk, &atlas, |_, _, _| 0.0, &cfg0, &[8.0, 16.0, 32.0, 64.0]).unwrap();
    println!("q=0 sweep: {:.1?}", t0.elapsed());
    for i in 0..fit.taus.len() {
        println!(
            "  tau {:6.2}: l2 {:.6e}  h1 {:.6e}  f {:.6e}  it {}  rho {:.4}",
            fit.taus[i], fit.l2[i], fit.h1[i], fit.f_l2[i], fit.iterations[i], fit.contraction[i]
        );
    }
    println!(
        "q=0 fit: slope {:.4}  intercept {:.3}  h1_slope {:.4}  fitted_c {:.4}",
        fit.slope, fit.intercept, fit.h1_slope, fit.fitted_c
    );

    let qb = bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85);
    let t0 = Instant::now();
    let fitq = remainder_decay_fit(&disk, &atlas, &qb, &cfg0, &[8.0, 16.0, 32.0, 64.0]).unwrap();
    println!("q bump sweep: {:.1?}", t0.elapsed());
    for i in 0..fitq.taus.len() {
        println!(
            "  tau {:6.2}: l2 {:.6e}  h1 {:.6e}  f {:.6e}  it {}  rho {:.4}  (tau*rho/h {:.4})",
            fitq.taus[i], fitq.l2[i], fitq.h1[i], fitq.f_l2[i], fitq.iterations[i], fitq.contraction[i],
            fitq.taus[i] * fitq.contraction[i] / 0.5
        );
    }
    println!(
        "q bump fit: slope {:.4}  h1_slope {:.4}  fitted_c {:.4}",
        fitq.slope, fitq.h1_slope, fitq.fitted_c
    );

    // sign-flip pair and H1 stability at the contract taus
    for tau in [8.0, 16.0, 32.0] {
        let mut c1 = CgoConfig::new(0.3, 2, tau);
        c1.offset = 0.8;
        c1.sign = -1.0;
        let v1 = build_cgo(&disk, &atlas, |_, _, _| 0.0, &c1).unwrap();
        let mut c2 = CgoConfig::new(0.3, 0, tau);
        c2.offset = 0.8;
        c2.beta = None;
        let v2 = build_cgo(&disk, &atlas, |_, _, _| 0.0, &c2).unwrap();
        println!(
            "big pair tau {tau:4.0}: prod {:.4}  w2_l2 {:.4e}  w2_l2w {:.4e}  h1/f(v1) {:.5}  tau*l2/f(v1) {:.5}",
            pair_product_max(&disk, &v1, &v2),
            v2.remainder.norms.l2,
            v2.remainder.norms.l2_weighted,
            v1.remainder.norms.h1 / v1.f_l2,
            tau * v1.remainder.norms.l2 / v1.f_l2
        );
    }
}

fn phase_h1() {
    let euclid = SimpleSurface::euclidean(32);

    // transport identity on the flat disk at doubling resolutions
    let g64 = PolarGrid::new(64, 128);
    let g128 = PolarGrid::new(128, 256);
    let a64 = ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &g64, 2048, 1e-3).unwrap();
    let a128 = ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &g128, 8192, 1e-3).unwrap();
    let sg = std::f64::consts::FRAC_PI_2;
    for (tag, s, be) in [("sigma=pi/2 beta", sg, true), ("sigma=0 flat", 0.0, false)] {
        let bopt = if be { Some(&AngularBump::DEFAULT) } else { None };
        let r64 = transport_identity_residual(&euclid, &a64, &g64, s, bopt, 0.5);
        let r128 = transport_identity_residual(&euclid, &a128, &g128, s, bopt, 0.5);
        println!("euclid transport identity {tag}: 64x128 {r64:.3e}  128x256 {r128:.3e}  ratio {:.2}", r64 / r128);
    }

    // curved-surface identity and defects, re-measured on the extended trace ball
    let bump = SimpleSurface::from_expr("0.1*exp(-((x-0.2)^2+y^2)/0.09)", 64).unwrap();
    let g40 = PolarGrid::new(40, 80);
    let g80 = PolarGrid::new(80, 160);
    let a40 = ChartAtlas::build(&bump, ChartCenter::exterior(0.3, 0.08), &g40, 1024, 1e-3).unwrap();
    let a80 = ChartAtlas::build(&bump, ChartCenter::exterior(0.3, 0.08), &g80, 2048, 1e-3).unwrap();
    for (tag, s, be) in [("sigma=1.5 beta", 1.5, true), ("sigma=0 flat", 0.0, false)] {
        let bopt = if be { Some(&AngularBump::DEFAULT) } else { None };
        let r40 = transport_identity_residual(&bump, &a40, &g40, s, bopt, 0.5);
        let r80 = transport_identity_residual(&bump, &a80, &g80, s, bopt, 0.5);
        println!("bump transport identity {tag}: 40x80 {r40:.3e}  80x160 {r80:.3e}  ratio {:.2}", r40 / r80);
    }
    let d = chart_defects(&bump, &a40, &g40, 1.5, 0.5);
    println!("bump chart defects 40x80: eik {:.3e}  transport {:.3e}", d.eikonal_max, d.transport_max);

    // small fixture: carleman contraction with the overlap bump
    let disk = DiskDirichlet::build(&euclid, 40, 80, 360, 7).unwrap();
    let fq = bump_q(1.0, 0.1, -0.1, 0.5, 0.0, 0.8);
    let qb = bump_q(0.5, -0.2, 0.1, 0.4, 0.0, 0.85);
    for tau in [8.0, 16.0, 32.0] {
        let cfg = CarlemanConfig::new(tau);
        let f_slices: Vec<Vec<Complex64>> = (0..cfg.ns)
            .map(|m| {
                let s = cfg.s_center(m);
                disk.grid.centers().iter().map(|&(x, y)| Complex64::new(fq(x, y, s), 0.0)).collect()
            })
            .collect();
        let sol = carleman_solve(&disk, &f_slices, &qb, &cfg).unwrap();
        println!(
            "carleman contraction tau {tau:4.0}: rho {:.5} (tau*rho/h {:.4})  it {}  update {:.2e}",
            sol.contraction, tau * sol.contraction / 0.5, sol.iterations, sol.final_update
        );
    }

    // curved-metric assembled solve under the production chart offset
    let diskb = DiskDirichlet::build(&bump, 32, 64, 220, 11).unwrap();
    let ab = ChartAtlas::build(&bump, ChartCenter::exterior(0.3, 0.8), &diskb.grid, 1024, 1e-3).unwrap();
    let qc = bump_q(0.8, 0.1, -0.15, 0.45, 0.2, 0.5);
    let mut cfg = CgoConfig::new(0.3, 2, 6.0);
    cfg.ns = 96;
    let sol = build_cgo(&diskb, &ab, &qc, &cfg).unwrap();
    let res = conjugated_residual_fd(&diskb, &sol, &qc, &[cfg.ns / 2]);
    let cap = sol.remainder.f_hat_l2 / (2.0 * sol.tau * sol.sigma);
    println!(
        "curved solve: residual_rel {:.2e}  fd residual {:.3e}  l2 {:.4e}  cap {:.4e}  l2/cap {:.3}",
        sol.remainder.residual_rel, res, sol.remainder.norms.l2, cap, sol.remainder.norms.l2 / cap
    );

    // big fixture: H1 band on the resolved flat regime
    let t0 = Instant::now();
    let diskbig = DiskDirichlet::build(&euclid, 40, 80, 1600, 7).unwrap();
    println!("big eigensolve: {:.1?}", t0.elapsed());
    let atlas = ChartAtlas::build(&euclid, ChartCenter::exterior(0.3, 0.8), &diskbig.grid, 1024, 1e-3).unwrap();
    let cfg0 = CgoConfig::new(0.3, 2, 8.0);
    let taus = [8.0, 11.3, 16.0, 22.6, 32.0];
    let fit = remainder_decay_fit(&diskbig, &atlas, |_, _, _| 0.0, &cfg0, &taus).unwrap();
    println!(
        "h1 band q=0: h1 {:?}  h1_slope {:.4}  l2_slope {:.4}  fitted_c {:.4}",
        fit.h1, fit.h1_slope, fit.slope, fit.fitted_c
    );
    let fitq = remainder_decay_fit(&diskbig, &atlas, &qb, &cfg0, &taus).unwrap();
    println!(
        "h1 band bump q: h1 {:?}  h1_slope {:.4}  l2_slope {:.4}  fitted_c {:.4}",
        fitq.h1, fitq.h1_slope, fitq.slope, fitq.fitted_c
    );
}
