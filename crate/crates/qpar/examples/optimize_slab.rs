//! Minimize the loss rate of a layered slab cavity at fixed real frequency,
//! starting from a uniform layout between the air/silicon bounds.
//!
//! Run: cargo run --release --example optimize_slab

use qpar::eigensolve::{roots_1d, Rect};
use qpar::pareto::{optimize, OptimizeParams};
use qpar::testbeds;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QPAR_LOG", "info")).init();
    let scene = testbeds::build("stack-air-si").unwrap().into_scene().unwrap();
    let alpha = std::f64::consts::PI;
    let params = OptimizeParams { seed: 42, ..OptimizeParams::default() };

    let t0 = std::time::Instant::now();
    let point = optimize(&scene, alpha, &params).expect("optimize failed");
    println!(
        "alpha = {:.6}: gamma = {:.6e}, Q = {:.1}, iterations = {}, converged = {}",
        point.alpha,
        point.gamma,
        qpar::q_factor(point.pair.omega),
        point.iterations,
        point.converged
    );
    println!(
        "el residual = {:.3e}, bang-bang fraction = {:.4}, singular fraction = {:.4}",
        point.el.residual, point.el.singular_fraction, point.el.bang_bang_fraction
    );
    println!(
        "gamma trace: first {:.4e} ... last {:.4e} over {} accepted steps ({} clipped cell updates)",
        point.gamma_trace.first().unwrap(),
        point.gamma_trace.last().unwrap(),
        point.gamma_trace.len() - 1,
        point.clip_events
    );

    // both uniform layouts at the same alpha, through the independent
    // transfer-matrix root finder
    for eps in [testbeds::EPS_AIR, testbeds::EPS_SILICON] {
        let profile = qpar::maxwell::LayeredProfile1D::uniform(eps, 1.0, 3.0);
        let rect = Rect::new((0.2, 40.0), (-3.0, 0.01));
        let roots = roots_1d(&profile, &rect).unwrap();
        let best = roots
            .iter()
            .filter(|(z, _)| (z.re - alpha).abs() < 0.75)
            .map(|(z, _)| -z.im)
            .fold(f64::INFINITY, f64::min);
        println!("uniform eps = {:>7.4}: best gamma near alpha = {:.6e}", eps, best);
    }
    println!("elapsed: {:.1?}", t0.elapsed());
}
