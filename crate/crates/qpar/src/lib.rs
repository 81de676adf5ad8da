//! Pareto-optimal permittivity layouts for leaky optical cavities.
//!
//! The crate minimizes the exponential loss rate Γ = −Im ω of a cavity
//! eigenfrequency at fixed real frequency Re ω = α, over two-material
//! permittivity layouts in an optimization region. It bundles:
//!
//! - a staggered-grid frequency-domain Maxwell operator with impedance,
//!   electric-wall and magnetic-wall boundary closures and a conductivity
//!   absorber term ([`maxwell`]),
//! - a shift-invert eigensolver for complex eigenfrequencies plus an
//!   argument-principle root finder for the exact 1D layered-cavity
//!   dispersion function ([`eigensolve`]),
//! - first-order eigenfrequency sensitivities under perturbations of 1/ε
//!   with a finite-difference validator ([`sensitivity`]),
//! - the constrained descent loop that traces the Pareto frontier
//!   Γ_min(α) ([`pareto`]),
//! - switching-function diagnostics checking the bang-bang structure of
//!   converged layouts ([`elverify`]),
//! - a property harness for two-parameter perturbations of simple zeros
//!   of analytic functions ([`perturb2`]).
//!
//! Everything is nondimensional: ε₀ = μ₀ = 1, so c = 1 and impedances are
//! vacuum-normalized. All solvers are deterministic for a fixed seed.
//!
//! See the `examples/` directory for one runnable example per capability;
//! the `qpar` binary exposes the same operations as batch subcommands.

pub mod cli;
pub mod elverify;
pub mod eigensolve;
pub mod io;
pub mod maxwell;
pub mod medium;
pub mod pareto;
pub mod perturb2;
pub mod sensitivity;
pub mod testbeds;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex<f64>;

/// Loss rate Γ = −Im ω of an eigenfrequency.
pub fn loss_rate(omega: C64) -> f64 {
    -omega.im
}

/// Q-factor |Re ω| / (−2 Im ω).
pub fn q_factor(omega: C64) -> f64 {
    omega.re.abs() / (2.0 * loss_rate(omega))
}

/// Pin the dense/sparse kernels to sequential execution.
///
/// Called by every solver entry point; reruns must be bit-identical and
/// threaded reductions are not.
pub(crate) fn pin_sequential_kernels() {
    faer::set_global_parallelism(faer::Par::Seq);
}
