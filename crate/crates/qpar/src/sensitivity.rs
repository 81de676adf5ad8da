//! First-order eigenfrequency shifts under perturbations of 1/ε, and their
//! finite-difference validation.
//!
//! The density is assembled so that C₁(p) = Σ p·g·vol is the *exact*
//! derivative of the discrete eigenvalue: squared E values are scattered
//! from their staggered locations to cells with the same shares the
//! operator's material averaging uses. The finite-difference check then
//! sees a clean O(h) remainder all the way down, with no discretization
//! floor between the two routes.

use num_complex::Complex64;

use crate::eigensolve::{
    continue_eig, e_square_cell_scatter, simplicity_check, EigError, EigenPair, Simplicity,
    DEFAULT_TOL_PAIR,
};
use crate::maxwell::{assemble, DiscreteOperator};
use crate::medium::{perturbed_scene, Direction, MaterialScene};
use crate::C64;

/// Per-cell complex density g with C₁(p) = Σ_cells p·g·cellvolume.
#[derive(Debug, Clone)]
pub struct SensitivityDensity {
    /// Density per cell; supported on D_opt only.
    pub g: Vec<C64>,
    /// Unconjugated pairing ⟨Ψ₀, Ψ⋆⟩_ε used as denominator.
    pub denom: C64,
    pub omega0: C64,
}

#[derive(Debug, Clone)]
pub enum SensitivityError {
    Degenerate { pairing: C64, threshold: f64 },
    UnsupportedDirection { cell: [usize; 3] },
    Eig(EigError),
}

impl std::fmt::Display for SensitivityError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SensitivityError::Degenerate { pairing, threshold } => write!(
                f,
                "degenerate or ill-conditioned eigenpair: |pairing| = {:.3e} below {:.3e}",
                pairing.norm(),
                threshold
            ),
            SensitivityError::UnsupportedDirection { cell } => {
                write!(f, "direction supported outside D_opt at cell {:?}", cell)
            }
            SensitivityError::Eig(e) => write!(f, "{}", e),
        }
    }
}

impl std::error::Error for SensitivityError {}

/// Evaluate the sensitivity density of a simple eigenpair.
///
/// g(x) = (ω₀ ε_r²(x) + i σ(x) ε_r(x)) · S(x) / (vol(x) · denom), with S the
/// cell scatter of E·E; the σ term vanishes identically on feasible scenes
/// because σ = 0 inside D_opt.
pub fn density(
    pair: &EigenPair,
    scene: &MaterialScene,
    op: &DiscreteOperator,
) -> Result<SensitivityDensity, SensitivityError> {
    if simplicity_check(op, pair, DEFAULT_TOL_PAIR) != Simplicity::Simple {
        return Err(SensitivityError::Degenerate {
            pairing: pair.pairing,
            threshold: DEFAULT_TOL_PAIR * op.energy_norm_sq(&pair.psi),
        });
    }
    let scatter = e_square_cell_scatter(op, &pair.psi);
    let grid = &scene.grid;
    let vol = grid.cell_volume();
    let mut g = vec![C64::new(0.0, 0.0); grid.cell_count()];
    for c in 0..grid.cell_count() {
        if !scene.opt.contains(c) {
            continue;
        }
        let eps = scene.eps_r[c];
        let coef = pair.omega * eps * eps + Complex64::new(0.0, scene.sigma[c] * eps);
        g[c] = coef * scatter[c] / (vol * pair.pairing);
    }
    Ok(SensitivityDensity { g, denom: pair.pairing, omega0: pair.omega })
}

/// C₁(p) = Σ p·g·cellvolume; exactly linear in p.
pub fn first_order_shift(
    dens: &SensitivityDensity,
    p: &Direction,
    scene: &MaterialScene,
) -> Result<C64, SensitivityError> {
    let vol = scene.grid.cell_volume();
    let mut acc = C64::new(0.0, 0.0);
    for c in 0..scene.grid.cell_count() {
        if p.p[c] == 0.0 {
            continue;
        }
        if !scene.opt.contains(c) {
            return Err(SensitivityError::UnsupportedDirection { cell: scene.grid.cell_coords(c) });
        }
        acc += p.p[c] * dens.g[c] * vol;
    }
    Ok(acc)
}

/// One row of the finite-difference convergence table.
#[derive(Debug, Clone)]
pub struct FdRow {
    pub h: f64,
    pub fd_slope: C64,
    pub c1: C64,
    pub abs_error: f64,
    /// set when the continuation jumped to a different branch; row invalid
    pub branch_jump: bool,
}

/// Convergence table of |(ω(h) − ω₀)/h − C₁(p)| over the given steps.
#[derive(Debug, Clone)]
pub struct FdTable {
    pub rows: Vec<FdRow>,
}

impl FdTable {
    /// Delimited text: h, Re/Im of the FD slope, Re/Im of C₁, abs error.
    pub fn to_text(&self) -> String {
        let mut s = String::from("h\tfd_re\tfd_im\tc1_re\tc1_im\tabs_error\tbranch_jump\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.17e}\t{:.6e}\t{}\n",
                r.h, r.fd_slope.re, r.fd_slope.im, r.c1.re, r.c1.im, r.abs_error, r.branch_jump
            ));
        }
        s
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = &FdRow> {
        self.rows.iter().filter(|r| !r.branch_jump)
    }
}

/// Re-solve the eigenvalue at ε(x,h) = (1/ε + h·p)⁻¹ for each step and
/// compare the slope against C₁(p).
///
/// Each step must keep the perturbed ε feasible (the caller scales p).
/// Branch jumps (|ω(h) − ω₀| beyond 10·|h·C₁| plus solver slack) flag the
/// row and it is discarded from convergence statistics.
pub fn fd_validate(
    scene: &MaterialScene,
    pair: &EigenPair,
    op: &DiscreteOperator,
    p: &Direction,
    steps: &[f64],
    eig_tol: f64,
) -> Result<FdTable, SensitivityError> {
    let dens = density(pair, scene, op)?;
    let c1 = first_order_shift(&dens, p, scene)?;
    let mut rows = Vec::with_capacity(steps.len());
    for &h in steps {
        let (scene_h, _clipped) = perturbed_scene(scene, p, h, false);
        let op_h = assemble(&scene_h).map_err(|rep| {
            SensitivityError::Eig(EigError::Singular {
                detail: format!("perturbed scene invalid: {}", rep),
            })
        })?;
        let predicted = pair.omega + h * c1;
        let pair_h =
            continue_eig(&op_h, &pair.psi, predicted, eig_tol).map_err(SensitivityError::Eig)?;
        let jump_radius = 10.0 * (h * c1).norm() + 1e3 * eig_tol * pair.omega.norm();
        let branch_jump = (pair_h.omega - pair.omega).norm() > jump_radius;
        let fd_slope = (pair_h.omega - pair.omega) / h;
        rows.push(FdRow { h, fd_slope, c1, abs_error: (fd_slope - c1).norm(), branch_jump });
    }
    Ok(FdTable { rows })
}
