//! Switching functions and the residual of the Euler-Lagrange eigenproblem.
//!
//! A converged Pareto point must make the switching field Φ and the layout
//! agree: ε = ε₊ where Φ > 0 and ε = ε₋ where Φ < 0, with the nonlinear
//! curl-curl relation |Φ|∇×∇×E = ω²((ε₊+ε₋)/2·|Φ| + (ε₊−ε₋)/2·Φ)E + iωσ|Φ|E
//! holding over the whole domain. This module measures how far a candidate
//! is from that structure.

use num_complex::Complex64;

use crate::eigensolve::EigenPair;
use crate::maxwell::{e_at_cell_centers, DiscreteOperator};
use crate::medium::{fibers, FamilyKind, MaterialScene};
use crate::C64;

/// Which switching function to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchingVariant {
    /// Im(E·E) pointwise: full 3D topology optimization.
    Full3D,
    /// Fiber integral over x₃ of Im(E·E), broadcast back: 2D crystals.
    Crystal2D,
    /// Cross-section integral of Im(E·E) per layer: 1D crystals.
    Crystal1D,
    /// Im((ε² + iσε/ω)(E·E)): conductivity-aware variant.
    SigmaAware,
}

impl SwitchingVariant {
    /// The natural variant of a family's geometry.
    pub fn for_family(kind: &FamilyKind) -> SwitchingVariant {
        match kind {
            FamilyKind::Full3D => SwitchingVariant::Full3D,
            FamilyKind::Cylinder2D { .. } => SwitchingVariant::Crystal2D,
            FamilyKind::Slab1D { .. } => SwitchingVariant::Crystal1D,
        }
    }

    pub fn parse(s: &str) -> Option<SwitchingVariant> {
        match s {
            "full3d" => Some(SwitchingVariant::Full3D),
            "crystal2d" => Some(SwitchingVariant::Crystal2D),
            "crystal1d" => Some(SwitchingVariant::Crystal1D),
            "sigma" => Some(SwitchingVariant::SigmaAware),
            _ => None,
        }
    }
}

/// A per-cell switching field; on D_opt it carries the variant's values,
/// elsewhere the pointwise Im(E·E) that weights the whole-domain equation.
#[derive(Debug, Clone)]
pub struct SwitchingField {
    pub phi: Vec<f64>,
    pub variant: SwitchingVariant,
}

#[derive(Debug, Clone)]
pub struct VariantError {
    pub detail: String,
}

impl std::fmt::Display for VariantError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.detail)
    }
}

impl std::error::Error for VariantError {}

/// Compute E·E at cell centers.
pub fn e_dot_e_cells(pair: &EigenPair) -> Vec<C64> {
    let centers = e_at_cell_centers(&pair.psi);
    let n = centers[0].len();
    (0..n)
        .map(|c| centers[0][c] * centers[0][c] + centers[1][c] * centers[1][c] + centers[2][c] * centers[2][c])
        .collect()
}

/// Evaluate a switching field for a (phase-fixed) eigenpair.
///
/// Crystal variants require the matching family geometry; the fiber sums
/// are scaled by the fiber length (the discrete ∫ dx₃ or ∫ dx₁dx₂).
pub fn switching(
    pair: &EigenPair,
    scene: &MaterialScene,
    variant: SwitchingVariant,
) -> Result<SwitchingField, VariantError> {
    let grid = &scene.grid;
    let ee = e_dot_e_cells(pair);
    let mut phi: Vec<f64> = ee.iter().map(|z| z.im).collect();
    match variant {
        SwitchingVariant::Full3D => {}
        SwitchingVariant::SigmaAware => {
            for c in 0..grid.cell_count() {
                let eps = scene.eps_r[c];
                let coef = C64::new(eps * eps, 0.0)
                    + Complex64::new(0.0, scene.sigma[c] * eps) / pair.omega;
                phi[c] = (coef * ee[c]).im;
            }
        }
        SwitchingVariant::Crystal2D => {
            if !matches!(scene.family.kind, FamilyKind::Cylinder2D { .. }) {
                return Err(VariantError {
                    detail: "crystal2d switching requires a Cylinder2D family".to_string(),
                });
            }
            fiber_broadcast(scene, &ee, grid.spacing[2], &mut phi);
        }
        SwitchingVariant::Crystal1D => {
            if !matches!(scene.family.kind, FamilyKind::Slab1D { .. }) {
                return Err(VariantError {
                    detail: "crystal1d switching requires a Slab1D family".to_string(),
                });
            }
            fiber_broadcast(scene, &ee, grid.spacing[0] * grid.spacing[1], &mut phi);
        }
    }
    Ok(SwitchingField { phi, variant })
}

/// Replace φ on D_opt by the fiber integral of Im(E·E), broadcast back.
fn fiber_broadcast(scene: &MaterialScene, ee: &[C64], measure: f64, phi: &mut [f64]) {
    for fiber in fibers(scene) {
        let total: f64 = fiber.iter().map(|&c| ee[c].im * measure).sum();
        for &c in &fiber {
            phi[c] = total;
        }
    }
}

/// Diagnostics of the Euler-Lagrange structure at a candidate optimum.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ELReport {
    pub residual: f64,
    pub singular_fraction: f64,
    pub bang_bang_fraction: f64,
    pub phase_theta: f64,
    /// φ vanished identically: the equation holds vacuously.
    pub vacuous: bool,
}

/// Normalized defect of the whole-domain EL equation.
///
/// Piecewise constraint permittivities: ε± = (eps_plus, eps_minus) of the
/// family on D_opt and ε± = eps_out on D_out, where the equation reduces to
/// the plain Maxwell relation weighted by |φ|. Returns NaN with `vacuous`
/// when both φ and E vanish.
pub fn el_residual(
    pair: &EigenPair,
    scene: &MaterialScene,
    phi: &SwitchingField,
    op: &DiscreteOperator,
) -> (f64, bool) {
    let lay = &op.layout;
    let grid = &scene.grid;
    let e_arrays = [
        pair.psi.comps[0].clone(),
        pair.psi.comps[1].clone(),
        pair.psi.comps[2].clone(),
    ];
    let cc = op.curl_curl_e(&e_arrays, pair.omega);
    let omega2 = pair.omega * pair.omega;

    // per-cell EL permittivity: the value the equation selects at sign(φ)
    let mut eps_el = vec![0.0; grid.cell_count()];
    for c in 0..grid.cell_count() {
        let (ep, em) = if scene.opt.contains(c) {
            (scene.family.eps_plus, scene.family.eps_minus)
        } else {
            (scene.family.eps_out[c], scene.family.eps_out[c])
        };
        let p = phi.phi[c];
        eps_el[c] = if p > 0.0 {
            ep
        } else if p < 0.0 {
            em
        } else {
            scene.eps_r[c]
        };
    }

    let mut num = 0.0;
    let mut den_cc = 0.0;
    let mut den_e = 0.0;
    let mut cells = Vec::with_capacity(4);
    for a in 0..3 {
        for flat in 0..lay.comp_len(a) {
            let w = op.vol_loc[a][flat];
            if w == 0.0 {
                continue;
            }
            let p = lay.coords(a, flat);
            lay.cells_of_e(a, p, &mut cells);
            let mut abs_phi = 0.0;
            let mut phi_loc = 0.0;
            let mut eps_loc = 0.0;
            for cell in &cells {
                let c = grid.cell(cell[0], cell[1], cell[2]);
                abs_phi += phi.phi[c].abs();
                phi_loc += phi.phi[c];
                eps_loc += eps_el[c];
            }
            let m = cells.len() as f64;
            abs_phi /= m;
            phi_loc /= m;
            eps_loc /= m;
            let e = pair.psi.comps[a][flat];
            let sig = op.sig_loc[a][flat];
            let r = abs_phi
                * (cc[a][flat] - omega2 * eps_loc * e - Complex64::new(0.0, 1.0) * pair.omega * sig * e);
            num += w * r.norm_sqr();
            den_cc += w * (abs_phi * cc[a][flat]).norm_sqr();
            den_e += w * (phi_loc * e).norm_sqr();
        }
    }
    let den = den_cc.sqrt() + omega2.norm() * den_e.sqrt();
    if den == 0.0 {
        let e_zero = pair.psi.comps[..3].iter().all(|v| v.iter().all(|z| z.norm() == 0.0));
        if e_zero {
            return (f64::NAN, true);
        }
        return (0.0, true);
    }
    (num.sqrt() / den, false)
}

/// Singular-set size and bang-bang agreement of a layout against φ.
///
/// `dead_band` is relative to max |φ| over D_opt. Outside the band a cell
/// agrees when (ε = ε₊) ⟺ (φ > 0).
pub fn structure_metrics(
    scene: &MaterialScene,
    phi: &SwitchingField,
    dead_band: f64,
) -> (f64, f64) {
    let grid = &scene.grid;
    let opt_cells: Vec<usize> = (0..grid.cell_count()).filter(|&c| scene.opt.contains(c)).collect();
    let max_abs = opt_cells.iter().map(|&c| phi.phi[c].abs()).fold(0.0_f64, f64::max);
    let band = dead_band * max_abs;
    let mut singular = 0usize;
    let mut outside = 0usize;
    let mut agree = 0usize;
    let eps_plus = scene.family.eps_plus;
    for &c in &opt_cells {
        if phi.phi[c].abs() <= band {
            singular += 1;
            continue;
        }
        outside += 1;
        let at_plus = (scene.eps_r[c] - eps_plus).abs() <= 1e-9 * eps_plus;
        if at_plus == (phi.phi[c] > 0.0) {
            agree += 1;
        }
    }
    let singular_fraction = singular as f64 / opt_cells.len() as f64;
    let bang_bang_fraction = if outside == 0 { 1.0 } else { agree as f64 / outside as f64 };
    (singular_fraction, bang_bang_fraction)
}
