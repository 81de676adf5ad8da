//! Computational domain, material fields and feasible permittivity families.
//!
//! A [`MaterialScene`] holds the grid, the optimization region `D_opt`, the
//! permittivity/conductivity fields and the boundary closure of the cavity.
//! Scenes are immutable; every mutation constructs a new scene. Feasibility
//! is checked by [`validate_scene`], which reports violations instead of
//! erroring, so callers can print all of them at once.

use serde::{Deserialize, Serialize};

/// Default cap on total cell count (2^21 cells).
pub const DEFAULT_CELL_CAP: usize = 1 << 21;

/// Regular grid of `dims` cells per axis with uniform spacing per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, String> {
        Self::with_cell_cap(dims, spacing, origin, DEFAULT_CELL_CAP)
    }

    pub fn with_cell_cap(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        cap: usize,
    ) -> Result<Self, String> {
        for a in 0..3 {
            if dims[a] < 2 {
                return Err(format!("grid dims must be >= 2 per axis, got {:?}", dims));
            }
            if !(spacing[a] > 0.0) || !spacing[a].is_finite() {
                return Err(format!("grid spacing must be positive, got {:?}", spacing));
            }
        }
        let cells: usize = dims.iter().product();
        if cells > cap {
            return Err(format!("cell count {} exceeds cap {}", cells, cap));
        }
        Ok(Grid { dims, spacing, origin })
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Row-major cell index, z fastest.
    #[inline]
    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn cell_coords(&self, c: usize) -> [usize; 3] {
        let k = c % self.dims[2];
        let rest = c / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], k]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }
}

/// Marks the optimization region `D_opt`; the complement is `D_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub membership: Vec<bool>,
}

impl RegionMask {
    pub fn from_box(grid: &Grid, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let mut membership = vec![false; grid.cell_count()];
        for i in lo[0]..hi[0] {
            for j in lo[1]..hi[1] {
                for k in lo[2]..hi[2] {
                    membership[grid.cell(i, j, k)] = true;
                }
            }
        }
        RegionMask { membership }
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|&&m| m).count()
    }

    #[inline]
    pub fn contains(&self, c: usize) -> bool {
        self.membership[c]
    }
}

/// Geometry class of the feasible family.
///
/// `Cylinder2D` keeps ε constant along x₃ inside `D_opt = D₂ × [c₋, c₊]`;
/// `Slab1D` keeps ε constant over the cross-section per x₃ layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FamilyKind {
    Full3D,
    Cylinder2D { c_minus: usize, c_plus: usize },
    Slab1D { cross_section: Vec<bool> },
}

/// Material bounds of the feasible family plus the frozen outer medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleFamily {
    pub eps_minus: f64,
    pub eps_plus: f64,
    /// Outer permittivity, stored per cell; only `D_out` entries are read.
    pub eps_out: Vec<f64>,
    pub kind: FamilyKind,
}

/// Boundary closure of one side of the computational box.
///
/// `Impedance` carries the vacuum-normalized 𝒵 per boundary cell face of
/// that side. `Pec` (tangential E = 0) is the 𝒵 → 0 limit and `Pmc`
/// (tangential H = 0) the 𝒵 → ∞ limit; both are lossless and exist as
/// testing/symmetry closures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SideBc {
    Pec,
    Pmc,
    Impedance(Vec<f64>),
}

impl SideBc {
    pub fn uniform_impedance(z: f64, faces: usize) -> Self {
        SideBc::Impedance(vec![z; faces])
    }

    pub fn is_lossy(&self) -> bool {
        matches!(self, SideBc::Impedance(_))
    }
}

/// Per-side boundary conditions, indexed `[axis][side]` with side 0 = lo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub sides: [[SideBc; 2]; 3],
}

impl BoundarySpec {
    /// Number of boundary cell faces on side (axis, side) of `grid`.
    pub fn side_face_count(grid: &Grid, axis: usize) -> usize {
        let d = grid.dims;
        match axis {
            0 => d[1] * d[2],
            1 => d[0] * d[2],
            _ => d[0] * d[1],
        }
    }

    pub fn all_impedance(grid: &Grid, z: f64) -> Self {
        let mk = |axis: usize| SideBc::uniform_impedance(z, Self::side_face_count(grid, axis));
        BoundarySpec {
            sides: [
                [mk(0), mk(0)],
                [mk(1), mk(1)],
                [mk(2), mk(2)],
            ],
        }
    }

    pub fn all_pec() -> Self {
        BoundarySpec {
            sides: [
                [SideBc::Pec, SideBc::Pec],
                [SideBc::Pec, SideBc::Pec],
                [SideBc::Pec, SideBc::Pec],
            ],
        }
    }
}

/// Geometry, materials and boundary closure of one cavity configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialScene {
    pub grid: Grid,
    pub opt: RegionMask,
    pub family: FeasibleFamily,
    /// Relative permittivity per cell.
    pub eps_r: Vec<f64>,
    /// Conductivity per cell; must vanish on `D_opt`.
    pub sigma: Vec<f64>,
    pub boundary: BoundarySpec,
}

/// Perturbation direction of 1/ε, supported on `D_opt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    /// Per-cell values; zero outside `D_opt`.
    pub p: Vec<f64>,
}

/// One violated invariant found by [`validate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub cell: Option<[usize; 3]>,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.cell {
            Some(c) => write!(f, "{} at cell {:?}: {}", self.rule, c, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

/// Report from [`validate_scene`]; empty means feasible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "scene feasible");
        }
        for v in &self.violations {
            writeln!(f, "{}", v)?;
        }
        Ok(())
    }
}

/// Relative tolerance used when comparing ε values against bounds and fibers.
const EPS_TOL: f64 = 1e-11;

/// Check every scene invariant; returns the list of violations (empty = feasible).
pub fn validate_scene(scene: &MaterialScene) -> ValidationReport {
    let mut report = ValidationReport::default();
    let grid = &scene.grid;
    let n = grid.cell_count();
    let fam = &scene.family;
    let mut push = |rule: &str, cell: Option<[usize; 3]>, detail: String| {
        report.violations.push(Violation { rule: rule.to_string(), cell, detail });
    };

    if scene.eps_r.len() != n || scene.sigma.len() != n || scene.opt.membership.len() != n {
        push(
            "field-shape",
            None,
            format!(
                "eps_r/sigma/mask lengths {}/{}/{} do not match cell count {}",
                scene.eps_r.len(),
                scene.sigma.len(),
                scene.opt.membership.len(),
                n
            ),
        );
        return report;
    }
    if !(fam.eps_minus > 0.0) {
        push("eps-bounds", None, format!("eps_minus = {} must be positive", fam.eps_minus));
    }
    if fam.eps_plus < fam.eps_minus {
        push(
            "eps-bounds",
            None,
            format!("eps_plus = {} below eps_minus = {}", fam.eps_plus, fam.eps_minus),
        );
    }
    if fam.eps_out.len() != n {
        push("field-shape", None, format!("eps_out length {} != cell count {}", fam.eps_out.len(), n));
        return report;
    }

    if scene.opt.count() == 0 {
        push("opt-region", None, "D_opt is empty".to_string());
    }

    // D_opt must keep clear of every lossy (impedance) side so the
    // dissipative closures act entirely in D_out. Lossless symmetry walls
    // (PEC/PMC) may touch D_opt: the slab and cylinder families rely on it.
    for c in 0..n {
        if !scene.opt.contains(c) {
            continue;
        }
        let [i, j, k] = grid.cell_coords(c);
        let idx = [i, j, k];
        for axis in 0..3 {
            let on_lo = idx[axis] == 0;
            let on_hi = idx[axis] == grid.dims[axis] - 1;
            let side = if on_lo { 0 } else if on_hi { 1 } else { continue };
            if scene.boundary.sides[axis][side].is_lossy() {
                push(
                    "opt-interior",
                    Some([i, j, k]),
                    format!("D_opt cell touches lossy boundary side (axis {}, side {})", axis, side),
                );
            }
        }
    }

    let tol_bound = EPS_TOL * fam.eps_plus.max(1.0);
    for c in 0..n {
        let [i, j, k] = grid.cell_coords(c);
        if scene.opt.contains(c) {
            if scene.eps_r[c] < fam.eps_minus - tol_bound {
                push(
                    "eps-lower-bound",
                    Some([i, j, k]),
                    format!("eps_r = {} below eps_minus = {}", scene.eps_r[c], fam.eps_minus),
                );
            }
            if scene.eps_r[c] > fam.eps_plus + tol_bound {
                push(
                    "eps-upper-bound",
                    Some([i, j, k]),
                    format!("eps_r = {} above eps_plus = {}", scene.eps_r[c], fam.eps_plus),
                );
            }
            if scene.sigma[c] != 0.0 {
                push(
                    "sigma-in-opt",
                    Some([i, j, k]),
                    format!("sigma = {} must vanish on D_opt", scene.sigma[c]),
                );
            }
        } else {
            if !(fam.eps_out[c] > 0.0) {
                push(
                    "eps-out-positive",
                    Some([i, j, k]),
                    format!("eps_out = {} not positive", fam.eps_out[c]),
                );
            }
            let d = (scene.eps_r[c] - fam.eps_out[c]).abs();
            if d > EPS_TOL * fam.eps_out[c].abs().max(1.0) {
                push(
                    "eps-out-match",
                    Some([i, j, k]),
                    format!("eps_r = {} differs from eps_out = {}", scene.eps_r[c], fam.eps_out[c]),
                );
            }
            if scene.sigma[c] < 0.0 {
                push(
                    "sigma-nonnegative",
                    Some([i, j, k]),
                    format!("sigma = {} negative", scene.sigma[c]),
                );
            }
        }
    }

    for axis in 0..3 {
        for side in 0..2 {
            if let SideBc::Impedance(z) = &scene.boundary.sides[axis][side] {
                let want = BoundarySpec::side_face_count(grid, axis);
                if z.len() != want {
                    push(
                        "impedance-shape",
                        None,
                        format!("axis {} side {}: {} impedance faces, expected {}", axis, side, z.len(), want),
                    );
                    continue;
                }
                if let Some(bad) = z.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
                    push(
                        "impedance-positive",
                        None,
                        format!("axis {} side {}: impedance value {} not positive", axis, side, bad),
                    );
                }
            }
        }
    }

    validate_family_structure(scene, &mut report);
    report
}

/// Check the D_opt product structure and fiber constancy for F₂/F₁ families.
fn validate_family_structure(scene: &MaterialScene, report: &mut ValidationReport) {
    let grid = &scene.grid;
    let tol = EPS_TOL * scene.family.eps_plus.max(1.0);
    match &scene.family.kind {
        FamilyKind::Full3D => {}
        FamilyKind::Cylinder2D { c_minus, c_plus } => {
            if c_minus >= c_plus || *c_plus > grid.dims[2] {
                report.violations.push(Violation {
                    rule: "cylinder-range".to_string(),
                    cell: None,
                    detail: format!("invalid x3 range [{}, {})", c_minus, c_plus),
                });
                return;
            }
            for i in 0..grid.dims[0] {
                for j in 0..grid.dims[1] {
                    let in_base = scene.opt.contains(grid.cell(i, j, *c_minus));
                    let mut first = None;
                    for k in 0..grid.dims[2] {
                        let c = grid.cell(i, j, k);
                        let inside = k >= *c_minus && k < *c_plus;
                        if scene.opt.contains(c) != (in_base && inside) {
                            report.violations.push(Violation {
                                rule: "cylinder-product".to_string(),
                                cell: Some([i, j, k]),
                                detail: "D_opt is not a cylinder D2 x [c-, c+)".to_string(),
                            });
                        }
                        if scene.opt.contains(c) {
                            let e = scene.eps_r[c];
                            match first {
                                None => first = Some(e),
                                Some(f) => {
                                    if (e - f).abs() > tol {
                                        report.violations.push(Violation {
                                            rule: "cylinder-symmetry".to_string(),
                                            cell: Some([i, j, k]),
                                            detail: format!(
                                                "eps_r varies along x3 in D_opt ({} vs {})",
                                                e, f
                                            ),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        FamilyKind::Slab1D { cross_section } => {
            if cross_section.len() != grid.dims[0] * grid.dims[1] {
                report.violations.push(Violation {
                    rule: "slab-cross-section".to_string(),
                    cell: None,
                    detail: format!(
                        "cross-section mask length {} != nx*ny = {}",
                        cross_section.len(),
                        grid.dims[0] * grid.dims[1]
                    ),
                });
                return;
            }
            for k in 0..grid.dims[2] {
                let layer_active = (0..grid.dims[0] * grid.dims[1])
                    .any(|ij| scene.opt.contains(ij * grid.dims[2] + k));
                let mut first = None;
                for i in 0..grid.dims[0] {
                    for j in 0..grid.dims[1] {
                        let c = grid.cell(i, j, k);
                        let in_cs = cross_section[i * grid.dims[1] + j];
                        if scene.opt.contains(c) != (in_cs && layer_active) {
                            report.violations.push(Violation {
                                rule: "slab-product".to_string(),
                                cell: Some([i, j, k]),
                                detail: "D_opt is not cross_section x layer range".to_string(),
                            });
                        }
                        if scene.opt.contains(c) {
                            let e = scene.eps_r[c];
                            match first {
                                None => first = Some(e),
                                Some(f) => {
                                    if (e - f).abs() > tol {
                                        report.violations.push(Violation {
                                            rule: "slab-symmetry".to_string(),
                                            cell: Some([i, j, k]),
                                            detail: format!(
                                                "eps_r varies over cross-section in layer {} ({} vs {})",
                                                k, e, f
                                            ),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Group D_opt cells into symmetry fibers of the family.
///
/// Full3D: one fiber per cell. Cylinder2D: one fiber per (x₁, x₂) column.
/// Slab1D: one fiber per x₃ layer. Fibers and their cells come out in a
/// fixed deterministic order.
pub fn fibers(scene: &MaterialScene) -> Vec<Vec<usize>> {
    let grid = &scene.grid;
    match &scene.family.kind {
        FamilyKind::Full3D => (0..grid.cell_count())
            .filter(|&c| scene.opt.contains(c))
            .map(|c| vec![c])
            .collect(),
        FamilyKind::Cylinder2D { .. } => {
            let mut out = Vec::new();
            for i in 0..grid.dims[0] {
                for j in 0..grid.dims[1] {
                    let col: Vec<usize> = (0..grid.dims[2])
                        .map(|k| grid.cell(i, j, k))
                        .filter(|&c| scene.opt.contains(c))
                        .collect();
                    if !col.is_empty() {
                        out.push(col);
                    }
                }
            }
            out
        }
        FamilyKind::Slab1D { .. } => {
            let mut out = Vec::new();
            for k in 0..grid.dims[2] {
                let mut layer = Vec::new();
                for i in 0..grid.dims[0] {
                    for j in 0..grid.dims[1] {
                        let c = grid.cell(i, j, k);
                        if scene.opt.contains(c) {
                            layer.push(c);
                        }
                    }
                }
                if !layer.is_empty() {
                    out.push(layer);
                }
            }
            out
        }
    }
}

/// Pointwise box bounds for admissible directions at the current ε:
/// `1/eps_plus − 1/eps_r(x) ≤ p(x) ≤ 1/eps_minus − 1/eps_r(x)`.
pub fn direction_bounds(scene: &MaterialScene, cell: usize) -> (f64, f64) {
    let e = scene.eps_r[cell];
    (1.0 / scene.family.eps_plus - 1.0 / e, 1.0 / scene.family.eps_minus - 1.0 / e)
}

/// Build the admissible direction pointing from the scene's ε to `target_eps`.
///
/// `target_eps` is read on D_opt cells only. Fails naming the first cell
/// where the target leaves the feasible family.
pub fn admissible_direction(
    scene: &MaterialScene,
    target_eps: &[f64],
) -> Result<Direction, Violation> {
    let grid = &scene.grid;
    let fam = &scene.family;
    let tol = EPS_TOL * fam.eps_plus.max(1.0);
    let mut p = vec![0.0; grid.cell_count()];
    for c in 0..grid.cell_count() {
        if !scene.opt.contains(c) {
            continue;
        }
        let t = target_eps[c];
        if t < fam.eps_minus - tol || t > fam.eps_plus + tol {
            return Err(Violation {
                rule: "target-infeasible".to_string(),
                cell: Some(grid.cell_coords(c)),
                detail: format!("target eps {} outside [{}, {}]", t, fam.eps_minus, fam.eps_plus),
            });
        }
        p[c] = 1.0 / t - 1.0 / scene.eps_r[c];
    }
    // family symmetry of the target
    let dir = Direction { p };
    let projected = symmetry_project(&dir, scene);
    for c in 0..grid.cell_count() {
        if scene.opt.contains(c) && (projected.p[c] - dir.p[c]).abs() > tol {
            return Err(Violation {
                rule: "target-symmetry".to_string(),
                cell: Some(grid.cell_coords(c)),
                detail: "target eps breaks the family symmetry".to_string(),
            });
        }
    }
    Ok(dir)
}

/// Project a direction onto the symmetric subspace of the family by
/// averaging over each fiber. Identity for Full3D; idempotent always.
pub fn symmetry_project(direction: &Direction, scene: &MaterialScene) -> Direction {
    match scene.family.kind {
        FamilyKind::Full3D => direction.clone(),
        _ => {
            let mut p = vec![0.0; scene.grid.cell_count()];
            for fiber in fibers(scene) {
                let mean: f64 = fiber.iter().map(|&c| direction.p[c]).sum::<f64>() / fiber.len() as f64;
                for &c in &fiber {
                    p[c] = mean;
                }
            }
            Direction { p }
        }
    }
}

/// Apply `1/ε ← 1/ε + t·p` on D_opt, optionally clipping into the family box.
///
/// Returns the new scene and how many cells were clipped. Without clipping
/// the caller guarantees feasibility of the result.
pub fn perturbed_scene(
    scene: &MaterialScene,
    direction: &Direction,
    t: f64,
    clip: bool,
) -> (MaterialScene, usize) {
    let mut out = scene.clone();
    let fam = &scene.family;
    let (inv_hi, inv_lo) = (1.0 / fam.eps_minus, 1.0 / fam.eps_plus);
    let mut clipped = 0;
    for c in 0..scene.grid.cell_count() {
        if !scene.opt.contains(c) {
            continue;
        }
        let mut inv = 1.0 / scene.eps_r[c] + t * direction.p[c];
        if clip {
            if inv < inv_lo {
                inv = inv_lo;
                clipped += 1;
            } else if inv > inv_hi {
                inv = inv_hi;
                clipped += 1;
            }
        }
        out.eps_r[c] = 1.0 / inv;
    }
    (out, clipped)
}

/// Threshold a switching field into the two-material layout.
///
/// `dead_band` is relative to `max |φ|` over D_opt. Cells with
/// `φ > band` get `eps_plus`, cells with `φ < −band` get `eps_minus`,
/// in-band cells keep their ε. φ is fiber-averaged first so the result
/// stays inside the family.
pub fn bang_bang_round(scene: &MaterialScene, phi: &[f64], dead_band: f64) -> MaterialScene {
    let mut out = scene.clone();
    let mut phi_sym = phi.to_vec();
    if !matches!(scene.family.kind, FamilyKind::Full3D) {
        for fiber in fibers(scene) {
            let mean: f64 = fiber.iter().map(|&c| phi[c]).sum::<f64>() / fiber.len() as f64;
            for &c in &fiber {
                phi_sym[c] = mean;
            }
        }
    }
    let max_abs = (0..scene.grid.cell_count())
        .filter(|&c| scene.opt.contains(c))
        .map(|c| phi_sym[c].abs())
        .fold(0.0_f64, f64::max);
    let band = dead_band * max_abs;
    for c in 0..scene.grid.cell_count() {
        if !scene.opt.contains(c) {
            continue;
        }
        if phi_sym[c] > band {
            out.eps_r[c] = scene.family.eps_plus;
        } else if phi_sym[c] < -band {
            out.eps_r[c] = scene.family.eps_minus;
        }
    }
    out
}

/// Default relative dead band for bang-bang rounding.
pub const DEFAULT_DEAD_BAND: f64 = 1e-10;

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> MaterialScene {
        let grid = Grid::new([4, 4, 8], [0.25, 0.25, 0.125], [0.0; 3]).unwrap();
        let n = grid.cell_count();
        let opt = RegionMask::from_box(&grid, [1, 1, 2], [3, 3, 6]);
        let family = FeasibleFamily {
            eps_minus: 1.0,
            eps_plus: 4.0,
            eps_out: vec![1.0; n],
            kind: FamilyKind::Full3D,
        };
        let boundary = BoundarySpec::all_impedance(&grid, 2.0);
        MaterialScene {
            grid,
            opt,
            family,
            eps_r: vec![1.0; n],
            sigma: vec![0.0; n],
            boundary,
        }
    }

    #[test]
    fn uniform_scene_at_lower_bound_is_feasible() {
        let scene = small_scene();
        let report = validate_scene(&scene);
        assert!(report.is_empty(), "{}", report);
    }

    #[test]
    fn upper_bound_violation_names_cell_and_rule() {
        let mut scene = small_scene();
        let c = scene.grid.cell(2, 2, 3);
        scene.eps_r[c] = scene.family.eps_plus * 1.01;
        let report = validate_scene(&scene);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].rule, "eps-upper-bound");
        assert_eq!(report.violations[0].cell, Some([2, 2, 3]));
    }

    #[test]
    fn cylinder_symmetry_violation_reported() {
        let mut scene = small_scene();
        scene.family.kind = FamilyKind::Cylinder2D { c_minus: 2, c_plus: 6 };
        let c = scene.grid.cell(1, 1, 3);
        scene.eps_r[c] = 2.0;
        let report = validate_scene(&scene);
        assert!(report.violations.iter().any(|v| v.rule == "cylinder-symmetry"));
    }

    #[test]
    fn sigma_in_opt_rejected() {
        let mut scene = small_scene();
        let c = scene.grid.cell(1, 1, 2);
        scene.sigma[c] = 0.3;
        let report = validate_scene(&scene);
        assert!(report.violations.iter().any(|v| v.rule == "sigma-in-opt"));
    }

    #[test]
    fn admissible_direction_identity_and_arithmetic() {
        let mut scene = small_scene();
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                scene.eps_r[c] = 2.0;
            }
        }
        // target == eps_r -> p == 0
        let d = admissible_direction(&scene, &scene.eps_r.clone()).unwrap();
        assert!(d.p.iter().all(|&v| v == 0.0));
        // eps 2 -> 4 gives p = 1/4 - 1/2 = -0.25
        let target = vec![4.0; scene.grid.cell_count()];
        let d = admissible_direction(&scene, &target).unwrap();
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                assert!((d.p[c] + 0.25).abs() < 1e-15);
            } else {
                assert_eq!(d.p[c], 0.0);
            }
        }
    }

    #[test]
    fn direction_at_box_bound() {
        let scene = small_scene(); // eps_r = eps_minus = 1
        let target = vec![4.0; scene.grid.cell_count()];
        let d = admissible_direction(&scene, &target).unwrap();
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                let (lo, _hi) = direction_bounds(&scene, c);
                assert!((d.p[c] - lo).abs() < 1e-15, "p at lower box bound");
                assert!(d.p[c] < 0.0);
            }
        }
    }

    #[test]
    fn infeasible_target_names_first_cell() {
        let scene = small_scene();
        let mut target = vec![1.0; scene.grid.cell_count()];
        target[scene.grid.cell(1, 2, 4)] = 9.0;
        let err = admissible_direction(&scene, &target).unwrap_err();
        assert_eq!(err.rule, "target-infeasible");
        assert_eq!(err.cell, Some([1, 2, 4]));
    }

    #[test]
    fn round_trip_reconstructs_target() {
        let mut scene = small_scene();
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                scene.eps_r[c] = 1.7;
            }
        }
        let mut target = scene.eps_r.clone();
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                target[c] = 3.1;
            }
        }
        let d = admissible_direction(&scene, &target).unwrap();
        let (new_scene, clipped) = perturbed_scene(&scene, &d, 1.0, false);
        assert_eq!(clipped, 0);
        for c in 0..scene.grid.cell_count() {
            let rel = (new_scene.eps_r[c] - target[c]).abs() / target[c];
            assert!(rel <= 1e-12, "round trip off by {}", rel);
        }
    }

    #[test]
    fn symmetry_project_cases() {
        let mut scene = small_scene();
        scene.family.kind = FamilyKind::Cylinder2D { c_minus: 2, c_plus: 6 };
        let n = scene.grid.cell_count();
        // +1 on upper half of each column, -1 on lower half -> zero mean
        let mut p = vec![0.0; n];
        for c in 0..n {
            if scene.opt.contains(c) {
                let [_, _, k] = scene.grid.cell_coords(c);
                p[c] = if k >= 4 { 1.0 } else { -1.0 };
            }
        }
        let projected = symmetry_project(&Direction { p }, &scene);
        for c in 0..n {
            assert!(projected.p[c].abs() < 1e-15);
        }
        // Full3D: identity
        let scene3 = small_scene();
        let p: Vec<f64> = (0..n).map(|c| if scene3.opt.contains(c) { c as f64 } else { 0.0 }).collect();
        let d = Direction { p: p.clone() };
        assert_eq!(symmetry_project(&d, &scene3).p, p);
    }

    #[test]
    fn bang_bang_round_rules() {
        let scene = small_scene();
        let n = scene.grid.cell_count();
        // phi = 0 -> unchanged
        let out = bang_bang_round(&scene, &vec![0.0; n], DEFAULT_DEAD_BAND);
        assert_eq!(out.eps_r, scene.eps_r);
        // phi > 0 everywhere, zero dead band -> eps_plus on D_opt
        let out = bang_bang_round(&scene, &vec![0.5; n], 0.0);
        for c in 0..n {
            if scene.opt.contains(c) {
                assert_eq!(out.eps_r[c], scene.family.eps_plus);
            } else {
                assert_eq!(out.eps_r[c], scene.eps_r[c]);
            }
        }
    }

    #[test]
    fn projection_preserves_feasibility_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let mut scene = small_scene();
            if trial % 3 == 1 {
                scene.family.kind = FamilyKind::Cylinder2D { c_minus: 2, c_plus: 6 };
            } else if trial % 3 == 2 {
                let cs: Vec<bool> = (0..16)
                    .map(|ij| {
                        let (i, j) = (ij / 4, ij % 4);
                        (1..3).contains(&i) && (1..3).contains(&j)
                    })
                    .collect();
                scene.family.kind = FamilyKind::Slab1D { cross_section: cs };
            }
            // start from a random symmetric feasible eps
            for fiber in fibers(&scene) {
                let e = rng.gen_range(scene.family.eps_minus..=scene.family.eps_plus);
                for &c in &fiber {
                    scene.eps_r[c] = e;
                }
            }
            assert!(validate_scene(&scene).is_empty());
            let phi: Vec<f64> = (0..scene.grid.cell_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let band = rng.gen_range(0.0..0.5);
            let rounded = bang_bang_round(&scene, &phi, band);
            let report = validate_scene(&rounded);
            assert!(report.is_empty(), "trial {}: {}", trial, report);
        }
    }

    #[test]
    fn symmetry_projection_idempotent_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut scene = small_scene();
        scene.family.kind = FamilyKind::Cylinder2D { c_minus: 2, c_plus: 6 };
        for _ in 0..50 {
            let p: Vec<f64> = (0..scene.grid.cell_count())
                .map(|c| if scene.opt.contains(c) { rng.gen_range(-1.0..1.0) } else { 0.0 })
                .collect();
            let once = symmetry_project(&Direction { p }, &scene);
            let twice = symmetry_project(&once, &scene);
            for c in 0..scene.grid.cell_count() {
                assert!((once.p[c] - twice.p[c]).abs() < 1e-15);
            }
        }
    }
}
