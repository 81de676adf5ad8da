//! Canonical scenes and layered profiles used across tests and examples.
//!
//! Every builder is pure and deterministic. Slab testbeds are quasi-1D:
//! 2×2 lateral cells closed by magnetic walls (x) and electric walls (y),
//! which the TEM polarization satisfies exactly, so the discrete problem
//! reduces to the 1D three-point scheme and the transfer-matrix dispersion
//! function is an independent oracle for the same physics.

use crate::maxwell::LayeredProfile1D;
use crate::medium::{
    BoundarySpec, FamilyKind, FeasibleFamily, Grid, MaterialScene, RegionMask, SideBc,
};

/// Air and silicon permittivities used by the optimization testbeds.
pub const EPS_AIR: f64 = 1.0;
pub const EPS_SILICON: f64 = 11.9716;

/// What a named testbed builds.
pub enum Testbed {
    Scene(MaterialScene),
    Profile(LayeredProfile1D),
}

impl Testbed {
    pub fn into_scene(self) -> Option<MaterialScene> {
        match self {
            Testbed::Scene(s) => Some(s),
            Testbed::Profile(_) => None,
        }
    }

    pub fn into_profile(self) -> Option<LayeredProfile1D> {
        match self {
            Testbed::Profile(p) => Some(p),
            Testbed::Scene(_) => None,
        }
    }
}

/// Quasi-1D scene sampling a layered profile onto `nz` cells along z.
///
/// Boundary closure: magnetic x-walls, electric y-walls, electric wall at
/// z = 0, impedance 𝒵 = 1/γ at z = L. D_opt spans the full cross-section
/// and the interior z-range, one cell clear of each z end.
pub fn slab_scene_from_profile(
    profile: &LayeredProfile1D,
    nz: usize,
    eps_plus: f64,
) -> MaterialScene {
    let length = profile.length();
    let grid = Grid::new([2, 2, nz], [0.25, 0.25, length / nz as f64], [0.0; 3]).unwrap();
    let n = grid.cell_count();
    let mut eps = vec![1.0; n];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..nz {
                let z = (k as f64 + 0.5) * grid.spacing[2];
                let mut acc = 0.0;
                let mut val = profile.layers.last().unwrap().1;
                for &(d, e) in &profile.layers {
                    if z < acc + d {
                        val = e;
                        break;
                    }
                    acc += d;
                }
                eps[grid.cell(i, j, k)] = val;
            }
        }
    }
    let z_imp = 1.0 / profile.gamma;
    let faces = |axis| BoundarySpec::side_face_count(&grid, axis);
    let boundary = BoundarySpec {
        sides: [
            [SideBc::Pmc, SideBc::Pmc],
            [SideBc::Pec, SideBc::Pec],
            [SideBc::Pec, SideBc::Impedance(vec![z_imp; faces(2)])],
        ],
    };
    let opt = RegionMask::from_box(&grid, [0, 0, 1], [2, 2, nz - 1]);
    MaterialScene {
        grid,
        opt,
        family: FeasibleFamily {
            eps_minus: 1.0,
            eps_plus,
            eps_out: eps.clone(),
            kind: FamilyKind::Slab1D { cross_section: vec![true; 4] },
        },
        eps_r: eps,
        sigma: vec![0.0; n],
        boundary,
    }
}

fn cube_scene(dims: usize, z_imp: f64, sigma_shell: Option<f64>) -> MaterialScene {
    let grid = Grid::new([dims; 3], [1.0 / dims as f64; 3], [0.0; 3]).unwrap();
    let n = grid.cell_count();
    let q = dims / 4;
    let opt = RegionMask::from_box(&grid, [q; 3], [dims - q; 3]);
    let mut sigma = vec![0.0; n];
    let boundary = match sigma_shell {
        None => BoundarySpec::all_impedance(&grid, z_imp),
        Some(amp) => {
            // absorption shell one cell thick along every side, closed box
            for c in 0..n {
                let [i, j, k] = grid.cell_coords(c);
                let on_shell = [i, j, k]
                    .iter()
                    .enumerate()
                    .any(|(a, &m)| m == 0 || m == grid.dims[a] - 1);
                if on_shell {
                    sigma[c] = amp;
                }
            }
            BoundarySpec::all_pec()
        }
    };
    MaterialScene {
        grid,
        opt,
        family: FeasibleFamily {
            eps_minus: EPS_AIR,
            eps_plus: EPS_SILICON,
            eps_out: vec![1.0; n],
            kind: FamilyKind::Full3D,
        },
        eps_r: vec![1.0; n],
        sigma,
        boundary,
    }
}

/// Closed electric-wall brick with distinct side lengths; lossless, the
/// lowest mode is simple with analytic frequency π sqrt(1/Ly² + 1/Lz²) for
/// sides (0.8, 1.0, 1.25).
fn brick_closed() -> MaterialScene {
    let dims = [8, 10, 12];
    let sides = [0.8, 1.0, 1.25];
    let spacing = [sides[0] / 8.0, sides[1] / 10.0, sides[2] / 12.0];
    let grid = Grid::new(dims, spacing, [0.0; 3]).unwrap();
    let n = grid.cell_count();
    let opt = RegionMask::from_box(&grid, [2, 2, 2], [6, 8, 10]);
    MaterialScene {
        grid,
        opt,
        family: FeasibleFamily {
            eps_minus: 1.0,
            eps_plus: 4.0,
            eps_out: vec![1.0; n],
            kind: FamilyKind::Full3D,
        },
        eps_r: vec![1.0; n],
        sigma: vec![0.0; n],
        boundary: BoundarySpec::all_pec(),
    }
}

/// Closed electric-wall cube with equal sides; the lowest nonzero modes are
/// threefold degenerate at π√2, used to exercise the degeneracy verdict.
fn cube_degenerate() -> MaterialScene {
    let m = 10;
    let grid = Grid::new([m; 3], [1.0 / m as f64; 3], [0.0; 3]).unwrap();
    let n = grid.cell_count();
    let opt = RegionMask::from_box(&grid, [3; 3], [m - 3; 3]);
    MaterialScene {
        grid,
        opt,
        family: FeasibleFamily {
            eps_minus: 1.0,
            eps_plus: 4.0,
            eps_out: vec![1.0; n],
            kind: FamilyKind::Full3D,
        },
        eps_r: vec![1.0; n],
        sigma: vec![0.0; n],
        boundary: BoundarySpec::all_pec(),
    }
}

/// Air/silicon optimization slab: uniform feasible start in D_opt.
fn stack_air_si(nz: usize, eps_start: f64) -> MaterialScene {
    let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
    let mut scene = slab_scene_from_profile(&profile, nz, EPS_SILICON);
    for c in 0..scene.grid.cell_count() {
        if scene.opt.contains(c) {
            scene.eps_r[c] = eps_start;
        }
    }
    scene
}

/// Build a named testbed.
///
/// Known names: `slab-uniform` (profile), `slab-uniform-scene`,
/// `stack-air-si`, `cube-impedance`, `cube-absorber`, `brick-closed`,
/// `cube-degenerate`.
pub fn build(name: &str) -> Result<Testbed, String> {
    match name {
        // ε ≡ 1, L = 1, γ = 3; oracle roots πk − (i/2)·ln 2
        "slab-uniform" => Ok(Testbed::Profile(LayeredProfile1D::uniform(1.0, 1.0, 3.0))),
        "slab-uniform-scene" => Ok(Testbed::Scene(slab_scene_from_profile(
            &LayeredProfile1D::uniform(1.0, 1.0, 3.0),
            96,
            EPS_SILICON,
        ))),
        // bounds [1, 11.9716]; uniform feasible start
        "stack-air-si" => Ok(Testbed::Scene(stack_air_si(192, 2.0))),
        "cube-impedance" => Ok(Testbed::Scene(cube_scene(16, 2.0, None))),
        "cube-absorber" => Ok(Testbed::Scene(cube_scene(16, 2.0, Some(4.0)))),
        "brick-closed" => Ok(Testbed::Scene(brick_closed())),
        "cube-degenerate" => Ok(Testbed::Scene(cube_degenerate())),
        other => Err(format!("unknown testbed '{}'", other)),
    }
}

/// Names accepted by [`build`], for CLI listings.
pub const NAMES: [&str; 7] = [
    "slab-uniform",
    "slab-uniform-scene",
    "stack-air-si",
    "cube-impedance",
    "cube-absorber",
    "brick-closed",
    "cube-degenerate",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::validate_scene;

    #[test]
    fn all_scene_testbeds_validate() {
        for name in NAMES {
            match build(name).unwrap() {
                Testbed::Scene(s) => {
                    let report = validate_scene(&s);
                    assert!(report.is_empty(), "{}: {}", name, report);
                }
                Testbed::Profile(p) => {
                    assert!(p.length() > 0.0);
                    assert!(p.gamma > 0.0);
                }
            }
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        assert!(build("no-such-testbed").is_err());
    }

    #[test]
    fn absorber_sigma_confined_to_outer_shell() {
        let scene = build("cube-absorber").unwrap().into_scene().unwrap();
        for c in 0..scene.grid.cell_count() {
            if scene.sigma[c] > 0.0 {
                assert!(!scene.opt.contains(c));
                let [i, j, k] = scene.grid.cell_coords(c);
                let on_shell = [i, j, k]
                    .iter()
                    .enumerate()
                    .any(|(a, &m)| m == 0 || m == scene.grid.dims[a] - 1);
                assert!(on_shell);
            }
        }
        // at least one cell of clearance between the shell and D_opt
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                let [i, j, k] = scene.grid.cell_coords(c);
                for (a, &m) in [i, j, k].iter().enumerate() {
                    assert!(m >= 2 && m <= scene.grid.dims[a] - 3);
                }
            }
        }
    }

    #[test]
    fn testbeds_regenerate_bit_identically() {
        for name in NAMES {
            match (build(name).unwrap(), build(name).unwrap()) {
                (Testbed::Scene(a), Testbed::Scene(b)) => assert!(a == b, "{}", name),
                (Testbed::Profile(a), Testbed::Profile(b)) => assert!(a == b, "{}", name),
                _ => panic!("nondeterministic kind for {}", name),
            }
        }
    }
}
