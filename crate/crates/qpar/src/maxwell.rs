//! Discrete Maxwell pseudo-Hamiltonian on a staggered grid, plus the exact
//! transfer-matrix dispersion function for layered 1D cavities.
//!
//! The operator acts on Ψ = [E H] as
//!
//! ```text
//! Ψ ↦ ( (i ∇×H − i σ E) / ε ,  −i ∇×E )        (ε₀ = μ₀ = 1)
//! ```
//!
//! with E components on cell edges and H components on cell faces. Boundary
//! faces are closed per side by one of three ghost relations: tangential
//! E = 0 (electric wall), tangential H = 0 (magnetic wall), or the impedance
//! relation n×E = 𝒵 H_τ with H_τ at the wall taken as the centered average
//! of the interior and ghost face values. Electric-wall tangential E values
//! are eliminated from the unknown vector; everything else stays.
//!
//! With dual-cell volume weights (halved for components lying on walls) the
//! weighted operator Λ·M, Λ = diag(ε·vol) ⊕ diag(−vol), is exactly symmetric.
//! That gives the unconjugated pairing its adjoint property and makes the
//! first-order eigenvalue sensitivities exact for the discrete problem.


use crate::medium::{validate_scene, MaterialScene, SideBc, ValidationReport};
use crate::C64;

const I: C64 = C64::new(0.0, 1.0);

/// Component ids: 0..3 = Ex, Ey, Ez; 3..6 = Hx, Hy, Hz.
pub const COMPONENTS: [&str; 6] = ["Ex", "Ey", "Ez", "Hx", "Hy", "Hz"];

#[inline]
fn next_axis(a: usize) -> usize {
    (a + 1) % 3
}

/// Array shapes of the six staggered components for a given grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Layout {
    pub fn of(scene: &MaterialScene) -> Self {
        Layout { dims: scene.grid.dims, spacing: scene.grid.spacing }
    }

    /// Shape of component `c`'s array.
    pub fn comp_dims(&self, c: usize) -> [usize; 3] {
        let a = c % 3;
        let mut d = self.dims;
        if c < 3 {
            // E_a: integer coordinates along the two transverse axes
            for u in 0..3 {
                if u != a {
                    d[u] += 1;
                }
            }
        } else {
            // H_a: integer coordinate along its own axis
            d[a] += 1;
        }
        d
    }

    pub fn comp_len(&self, c: usize) -> usize {
        let d = self.comp_dims(c);
        d[0] * d[1] * d[2]
    }

    #[inline]
    pub fn idx(&self, c: usize, p: [usize; 3]) -> usize {
        let d = self.comp_dims(c);
        (p[0] * d[1] + p[1]) * d[2] + p[2]
    }

    pub fn coords(&self, c: usize, flat: usize) -> [usize; 3] {
        let d = self.comp_dims(c);
        let k = flat % d[2];
        let r = flat / d[2];
        [r / d[1], r % d[1], k]
    }

    /// Axes along which component `c` has integer (node) coordinates.
    pub fn integer_axes(&self, c: usize) -> Vec<usize> {
        let a = c % 3;
        if c < 3 {
            (0..3).filter(|&u| u != a).collect()
        } else {
            vec![a]
        }
    }

    /// Dual-cell volume of the location; wall-lying components get half
    /// weight per wall they lie on.
    pub fn dual_volume(&self, c: usize, p: [usize; 3]) -> f64 {
        let mut v = self.spacing[0] * self.spacing[1] * self.spacing[2];
        for u in self.integer_axes(c) {
            if p[u] == 0 || p[u] == self.dims[u] {
                v *= 0.5;
            }
        }
        v
    }

    /// Cells adjacent to an E-location (up to four).
    pub fn cells_of_e(&self, c: usize, p: [usize; 3], out: &mut Vec<[usize; 3]>) {
        debug_assert!(c < 3);
        out.clear();
        let a = c % 3;
        let (u, v) = (next_axis(a), next_axis(next_axis(a)));
        for du in 0..2usize {
            if p[u] + du == 0 || p[u] + du > self.dims[u] {
                continue;
            }
            for dv in 0..2usize {
                if p[v] + dv == 0 || p[v] + dv > self.dims[v] {
                    continue;
                }
                let mut cell = p;
                cell[u] = p[u] + du - 1;
                cell[v] = p[v] + dv - 1;
                out.push(cell);
            }
        }
    }
}

/// Discrete eigenfield Ψ = [E H] stored on the staggered arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub layout: Layout,
    /// Component arrays in Ex, Ey, Ez, Hx, Hy, Hz order.
    pub comps: [Vec<C64>; 6],
}

impl Field {
    pub fn zeros(layout: &Layout) -> Self {
        let comps = std::array::from_fn(|c| vec![C64::new(0.0, 0.0); layout.comp_len(c)]);
        Field { layout: layout.clone(), comps }
    }

    pub fn e(&self, axis: usize) -> &[C64] {
        &self.comps[axis]
    }

    pub fn h(&self, axis: usize) -> &[C64] {
        &self.comps[3 + axis]
    }

    pub fn norm(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: C64) {
        for comp in self.comps.iter_mut() {
            for z in comp.iter_mut() {
                *z *= s;
            }
        }
    }

    /// The adjoint eigenstate map Ψ⋆ = (conj E, −conj H); an involution.
    pub fn adjoint_state(&self) -> Field {
        let mut out = self.clone();
        for c in 0..6 {
            for z in out.comps[c].iter_mut() {
                *z = if c < 3 { z.conj() } else { -z.conj() };
            }
        }
        out
    }
}

/// Interpolate E to cell centers; returns three per-cell arrays.
pub fn e_at_cell_centers(field: &Field) -> [Vec<C64>; 3] {
    let lay = &field.layout;
    let [nx, ny, nz] = lay.dims;
    let mut out: [Vec<C64>; 3] = std::array::from_fn(|_| vec![C64::new(0.0, 0.0); nx * ny * nz]);
    for a in 0..3 {
        let (u, v) = (next_axis(a), next_axis(next_axis(a)));
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let cell = [i, j, k];
                    let mut acc = C64::new(0.0, 0.0);
                    for du in 0..2 {
                        for dv in 0..2 {
                            let mut p = cell;
                            p[u] += du;
                            p[v] += dv;
                            acc += field.comps[a][lay.idx(a, p)];
                        }
                    }
                    out[a][(i * ny + j) * nz + k] = acc * 0.25;
                }
            }
        }
    }
    out
}

/// One reference produced by the stencil walkers.
enum ERowTerm {
    /// coefficient on an H component value
    H { comp: usize, flat: usize, coef: f64 },
    /// coefficient on the row's own E value (impedance ghost)
    SelfE { coef: f64 },
}

/// The assembled pseudo-Hamiltonian with its scene and index maps.
pub struct DiscreteOperator {
    pub layout: Layout,
    pub scene: MaterialScene,
    /// dof index per component location; `None` marks electric-wall slaved E.
    pub dof: [Vec<Option<usize>>; 6],
    /// inverse map dof -> (comp, flat)
    pub locs: Vec<(usize, usize)>,
    pub n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
    /// arithmetic-mean ε at E locations (full arrays)
    pub eps_loc: [Vec<f64>; 3],
    /// arithmetic-mean σ at E locations
    pub sig_loc: [Vec<f64>; 3],
    /// dual volumes per component location
    pub vol_loc: [Vec<f64>; 6],
    /// impedance ghost diagonal (the E-proportional part of the closed curl)
    pub ghost_diag: [Vec<f64>; 3],
}

/// Assemble the operator for a feasible scene.
///
/// Refuses with the validation report if the scene violates any invariant.
pub fn assemble(scene: &MaterialScene) -> Result<DiscreteOperator, ValidationReport> {
    let report = validate_scene(scene);
    if !report.is_empty() {
        return Err(report);
    }
    Ok(assemble_unchecked(scene))
}

fn assemble_unchecked(scene: &MaterialScene) -> DiscreteOperator {
    let layout = Layout::of(scene);
    let grid = &scene.grid;

    // material coefficients at E locations
    let mut eps_loc: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; layout.comp_len(a)]);
    let mut sig_loc: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; layout.comp_len(a)]);
    let mut cells = Vec::with_capacity(4);
    for a in 0..3 {
        for flat in 0..layout.comp_len(a) {
            let p = layout.coords(a, flat);
            layout.cells_of_e(a, p, &mut cells);
            let n = cells.len() as f64;
            let mut e = 0.0;
            let mut s = 0.0;
            for cell in &cells {
                let c = grid.cell(cell[0], cell[1], cell[2]);
                e += scene.eps_r[c];
                s += scene.sigma[c];
            }
            eps_loc[a][flat] = e / n;
            sig_loc[a][flat] = s / n;
        }
    }

    let mut vol_loc: [Vec<f64>; 6] = std::array::from_fn(|c| {
        (0..layout.comp_len(c))
            .map(|flat| layout.dual_volume(c, layout.coords(c, flat)))
            .collect()
    });
    // slaved entries carry no weight
    for a in 0..3 {
        for flat in 0..layout.comp_len(a) {
            if e_is_slaved(scene, &layout, a, layout.coords(a, flat)) {
                vol_loc[a][flat] = 0.0;
            }
        }
    }

    // dof numbering: E components first, then H, row-major each
    let mut dof: [Vec<Option<usize>>; 6] =
        std::array::from_fn(|c| vec![None; layout.comp_len(c)]);
    let mut locs = Vec::new();
    let mut n = 0usize;
    for c in 0..6 {
        for flat in 0..layout.comp_len(c) {
            let slaved = c < 3 && e_is_slaved(scene, &layout, c, layout.coords(c, flat));
            if !slaved {
                dof[c][flat] = Some(n);
                locs.push((c, flat));
                n += 1;
            }
        }
    }

    let mut ghost_diag: [Vec<f64>; 3] = std::array::from_fn(|a| vec![0.0; layout.comp_len(a)]);
    let mut triplets: Vec<(usize, usize, C64)> = Vec::with_capacity(n * 5);

    // E rows: (i/eps) * (closed curl of H) - i*(sigma/eps) * E
    for a in 0..3 {
        for flat in 0..layout.comp_len(a) {
            let row = match dof[a][flat] {
                Some(r) => r,
                None => continue,
            };
            let p = layout.coords(a, flat);
            let ibeta = I / eps_loc[a][flat];
            walk_e_row(scene, &layout, a, p, |term| match term {
                ERowTerm::H { comp, flat: hf, coef } => {
                    let col = dof[comp][hf].expect("H locations are always dofs");
                    triplets.push((row, col, ibeta * coef));
                }
                ERowTerm::SelfE { coef } => {
                    ghost_diag[a][flat] += coef;
                    triplets.push((row, row, ibeta * coef));
                }
            });
            let s = sig_loc[a][flat];
            if s != 0.0 {
                triplets.push((row, row, -I * s / eps_loc[a][flat]));
            }
        }
    }

    // H rows: -i * curl of E (electric-wall entries are structural zeros)
    for ha in 0..3 {
        let c = 3 + ha;
        for flat in 0..layout.comp_len(c) {
            let row = dof[c][flat].expect("H locations are always dofs");
            let p = layout.coords(c, flat);
            walk_h_row(&layout, ha, p, |e_comp, e_flat, coef| {
                if let Some(col) = dof[e_comp][e_flat] {
                    triplets.push((row, col, -I * coef));
                }
            });
        }
    }

    let (row_ptr, col_idx, vals) = triplets_to_csr(n, &mut triplets);

    DiscreteOperator {
        layout,
        scene: scene.clone(),
        dof,
        locs,
        n,
        row_ptr,
        col_idx,
        vals,
        eps_loc,
        sig_loc,
        vol_loc,
        ghost_diag,
    }
}

/// Is the tangential E at this location eliminated by an electric wall?
fn e_is_slaved(scene: &MaterialScene, layout: &Layout, a: usize, p: [usize; 3]) -> bool {
    for u in 0..3 {
        if u == a {
            continue;
        }
        if p[u] == 0 && scene.boundary.sides[u][0] == SideBc::Pec {
            return true;
        }
        if p[u] == layout.dims[u] && scene.boundary.sides[u][1] == SideBc::Pec {
            return true;
        }
    }
    false
}

/// Average impedance of the wall (axis `u`, `side`) seen from an E_a location.
///
/// The E location projects to one or two boundary cell faces along its other
/// integer axis; their 𝒵 values are averaged.
fn impedance_at(layout: &Layout, z: &[f64], u: usize, a: usize, p: [usize; 3]) -> f64 {
    // axes spanning the wall, ascending; the later one varies fastest
    let (v1, v2) = match u {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let dims = layout.dims;
    let coord = |axis: usize| -> (usize, usize, usize) {
        // returns (lo, hi, count) of face-cell indices along `axis`
        if axis == a {
            // half coordinate: exactly one face cell
            (p[axis], p[axis], 1)
        } else {
            // integer coordinate: straddles two face cells, clamped
            let lo = p[axis].saturating_sub(1);
            let hi = p[axis].min(dims[axis] - 1);
            (lo, hi, hi - lo + 1)
        }
    };
    let (lo1, hi1, _) = coord(v1);
    let (lo2, hi2, _) = coord(v2);
    let mut acc = 0.0;
    let mut cnt = 0.0;
    for c1 in lo1..=hi1 {
        for c2 in lo2..=hi2 {
            acc += z[c1 * dims[v2] + c2];
            cnt += 1.0;
        }
    }
    acc / cnt
}

/// Emit the closed-curl-of-H terms of the Ampère row for E_a at `p`.
///
/// Terms come without the i/ε factor; callers scale.
fn walk_e_row<F: FnMut(ERowTerm)>(
    scene: &MaterialScene,
    layout: &Layout,
    a: usize,
    p: [usize; 3],
    mut sink: F,
) {
    let b = next_axis(a);
    let c_ax = next_axis(b);
    // (sign, differencing axis u, H component t)
    let terms = [(1.0, b, c_ax), (-1.0, c_ax, b)];
    for &(sign, u, t) in &terms {
        let h = layout.spacing[u];
        let hcomp = 3 + t;
        let nu = layout.dims[u];
        if p[u] == 0 || p[u] == nu {
            let side = if p[u] == 0 { 0 } else { 1 };
            let sgn_wall = if side == 0 { -1.0 } else { 1.0 };
            // E_a plays the second tangential role when u is the axis after a
            let q = if u == next_axis(a) { -sgn_wall } else { sgn_wall };
            let inner_idx = if side == 0 { 0 } else { nu - 1 };
            let mut ph = p;
            ph[u] = inner_idx;
            let inner = layout.idx(hcomp, ph);
            match &scene.boundary.sides[u][side] {
                SideBc::Pec => unreachable!("slaved rows are skipped"),
                SideBc::Pmc => {
                    let coef = if side == 0 { 2.0 / h } else { -2.0 / h };
                    sink(ERowTerm::H { comp: hcomp, flat: inner, coef: sign * coef });
                }
                SideBc::Impedance(z) => {
                    let zval = impedance_at(layout, z, u, a, p);
                    let (h_coef, e_coef) = if side == 0 {
                        (2.0 / h, -2.0 * q / (zval * h))
                    } else {
                        (-2.0 / h, 2.0 * q / (zval * h))
                    };
                    sink(ERowTerm::H { comp: hcomp, flat: inner, coef: sign * h_coef });
                    sink(ERowTerm::SelfE { coef: sign * e_coef });
                }
            }
        } else {
            let mut ph = p;
            ph[u] = p[u];
            let up = layout.idx(hcomp, ph);
            ph[u] = p[u] - 1;
            let dn = layout.idx(hcomp, ph);
            sink(ERowTerm::H { comp: hcomp, flat: up, coef: sign / h });
            sink(ERowTerm::H { comp: hcomp, flat: dn, coef: -sign / h });
        }
    }
}

/// Emit the curl-of-E terms of the Faraday row for H_a at `p`.
fn walk_h_row<F: FnMut(usize, usize, f64)>(layout: &Layout, a: usize, p: [usize; 3], mut sink: F) {
    let b = next_axis(a);
    let c_ax = next_axis(b);
    let terms = [(1.0, b, c_ax), (-1.0, c_ax, b)];
    for &(sign, u, t) in &terms {
        let h = layout.spacing[u];
        let mut pe = p;
        pe[u] = p[u] + 1;
        sink(t, layout.idx(t, pe), sign / h);
        pe[u] = p[u];
        sink(t, layout.idx(t, pe), -sign / h);
    }
}

fn triplets_to_csr(
    n: usize,
    triplets: &mut Vec<(usize, usize, C64)>,
) -> (Vec<usize>, Vec<usize>, Vec<C64>) {
    triplets.sort_by_key(|&(r, c, _)| (r, c));
    let mut row_ptr = vec![0usize; n + 1];
    let mut col_idx = Vec::with_capacity(triplets.len());
    let mut vals: Vec<C64> = Vec::with_capacity(triplets.len());
    let mut i = 0;
    while i < triplets.len() {
        let (r, c, mut v) = triplets[i];
        let mut j = i + 1;
        while j < triplets.len() && triplets[j].0 == r && triplets[j].1 == c {
            v += triplets[j].2;
            j += 1;
        }
        col_idx.push(c);
        vals.push(v);
        row_ptr[r + 1] += 1;
        i = j;
    }
    for r in 0..n {
        row_ptr[r + 1] += row_ptr[r];
    }
    (row_ptr, col_idx, vals)
}

impl DiscreteOperator {
    /// Signed energy-form weight of a dof: +ε·vol for E, −vol for H.
    pub fn signed_weight(&self, d: usize) -> f64 {
        let (c, flat) = self.locs[d];
        if c < 3 {
            self.eps_loc[c][flat] * self.vol_loc[c][flat]
        } else {
            -self.vol_loc[c][flat]
        }
    }

    /// Unsigned energy weight (for norms).
    pub fn energy_weight(&self, d: usize) -> f64 {
        self.signed_weight(d).abs()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sparse matvec on a dof vector.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n);
        for r in 0..self.n {
            let mut acc = C64::new(0.0, 0.0);
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[idx] * x[self.col_idx[idx]];
            }
            y[r] = acc;
        }
    }

    /// Transpose matvec (used by the adjoint-identity checks).
    pub fn matvec_transpose(&self, x: &[C64], y: &mut [C64]) {
        for v in y.iter_mut() {
            *v = C64::new(0.0, 0.0);
        }
        for r in 0..self.n {
            let xr = x[r];
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[idx]] += self.vals[idx] * xr;
            }
        }
    }

    /// CSR triplets iterator (row, col, value).
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.n).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.col_idx[i], self.vals[i]))
        })
    }

    /// Extract the dof vector of a field (slaved entries are dropped).
    pub fn field_to_dofs(&self, field: &Field) -> Vec<C64> {
        let mut x = vec![C64::new(0.0, 0.0); self.n];
        for (d, &(c, flat)) in self.locs.iter().enumerate() {
            x[d] = field.comps[c][flat];
        }
        x
    }

    /// Materialize a dof vector as a field; slaved entries become zero.
    pub fn dofs_to_field(&self, x: &[C64]) -> Field {
        let mut f = Field::zeros(&self.layout);
        for (d, &(c, flat)) in self.locs.iter().enumerate() {
            f.comps[c][flat] = x[d];
        }
        f
    }

    /// Apply the operator to a field.
    pub fn apply(&self, field: &Field) -> Field {
        let x = self.field_to_dofs(field);
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        self.matvec(&x, &mut y);
        self.dofs_to_field(&y)
    }

    /// Unconjugated pairing ⟨Ψ, Φ⋆⟩_ε = Σ ε E·E' vol − Σ H·H' vol.
    pub fn pairing(&self, a: &Field, b: &Field) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for c in 0..6 {
            let w = &self.vol_loc[c];
            for (flat, (&x, &y)) in a.comps[c].iter().zip(b.comps[c].iter()).enumerate() {
                if c < 3 {
                    acc += self.eps_loc[c][flat] * w[flat] * x * y;
                } else {
                    acc -= w[flat] * x * y;
                }
            }
        }
        acc
    }

    /// Positive energy norm squared ‖Ψ‖²_ε = Σ ε|E|² vol + Σ |H|² vol.
    pub fn energy_norm_sq(&self, f: &Field) -> f64 {
        let mut acc = 0.0;
        for c in 0..6 {
            let w = &self.vol_loc[c];
            for (flat, &x) in f.comps[c].iter().enumerate() {
                let coef = if c < 3 { self.eps_loc[c][flat] * w[flat] } else { w[flat] };
                acc += coef * x.norm_sqr();
            }
        }
        acc
    }

    /// Residual ‖MΨ − ωΨ‖ / ‖Ψ‖ in the plain dof 2-norm.
    pub fn eigen_residual(&self, omega: C64, x: &[C64]) -> f64 {
        let mut y = vec![C64::new(0.0, 0.0); self.n];
        self.matvec(x, &mut y);
        let mut num = 0.0;
        let mut den = 0.0;
        for d in 0..self.n {
            num += (y[d] - omega * x[d]).norm_sqr();
            den += x[d].norm_sqr();
        }
        (num / den).sqrt()
    }

    /// Discrete curl of E evaluated at H locations (array reads; electric
    /// walls hold zeros in legitimate fields).
    pub fn curl_e(&self, e: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
        let lay = &self.layout;
        let mut out: [Vec<C64>; 3] =
            std::array::from_fn(|a| vec![C64::new(0.0, 0.0); lay.comp_len(3 + a)]);
        for a in 0..3 {
            for flat in 0..lay.comp_len(3 + a) {
                let p = lay.coords(3 + a, flat);
                let mut acc = C64::new(0.0, 0.0);
                walk_h_row(lay, a, p, |e_comp, e_flat, coef| {
                    acc += coef * e[e_comp][e_flat];
                });
                out[a][flat] = acc;
            }
        }
        out
    }

    /// H-linear part of the closed curl of H at E locations (magnetic-wall
    /// ghosts folded in; impedance ghost E-parts live in [`Self::ghost_diag`]).
    pub fn curl_h_hpart(&self, h: &[Vec<C64>; 3]) -> [Vec<C64>; 3] {
        let lay = &self.layout;
        let mut out: [Vec<C64>; 3] =
            std::array::from_fn(|a| vec![C64::new(0.0, 0.0); lay.comp_len(a)]);
        for a in 0..3 {
            for flat in 0..lay.comp_len(a) {
                let p = lay.coords(a, flat);
                if e_is_slaved(&self.scene, lay, a, p) {
                    continue;
                }
                let mut acc = C64::new(0.0, 0.0);
                walk_e_row(&self.scene, lay, a, p, |term| {
                    if let ERowTerm::H { comp, flat: hf, coef } = term {
                        acc += coef * h[comp - 3][hf];
                    }
                });
                out[a][flat] = acc;
            }
        }
        out
    }

    /// Discrete ∇×∇×E with the cavity closure: curl_h(curl_e E) + iω·ghost·E.
    ///
    /// For an exact discrete eigenfield this equals ω²ε_loc E + iωσ_loc E.
    pub fn curl_curl_e(&self, e: &[Vec<C64>; 3], omega: C64) -> [Vec<C64>; 3] {
        let ce = self.curl_e(e);
        let mut out = self.curl_h_hpart(&ce);
        for a in 0..3 {
            for flat in 0..out[a].len() {
                out[a][flat] += I * omega * self.ghost_diag[a][flat] * e[a][flat];
            }
        }
        out
    }

    /// Coordinate-list text export, one `row col re im` line per entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for (r, c, v) in self.entries() {
            s.push_str(&format!("{} {} {:.17e} {:.17e}\n", r, c, v.re, v.im));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// exact 1D TEM dispersion for layered cavities
// ---------------------------------------------------------------------------

/// Layered 1D cavity: mirror at s = 0 (field zero), impedance closure
/// γ = 1/z at s = L. Zeros of [`dispersion_1d`] are its TEM eigenfrequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredProfile1D {
    /// (thickness, ε) per layer, left to right.
    pub layers: Vec<(f64, f64)>,
    /// Admittance γ = 1/z of the right termination, z vacuum-normalized.
    pub gamma: f64,
}

impl LayeredProfile1D {
    pub fn uniform(eps: f64, length: f64, gamma: f64) -> Self {
        LayeredProfile1D { layers: vec![(length, eps)], gamma }
    }

    pub fn length(&self) -> f64 {
        self.layers.iter().map(|l| l.0).sum()
    }
}

/// cos(q d) and sin(q d)/q with series fallback near q d = 0; both entire.
fn layer_entries(q2: C64, d: f64) -> (C64, C64) {
    // q² = ε ω²; the entries depend on q² only
    let q2d2 = q2 * d * d;
    if q2d2.norm() < 1e-8 {
        let c = 1.0 - q2d2 * 0.5 + q2d2 * q2d2 / 24.0;
        let s = d * (1.0 - q2d2 / 6.0 + q2d2 * q2d2 / 120.0);
        (c, s)
    } else {
        let q = q2.sqrt();
        ((q * d).cos(), (q * d).sin() / q)
    }
}

/// Evaluate the analytic dispersion function f(ω) = y'(L) − iωγ y(L),
/// propagating y(0) = 0, y'(0) = 1 through the layers by transfer matrices.
pub fn dispersion_1d(profile: &LayeredProfile1D, omega: C64) -> C64 {
    dispersion_1d_with_derivative(profile, omega).0
}

/// f(ω) and df/dω, both exact up to floating error.
pub fn dispersion_1d_with_derivative(profile: &LayeredProfile1D, omega: C64) -> (C64, C64) {
    let mut y = C64::new(0.0, 0.0);
    let mut yp = C64::new(1.0, 0.0);
    let mut dy = C64::new(0.0, 0.0);
    let mut dyp = C64::new(0.0, 0.0);
    for &(d, eps) in &profile.layers {
        let q2 = omega * omega * eps;
        let dq2 = 2.0 * omega * eps; // d(q²)/dω
        let (c, s) = layer_entries(q2, d);
        // derivatives of the entries w.r.t. ω via q²:
        // dc/d(q²) = −d·s/2,  ds/d(q²) = (c·d² − s·d·... ) use closed forms:
        // c = cos(qd): dc/dq² = −(d/(2q))·sin(qd) = −d·s/2
        // s = sin(qd)/q: ds/dq² = (d·c − s)/(2q²)
        let dcdq2 = -0.5 * d * s;
        let dsdq2 = if q2.norm() * d * d < 1e-8 {
            // series: s = d(1 − q²d²/6 + q⁴d⁴/120) → ds/dq² = d³(−1/6 + q²d²/60)
            C64::new(-d * d * d / 6.0, 0.0) + q2 * d * d * d * d * d / 60.0
        } else {
            (C64::new(d, 0.0) * c - s) / (2.0 * q2)
        };
        let m21 = -q2 * s; // −q sin(qd) = −q²·(sin(qd)/q)
        let dm21 = -s - q2 * dsdq2; // d(m21)/dq²
        let (y0, yp0, dy0, dyp0) = (y, yp, dy, dyp);
        y = c * y0 + s * yp0;
        yp = m21 * y0 + c * yp0;
        dy = c * dy0 + s * dyp0 + dq2 * (dcdq2 * y0 + dsdq2 * yp0);
        dyp = m21 * dy0 + c * dyp0 + dq2 * (dm21 * y0 + dcdq2 * yp0);
    }
    let g = profile.gamma;
    let f = yp - I * omega * g * y;
    let df = dyp - I * g * y - I * omega * g * dy;
    (f, df)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{BoundarySpec, FamilyKind, FeasibleFamily, Grid, RegionMask};
    use rand::{Rng, SeedableRng};

    fn mixed_bc_scene(dims: [usize; 3]) -> MaterialScene {
        let grid = Grid::new(dims, [0.31, 0.23, 0.17], [0.0; 3]).unwrap();
        let n = grid.cell_count();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let opt = RegionMask::from_box(&grid, [1, 1, 1], [dims[0] - 1, dims[1] - 1, dims[2] - 1]);
        let mut eps_r = vec![0.0; n];
        let mut sigma = vec![0.0; n];
        let mut eps_out = vec![0.0; n];
        for c in 0..n {
            if opt.contains(c) {
                eps_r[c] = rng.gen_range(1.0..4.0);
            } else {
                let e = rng.gen_range(0.5..3.0);
                eps_r[c] = e;
                eps_out[c] = e;
                sigma[c] = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.8) } else { 0.0 };
            }
        }
        let faces = |axis: usize| BoundarySpec::side_face_count(&grid, axis);
        let boundary = BoundarySpec {
            sides: [
                [SideBc::Pmc, SideBc::Impedance(vec![2.0; faces(0)])],
                [SideBc::Pec, SideBc::Impedance((0..faces(1)).map(|i| 1.0 + 0.1 * i as f64).collect())],
                [SideBc::Impedance(vec![0.7; faces(2)]), SideBc::Pmc],
            ],
        };
        MaterialScene {
            grid,
            opt,
            family: FeasibleFamily { eps_minus: 1.0, eps_plus: 4.0, eps_out, kind: FamilyKind::Full3D },
            eps_r,
            sigma,
            boundary,
        }
    }

    fn random_field(op: &DiscreteOperator, seed: u64) -> Field {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = Field::zeros(&op.layout);
        for (c, flat) in op.locs.iter().copied() {
            f.comps[c][flat] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let scene = mixed_bc_scene([4, 3, 5]);
        let op = assemble(&scene).unwrap();
        let z = Field::zeros(&op.layout);
        assert_eq!(op.apply(&z).norm(), 0.0);
    }

    #[test]
    fn operator_is_linear() {
        let scene = mixed_bc_scene([4, 3, 5]);
        let op = assemble(&scene).unwrap();
        let f1 = random_field(&op, 1);
        let f2 = random_field(&op, 2);
        let (a, b) = (C64::new(0.7, -1.3), C64::new(-0.2, 0.9));
        let mut combo = Field::zeros(&op.layout);
        for c in 0..6 {
            for i in 0..combo.comps[c].len() {
                combo.comps[c][i] = a * f1.comps[c][i] + b * f2.comps[c][i];
            }
        }
        let lhs = op.apply(&combo);
        let mut r1 = op.apply(&f1);
        let r2 = op.apply(&f2);
        r1.scale(a);
        let mut rhs = r1;
        for c in 0..6 {
            for i in 0..rhs.comps[c].len() {
                rhs.comps[c][i] += b * r2.comps[c][i];
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..6 {
            for i in 0..lhs.comps[c].len() {
                num += (lhs.comps[c][i] - rhs.comps[c][i]).norm_sqr();
                den += lhs.comps[c][i].norm_sqr();
            }
        }
        assert!(num.sqrt() <= 1e-12 * den.sqrt());
    }

    /// Λ·M must be exactly symmetric: λ_r M[r,c] == λ_c M[c,r].
    #[test]
    fn weighted_operator_is_symmetric() {
        for dims in [[4, 3, 5], [3, 3, 3], [5, 4, 3]] {
            let scene = mixed_bc_scene(dims);
            let op = assemble(&scene).unwrap();
            let mut map = std::collections::HashMap::new();
            for (r, c, v) in op.entries() {
                map.insert((r, c), v);
            }
            let mut max_asym = 0.0_f64;
            let mut max_abs = 0.0_f64;
            for (&(r, c), &v) in &map {
                let lhs = op.signed_weight(r) * v;
                let rhs = map
                    .get(&(c, r))
                    .map(|&w| op.signed_weight(c) * w)
                    .unwrap_or(C64::new(0.0, 0.0));
                max_asym = max_asym.max((lhs - rhs).norm());
                max_abs = max_abs.max(lhs.norm());
            }
            assert!(
                max_asym <= 1e-13 * max_abs,
                "dims {:?}: asymmetry {:.3e} vs scale {:.3e}",
                dims,
                max_asym,
                max_abs
            );
        }
    }

    /// The unconjugated symmetry ⟨MΨ₁, Ψ₂⋆⟩ = ⟨Ψ₁, (MΨ₂)⋆⟩ on random fields.
    #[test]
    fn unconjugated_symmetry_on_random_fields() {
        let scene = mixed_bc_scene([4, 4, 4]);
        let op = assemble(&scene).unwrap();
        for seed in 0..5 {
            let f1 = random_field(&op, 10 + seed);
            let f2 = random_field(&op, 20 + seed);
            let lhs = op.pairing(&op.apply(&f1), &f2);
            let rhs = op.pairing(&f1, &op.apply(&f2));
            let scale = op.energy_norm_sq(&f1).sqrt() * op.energy_norm_sq(&f2).sqrt();
            assert!(
                (lhs - rhs).norm() <= 1e-10 * scale,
                "seed {}: {} vs {}",
                seed,
                lhs,
                rhs
            );
        }
    }

    #[test]
    fn adjoint_state_is_involution() {
        let scene = mixed_bc_scene([3, 3, 4]);
        let op = assemble(&scene).unwrap();
        let f = random_field(&op, 7);
        let back = f.adjoint_state().adjoint_state();
        for c in 0..6 {
            for i in 0..f.comps[c].len() {
                assert_eq!(f.comps[c][i], back.comps[c][i]);
            }
        }
        // real fields: (E, H) -> (E, -H)
        let mut real = f.clone();
        for c in 0..6 {
            for z in real.comps[c].iter_mut() {
                *z = C64::new(z.re, 0.0);
            }
        }
        let adj = real.adjoint_state();
        for a in 0..3 {
            for i in 0..real.comps[a].len() {
                assert_eq!(adj.comps[a][i], real.comps[a][i]);
            }
            for i in 0..real.comps[3 + a].len() {
                assert_eq!(adj.comps[3 + a][i], -real.comps[3 + a][i]);
            }
        }
    }

    #[test]
    fn curl_curl_identity_for_assembled_rows() {
        // For any field, (i/ε)(closed curl H) − i(σ/ε)E must reproduce the
        // assembled E rows; cross-check curl_h_hpart + ghost_diag against apply.
        let scene = mixed_bc_scene([4, 3, 4]);
        let op = assemble(&scene).unwrap();
        let f = random_field(&op, 42);
        let out = op.apply(&f);
        let h_arrays = [f.comps[3].clone(), f.comps[4].clone(), f.comps[5].clone()];
        let e_arrays = [f.comps[0].clone(), f.comps[1].clone(), f.comps[2].clone()];
        let ch = op.curl_h_hpart(&h_arrays);
        for a in 0..3 {
            for flat in 0..op.layout.comp_len(a) {
                if op.dof[a][flat].is_none() {
                    continue;
                }
                let eps = op.eps_loc[a][flat];
                let sig = op.sig_loc[a][flat];
                let want = (I * (ch[a][flat] + op.ghost_diag[a][flat] * e_arrays[a][flat])
                    - I * sig * e_arrays[a][flat])
                    / eps;
                let got = out.comps[a][flat];
                assert!(
                    (want - got).norm() <= 1e-12 * (1.0 + got.norm()),
                    "row mismatch comp {} flat {}",
                    a,
                    flat
                );
            }
        }
    }

    #[test]
    fn dispersion_uniform_slab_closed_form() {
        // ε ≡ 1, L = 1, γ = 3: f(ω) = cos ω − 3i sin ω, zeros πk − (i/2)ln 2
        let p = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        for k in 1..=3 {
            let root = C64::new(std::f64::consts::PI * k as f64, -0.5 * 2.0_f64.ln());
            let f = dispersion_1d(&p, root);
            assert!(f.norm() <= 1e-12, "k = {}: |f| = {:.3e}", k, f.norm());
        }
        // generic value matches the closed form
        let w = C64::new(2.3, -0.4);
        let f = dispersion_1d(&p, w);
        let exact = w.cos() - 3.0 * I * w.sin();
        assert!((f - exact).norm() <= 1e-13 * exact.norm());
    }

    #[test]
    fn dispersion_derivative_matches_difference_quotient() {
        let p = LayeredProfile1D {
            layers: vec![(0.3, 2.0), (0.45, 1.0), (0.25, 3.5)],
            gamma: 1.7,
        };
        let w = C64::new(4.1, -0.2);
        let (_, df) = dispersion_1d_with_derivative(&p, w);
        let h = 1e-6;
        let fd = (dispersion_1d(&p, w + h) - dispersion_1d(&p, w - h)) / (2.0 * h);
        assert!((df - fd).norm() <= 1e-7 * df.norm().max(1.0));
        // complex-step style: differentiate along i agrees too (analyticity)
        let fdi = (dispersion_1d(&p, w + C64::new(0.0, h)) - dispersion_1d(&p, w - C64::new(0.0, h)))
            / C64::new(0.0, 2.0 * h);
        assert!((df - fdi).norm() <= 1e-7 * df.norm().max(1.0));
    }

    #[test]
    fn coo_export_roundtrips_entry_count() {
        let scene = mixed_bc_scene([3, 3, 3]);
        let op = assemble(&scene).unwrap();
        let text = op.to_coo_text();
        assert_eq!(text.lines().count(), op.nnz());
        let first = text.lines().next().unwrap();
        let parts: Vec<&str> = first.split_whitespace().collect();
        assert_eq!(parts.len(), 4);
    }
}
