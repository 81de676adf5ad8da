//! Eigenfrequency location near a complex target, simplicity certification,
//! eigenfield phase fixing, and an argument-principle root finder for the
//! 1D dispersion function.
//!
//! The matrix solver is shift-invert Arnoldi with a seeded starting block
//! (deterministic reruns) followed by inverse-iteration polish; the sparse
//! factorization is delegated to faer. The 1D root finder never touches the
//! matrix path, so the two stay independent oracles for each other.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::maxwell::{dispersion_1d, dispersion_1d_with_derivative, DiscreteOperator, Field, LayeredProfile1D};
use crate::medium::MaterialScene;
use crate::C64;



/// Where and how many eigenvalues to look for.
#[derive(Debug, Clone, Copy)]
pub struct SearchWindow {
    pub center: C64,
    pub radius: f64,
    pub count: usize,
}

/// A located eigenpair with the quantities reused downstream.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub omega: C64,
    pub psi: Field,
    /// Unconjugated pairing ⟨Ψ, Ψ⋆⟩_ε; the sensitivity denominator.
    pub pairing: C64,
    /// ‖MΨ − ωΨ‖/‖Ψ‖, re-verified after extraction.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub enum EigError {
    NotConverged { center: C64, radius: f64, detail: String },
    Singular { detail: String },
}

impl std::fmt::Display for EigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EigError::NotConverged { center, radius, detail } => write!(
                f,
                "eigensolve did not converge in window center {} radius {}: {}",
                center, radius, detail
            ),
            EigError::Singular { detail } => write!(f, "singular factorization: {}", detail),
        }
    }
}

impl std::error::Error for EigError {}

/// Default relative residual demanded of returned eigenpairs.
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

/// Relative pairing threshold certifying simplicity.
pub const DEFAULT_TOL_PAIR: f64 = 1e-8;

struct ShiftedLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
    shift: C64,
}

fn factor_shifted(op: &DiscreteOperator, shift: C64) -> Result<ShiftedLu, EigError> {
    let n = op.n;
    let mut trips: Vec<(usize, usize, C64)> = op.entries().collect();
    for d in 0..n {
        trips.push((d, d, -shift));
    }
    trips.sort_by_key(|&(r, c, _)| (r, c));
    let mut merged: Vec<Triplet<usize, usize, C64>> = Vec::with_capacity(trips.len());
    for (r, c, v) in trips {
        if let Some(last) = merged.last_mut() {
            if last.row == r && last.col == c {
                last.val += v;
                continue;
            }
        }
        merged.push(Triplet::new(r, c, v));
    }
    let a = SparseColMat::try_new_from_triplets(n, n, &merged)
        .map_err(|e| EigError::Singular { detail: format!("matrix build failed: {:?}", e) })?;
    let lu = a
        .sp_lu()
        .map_err(|e| EigError::Singular { detail: format!("LU failed at shift {}: {:?}", shift, e) })?;
    Ok(ShiftedLu { lu, shift })
}

impl ShiftedLu {
    fn solve(&self, x: &[C64]) -> Vec<C64> {
        let n = x.len();
        let rhs = Mat::from_fn(n, 1, |i, _| x[i]);
        let sol = self.lu.solve(&rhs);
        (0..n).map(|i| sol[(i, 0)]).collect()
    }
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Bilinear dof pairing Σ λ_d x_d y_d with signed energy weights.
fn b_pair(op: &DiscreteOperator, x: &[C64], y: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for d in 0..op.n {
        acc += op.signed_weight(d) * x[d] * y[d];
    }
    acc
}

/// Rayleigh estimate for the next shift: the bilinear quotient is the
/// two-sided one for this operator class; falls back to the sesquilinear
/// quotient when the bilinear norm degenerates.
fn rayleigh(op: &DiscreteOperator, x: &[C64]) -> C64 {
    let mut ax = vec![C64::new(0.0, 0.0); op.n];
    op.matvec(x, &mut ax);
    let bxx = b_pair(op, x, x);
    let scale: f64 = (0..op.n).map(|d| op.energy_weight(d) * x[d].norm_sqr()).sum();
    if bxx.norm() > 1e-10 * scale {
        b_pair(op, &ax, x) / bxx
    } else {
        let num: C64 = (0..op.n)
            .map(|d| C64::new(op.energy_weight(d), 0.0) * ax[d] * x[d].conj())
            .sum();
        num / scale
    }
}

/// Polish a candidate by fixed-shift inverse iteration with Rayleigh updates;
/// refactors at most twice when the shift drifts.
fn polish(
    op: &DiscreteOperator,
    lu: &ShiftedLu,
    x0: &[C64],
    tol: f64,
) -> Result<(C64, Vec<C64>, f64), EigError> {
    let mut x = x0.to_vec();
    let s = norm2(&x);
    for v in x.iter_mut() {
        *v /= s;
    }
    let mut lu_local: Option<ShiftedLu> = None;
    let mut refactored = 0;
    let mut best: Option<(C64, Vec<C64>, f64)> = None;
    for it in 0..24 {
        let omega = rayleigh(op, &x);
        let res = op.eigen_residual(omega, &x);
        if best.as_ref().map_or(true, |b| res < b.2) {
            best = Some((omega, x.clone(), res));
        }
        if res <= tol {
            return Ok(best.unwrap());
        }
        // refactor when the fixed shift is clearly stale
        let active = lu_local.as_ref().unwrap_or(lu);
        if it >= 6 && refactored < 2 && (omega - active.shift).norm() > 4.0 * res {
            lu_local = Some(factor_shifted(op, omega)?);
            refactored += 1;
        }
        let active = lu_local.as_ref().unwrap_or(lu);
        let mut y = active.solve(&x);
        let s = norm2(&y);
        if !s.is_finite() || s == 0.0 {
            break;
        }
        for v in y.iter_mut() {
            *v /= s;
        }
        x = y;
    }
    let (omega, x, res) = best.unwrap();
    if res <= tol * 10.0 {
        // accept mildly above target; caller re-verifies
        Ok((omega, x, res))
    } else {
        Err(EigError::NotConverged {
            center: omega,
            radius: 0.0,
            detail: format!("inverse iteration stalled at residual {:.3e}", res),
        })
    }
}

fn make_pair(op: &DiscreteOperator, omega: C64, x: &[C64], residual: f64) -> EigenPair {
    let psi = op.dofs_to_field(x);
    let pairing = op.pairing(&psi, &psi);
    EigenPair { omega, psi, pairing, residual }
}

/// Find up to `window.count` eigenpairs with |ω − center| ≤ radius.
///
/// Deterministic for fixed `seed`. An empty window yields an empty list;
/// iteration breakdown yields an error naming the window.
pub fn find_eigs(
    op: &DiscreteOperator,
    window: &SearchWindow,
    seed: u64,
    tol: f64,
) -> Result<Vec<EigenPair>, EigError> {
    crate::pin_sequential_kernels();
    let n = op.n;
    let lu = factor_shifted(op, window.center)?;
    let m = (4 * window.count + 24).min(n).max(24.min(n));

    // Arnoldi with modified Gram-Schmidt and one reorthogonalization pass
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v0: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let s = norm2(&v0);
    for v in v0.iter_mut() {
        *v /= s;
    }
    let mut basis: Vec<Vec<C64>> = vec![v0];
    let mut hess = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
    let mut steps = 0;
    for j in 0..m {
        let mut w = lu.solve(&basis[j]);
        for _pass in 0..2 {
            for (i, vi) in basis.iter().enumerate() {
                let h = dot_conj(vi, &w);
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= h * vk;
                }
                hess[i][j] += h;
            }
        }
        let hnext = norm2(&w);
        steps = j + 1;
        if hnext < 1e-14 {
            break; // invariant subspace found
        }
        hess[j + 1][j] = C64::new(hnext, 0.0);
        for v in w.iter_mut() {
            *v /= hnext;
        }
        basis.push(w);
    }

    // Ritz values of the leading steps x steps Hessenberg block
    let hs = Mat::from_fn(steps, steps, |i, j| hess[i][j]);
    let evd = hs.eigen().map_err(|e| EigError::NotConverged {
        center: window.center,
        radius: window.radius,
        detail: format!("hessenberg eigendecomposition failed: {:?}", e),
    })?;
    let thetas = evd.S();
    let u = evd.U();

    let mut candidates: Vec<(f64, usize)> = (0..steps)
        .filter_map(|i| {
            let th: C64 = thetas[i];
            if th.norm() < 1e-14 {
                return None;
            }
            let omega = window.center + 1.0 / th;
            let dist = (omega - window.center).norm();
            (dist <= window.radius * 1.2).then_some((dist, i))
        })
        .collect();
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut found: Vec<(C64, Vec<C64>, f64)> = Vec::new();
    for &(_, i) in candidates.iter() {
        if found.len() >= window.count + 3 {
            break;
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for (j, vj) in basis.iter().take(steps).enumerate() {
            let yj: C64 = u[(j, i)];
            for (xk, vk) in x.iter_mut().zip(vj) {
                *xk += yj * vk;
            }
        }
        let polished = match polish(op, &lu, &x, tol) {
            Ok(p) => p,
            Err(_) => continue, // spurious Ritz value; genuine ones are retried below
        };
        let (omega, x, res) = polished;
        if (omega - window.center).norm() > window.radius {
            continue;
        }
        // dedup against already-found pairs
        let dup = found.iter().any(|(w0, x0, _)| {
            (w0 - omega).norm() <= 1e-8 * (1.0 + omega.norm())
                && dot_conj(x0, &x).norm() >= 0.999
        });
        if !dup {
            found.push((omega, x, res));
        }
    }

    found.sort_by(|a, b| {
        (a.0 - window.center)
            .norm()
            .partial_cmp(&(b.0 - window.center).norm())
            .unwrap()
    });
    found.truncate(window.count);

    let mut out = Vec::with_capacity(found.len());
    for (omega, x, res) in found {
        if res > tol * 10.0 {
            return Err(EigError::NotConverged {
                center: window.center,
                radius: window.radius,
                detail: format!("pair at {} kept residual {:.3e}", omega, res),
            });
        }
        out.push(make_pair(op, omega, &x, res));
    }
    Ok(out)
}

/// Continue a known eigenpair to a (slightly) different operator.
///
/// Starts inverse iteration from the previous eigenvector at the predicted
/// eigenvalue. The caller decides whether the result jumped branches.
pub fn continue_eig(
    op: &DiscreteOperator,
    previous: &Field,
    predicted: C64,
    tol: f64,
) -> Result<EigenPair, EigError> {
    crate::pin_sequential_kernels();
    let lu = factor_shifted(op, predicted)?;
    let x0 = op.field_to_dofs(previous);
    let (omega, x, res) = polish(op, &lu, &x0, tol)?;
    Ok(make_pair(op, omega, &x, res))
}

/// Simplicity verdict from the unconjugated pairing magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Simplicity {
    Simple,
    DegenerateOrIllConditioned,
}

/// Certify simplicity: |⟨Ψ, Ψ⋆⟩_ε| ≥ tol_pair · ‖Ψ‖²_ε.
pub fn simplicity_check(op: &DiscreteOperator, pair: &EigenPair, tol_pair: f64) -> Simplicity {
    let scale = op.energy_norm_sq(&pair.psi);
    if pair.pairing.norm() >= tol_pair * scale {
        Simplicity::Simple
    } else {
        Simplicity::DegenerateOrIllConditioned
    }
}

#[derive(Debug, Clone)]
pub struct PhaseError {
    pub detail: String,
}

impl std::fmt::Display for PhaseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "not first-order optimal: {}", self.detail)
    }
}

impl std::error::Error for PhaseError {}

/// Per-fiber aggregated numerator values T_f = Σ_c ε_c² S_c and their
/// direction bounds; the achievable first-order cone is
/// { Σ_f p_f T_f : p_f ∈ [lo_f, hi_f] scaled by C ≥ 0 }.
pub struct ConeData {
    pub t: Vec<C64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub fibers: Vec<Vec<usize>>,
}

/// Assemble the cone data of the raw first-order integral ∫ p ε² E·E.
pub fn cone_data(op: &DiscreteOperator, scene: &MaterialScene, psi: &Field) -> ConeData {
    let scatter = e_square_cell_scatter(op, psi);
    let fibers = crate::medium::fibers(scene);
    let mut t = Vec::with_capacity(fibers.len());
    let mut lo = Vec::with_capacity(fibers.len());
    let mut hi = Vec::with_capacity(fibers.len());
    for fiber in &fibers {
        let mut acc = C64::new(0.0, 0.0);
        for &c in fiber {
            let e = scene.eps_r[c];
            acc += e * e * scatter[c];
        }
        t.push(acc);
        let (l, h) = crate::medium::direction_bounds(scene, fiber[0]);
        lo.push(l);
        hi.push(h);
    }
    ConeData { t, lo, hi, fibers }
}

/// Per-cell scatter of the squared E field: S_c = Σ_{e∋c} (1/n_e) w_e E_e².
///
/// This is the exact discrete representation of ∫_cell E·E dx used by the
/// sensitivity density; Σ_c p_c ε_c² S_c is the exact derivative of the
/// discrete eigenvalue (times denom/ω₀).
pub fn e_square_cell_scatter(op: &DiscreteOperator, field: &Field) -> Vec<C64> {
    let lay = &op.layout;
    let grid = &op.scene.grid;
    let mut out = vec![C64::new(0.0, 0.0); grid.cell_count()];
    let mut cells = Vec::with_capacity(4);
    for a in 0..3 {
        for flat in 0..lay.comp_len(a) {
            let w = op.vol_loc[a][flat];
            if w == 0.0 {
                continue;
            }
            let p = lay.coords(a, flat);
            lay.cells_of_e(a, p, &mut cells);
            let share = w / cells.len() as f64;
            let e2 = field.comps[a][flat] * field.comps[a][flat];
            for cell in &cells {
                out[grid.cell(cell[0], cell[1], cell[2])] += share * e2;
            }
        }
    }
    out
}

/// Lower envelope ν(φ) = min_p Im(e^{iφ} Σ_f p_f T_f) over the direction box.
fn cone_envelope(cone: &ConeData, phi: f64) -> f64 {
    let rot = C64::new(0.0, phi).exp();
    let mut acc = 0.0;
    for f in 0..cone.t.len() {
        let u = (rot * cone.t[f]).im;
        acc += (cone.lo[f] * u).min(cone.hi[f] * u);
    }
    acc
}

/// Rotate the eigenfield so the achievable first-order cone lies in the
/// closed upper half-plane; returns the rotated pair and θ₁.
///
/// Fails when the cone spans more than a half-plane (the point cannot
/// satisfy the first-order optimality structure).
pub fn fix_phase(
    op: &DiscreteOperator,
    scene: &MaterialScene,
    pair: &EigenPair,
) -> Result<(EigenPair, f64), PhaseError> {
    let cone = cone_data(op, scene, &pair.psi);
    let scale: f64 = cone
        .t
        .iter()
        .zip(cone.lo.iter().zip(&cone.hi))
        .map(|(t, (l, h))| t.norm() * l.abs().max(h.abs()))
        .sum();
    if scale == 0.0 {
        return Ok((pair.clone(), 0.0)); // zero density: any phase works
    }
    let tol = -1e-12 * scale;
    let nsamp = 4096;
    let feasible: Vec<bool> = (0..nsamp)
        .map(|i| cone_envelope(&cone, 2.0 * std::f64::consts::PI * i as f64 / nsamp as f64) >= tol)
        .collect();
    if feasible.iter().all(|&f| !f) {
        return Err(PhaseError {
            detail: "achievable cone spans more than a half-plane".to_string(),
        });
    }
    if feasible.iter().all(|&f| f) {
        return Ok((pair.clone(), 0.0));
    }
    // longest feasible run, scanned circularly from the first infeasible index
    let start = (0..nsamp).find(|&i| !feasible[i]).unwrap();
    let mut best_len = 0usize;
    let mut best_begin = 0usize;
    let mut i = start;
    while i < start + nsamp {
        if feasible[i % nsamp] {
            let begin = i;
            while i < start + nsamp && feasible[i % nsamp] {
                i += 1;
            }
            if i - begin > best_len {
                best_len = i - begin;
                best_begin = begin;
            }
        } else {
            i += 1;
        }
    }
    if best_len == 0 {
        return Err(PhaseError { detail: "feasible phase arc is empty".to_string() });
    }
    let step = 2.0 * std::f64::consts::PI / nsamp as f64;
    // bisect both ends of the arc: a = infeasible angle, b = feasible angle
    let sharpen = |mut a: f64, mut b: f64| -> f64 {
        for _ in 0..40 {
            let m = 0.5 * (a + b);
            if cone_envelope(&cone, m) >= tol {
                b = m;
            } else {
                a = m;
            }
        }
        b
    };
    let end = best_begin + best_len;
    let phi_lo = sharpen((best_begin as f64 - 1.0) * step, best_begin as f64 * step);
    let phi_hi = sharpen(end as f64 * step, (end as f64 - 1.0) * step);
    let phi_mid = 0.5 * (phi_lo + phi_hi);
    let theta1 = 0.5 * phi_mid;
    let mut rotated = pair.clone();
    let rot = C64::new(0.0, theta1).exp();
    rotated.psi.scale(rot);
    rotated.pairing = pair.pairing * rot * rot;
    Ok((rotated, theta1))
}

// ---------------------------------------------------------------------------
// argument-principle root finder for the 1D dispersion function
// ---------------------------------------------------------------------------

/// Axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Rect {
    pub fn new(re: (f64, f64), im: (f64, f64)) -> Self {
        Rect { re, im }
    }

    pub fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re.0, self.im.0),
            C64::new(self.re.1, self.im.0),
            C64::new(self.re.1, self.im.1),
            C64::new(self.re.0, self.im.1),
        ]
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.re.0 && z.re <= self.re.1 && z.im >= self.im.0 && z.im <= self.im.1
    }

    pub fn diag(&self) -> f64 {
        let dr = self.re.1 - self.re.0;
        let di = self.im.1 - self.im.0;
        (dr * dr + di * di).sqrt()
    }

    fn inflate(&self, f: f64) -> Rect {
        let dr = (self.re.1 - self.re.0) * f;
        let di = (self.im.1 - self.im.0) * f;
        Rect { re: (self.re.0 - dr, self.re.1 + dr), im: (self.im.0 - di, self.im.1 + di) }
    }
}

#[derive(Debug, Clone)]
pub enum RootsError {
    /// The rectangle boundary passes too close to a zero; retry with the
    /// suggested perturbed rectangle.
    BoundaryZero { suggested: Rect },
    PhaseUnresolved { at: C64 },
}

impl std::fmt::Display for RootsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RootsError::BoundaryZero { suggested } => {
                write!(f, "zero on rectangle boundary; retry with {:?}", suggested)
            }
            RootsError::PhaseUnresolved { at } => write!(f, "phase tracking failed near {}", at),
        }
    }
}

impl std::error::Error for RootsError {}

const BOUNDARY_FLOOR: f64 = 1e-12;

/// Winding number of the dispersion function around a rectangle, by adaptive
/// phase tracking along the boundary. Errors if |f| dips to the floor.
pub fn winding_number(profile: &LayeredProfile1D, rect: &Rect) -> Result<i64, RootsError> {
    let corners = rect.corners();
    let mut total = 0.0;
    for s in 0..4 {
        let za = corners[s];
        let zb = corners[(s + 1) % 4];
        total += segment_phase(profile, za, zb, rect, 0)?;
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i64)
}

fn segment_phase(
    profile: &LayeredProfile1D,
    za: C64,
    zb: C64,
    rect: &Rect,
    depth: usize,
) -> Result<f64, RootsError> {
    let (fa, dfa) = dispersion_1d_with_derivative(profile, za);
    let (fb, dfb) = dispersion_1d_with_derivative(profile, zb);
    if fa.norm() <= BOUNDARY_FLOOR || fb.norm() <= BOUNDARY_FLOOR {
        return Err(RootsError::BoundaryZero { suggested: rect.inflate(0.0173) });
    }
    // the endpoint phase difference is trustworthy only while the local
    // phase rate |f'/f|·len stays below a radian; otherwise whole turns
    // can hide between the samples
    let len = (zb - za).norm();
    let rate = (dfa.norm() / fa.norm()).max(dfb.norm() / fb.norm());
    let dphase = (fb / fa).arg();
    if dphase.abs() <= std::f64::consts::FRAC_PI_2 && rate * len <= 1.0 {
        return Ok(dphase);
    }
    if depth > 52 {
        return Err(RootsError::PhaseUnresolved { at: 0.5 * (za + zb) });
    }
    let zm = 0.5 * (za + zb);
    Ok(segment_phase(profile, za, zm, rect, depth + 1)?
        + segment_phase(profile, zm, zb, rect, depth + 1)?)
}

/// Newton refinement of a root of the dispersion function.
fn newton_root(profile: &LayeredProfile1D, start: C64) -> Option<C64> {
    let mut z = start;
    for _ in 0..80 {
        let (f, df) = dispersion_1d_with_derivative(profile, z);
        if f.norm() <= BOUNDARY_FLOOR {
            return Some(z);
        }
        if df.norm() == 0.0 {
            return None;
        }
        let step = f / df;
        z -= step;
        if !z.re.is_finite() || !z.im.is_finite() {
            return None;
        }
    }
    let f = dispersion_1d(profile, z);
    (f.norm() <= BOUNDARY_FLOOR).then_some(z)
}

/// All zeros of the dispersion function inside `rect`, with multiplicities
/// from terminal winding numbers. Pre: the rectangle boundary avoids zeros.
pub fn roots_1d(profile: &LayeredProfile1D, rect: &Rect) -> Result<Vec<(C64, usize)>, RootsError> {
    let mut out = Vec::new();
    subdivide(profile, rect, 0, &mut out)?;
    out.sort_by(|a, b| (a.0.re, a.0.im).partial_cmp(&(b.0.re, b.0.im)).unwrap());
    // merge duplicates found through adjacent boxes
    let mut merged: Vec<(C64, usize)> = Vec::new();
    for (z, m) in out {
        if let Some(last) = merged.last_mut() {
            if (last.0 - z).norm() <= 1e-9 * (1.0 + z.norm()) {
                continue;
            }
        }
        merged.push((z, m));
    }
    Ok(merged)
}

fn subdivide(
    profile: &LayeredProfile1D,
    rect: &Rect,
    depth: usize,
    out: &mut Vec<(C64, usize)>,
) -> Result<(), RootsError> {
    let count = winding_number(profile, rect)?;
    if count <= 0 {
        return Ok(());
    }
    let center = C64::new(0.5 * (rect.re.0 + rect.re.1), 0.5 * (rect.im.0 + rect.im.1));
    if count == 1 || rect.diag() < 1e-7 * (1.0 + center.norm()) || depth > 60 {
        if let Some(z) = newton_root(profile, center) {
            if rect.inflate(0.05).contains(z) {
                out.push((z, count as usize));
                return Ok(());
            }
        }
        if depth > 60 {
            return Err(RootsError::PhaseUnresolved { at: center });
        }
    }
    // split the longer side; nudge the split line off any boundary zero
    let wide = (rect.re.1 - rect.re.0) >= (rect.im.1 - rect.im.0);
    for attempt in 0..6 {
        let frac = 0.5 + 0.037 * attempt as f64;
        let (ra, rb) = if wide {
            let mid = rect.re.0 + frac * (rect.re.1 - rect.re.0);
            (
                Rect::new((rect.re.0, mid), rect.im),
                Rect::new((mid, rect.re.1), rect.im),
            )
        } else {
            let mid = rect.im.0 + frac * (rect.im.1 - rect.im.0);
            (
                Rect::new(rect.re, (rect.im.0, mid)),
                Rect::new(rect.re, (mid, rect.im.1)),
            )
        };
        let before = out.len();
        match (|| -> Result<(), RootsError> {
            subdivide(profile, &ra, depth + 1, out)?;
            subdivide(profile, &rb, depth + 1, out)
        })() {
            Ok(()) => return Ok(()),
            Err(RootsError::BoundaryZero { .. }) if attempt + 1 < 6 => {
                out.truncate(before);
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(RootsError::PhaseUnresolved { at: center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maxwell::assemble;
    use crate::medium::MaterialScene;
    use std::f64::consts::PI;

    fn slab_scene(profile: &LayeredProfile1D, nz: usize) -> MaterialScene {
        crate::testbeds::slab_scene_from_profile(profile, nz, 12.0)
    }

    #[test]
    fn slab_eigenvalue_matches_dispersion_root_second_order() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let exact = C64::new(PI, -0.5 * 2.0_f64.ln());
        let mut errs = Vec::new();
        for nz in [24, 48, 96] {
            let scene = slab_scene(&profile, nz);
            let op = assemble(&scene).unwrap();
            let window = SearchWindow { center: exact, radius: 0.8, count: 1 };
            let pairs = find_eigs(&op, &window, 7, DEFAULT_EIG_TOL).unwrap();
            assert_eq!(pairs.len(), 1, "nz = {}", nz);
            assert!(pairs[0].residual <= 1e-9);
            errs.push((pairs[0].omega - exact).norm());
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(
            order1 > 1.8 && order2 > 1.8,
            "orders {:.2}, {:.2}; errors {:?}",
            order1,
            order2,
            errs
        );
    }

    #[test]
    fn upper_half_plane_window_is_empty() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let scene = slab_scene(&profile, 24);
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(PI, 0.6), radius: 0.45, count: 4 };
        let pairs = find_eigs(&op, &window, 7, DEFAULT_EIG_TOL).unwrap();
        assert!(pairs.is_empty());
    }

    #[test]
    fn cluster_request_returns_at_most_count() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let scene = slab_scene(&profile, 48);
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(2.0 * PI, -0.35), radius: 4.5, count: 3 };
        let pairs = find_eigs(&op, &window, 11, DEFAULT_EIG_TOL).unwrap();
        assert!(pairs.len() <= 3 && !pairs.is_empty());
        for p in &pairs {
            assert!(p.residual <= 1e-9, "residual {:.2e}", p.residual);
        }
        // sorted by distance from center
        for w in pairs.windows(2) {
            assert!(
                (w[0].omega - window.center).norm() <= (w[1].omega - window.center).norm() + 1e-12
            );
        }
    }

    #[test]
    fn roots_of_uniform_slab_are_closed_form() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let rect = Rect::new((0.5, 10.0), (-2.0, 0.1));
        let roots = roots_1d(&profile, &rect).unwrap();
        assert_eq!(roots.len(), 3);
        for (k, (z, m)) in roots.iter().enumerate() {
            let exact = C64::new(PI * (k + 1) as f64, -0.5 * 2.0_f64.ln());
            assert!((z - exact).norm() <= 1e-9, "root {} off: {} vs {}", k, z, exact);
            assert_eq!(*m, 1);
            assert!(dispersion_1d(&profile, *z).norm() <= 1e-12);
        }
    }

    #[test]
    fn matched_termination_has_no_zeros() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 1.0);
        let rect = Rect::new((0.3, 12.0), (-3.0, 3.0));
        assert_eq!(winding_number(&profile, &rect).unwrap(), 0);
        assert!(roots_1d(&profile, &rect).unwrap().is_empty());
    }

    #[test]
    fn upper_half_plane_rect_has_no_roots_random_profiles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..8 {
            let nl = rng.gen_range(1..5);
            let layers: Vec<(f64, f64)> = (0..nl)
                .map(|_| (rng.gen_range(0.1..0.5), rng.gen_range(1.0..6.0)))
                .collect();
            let profile = LayeredProfile1D { layers, gamma: rng.gen_range(0.2..4.0) };
            let rect = Rect::new((0.2, 9.0), (0.02, 2.5));
            assert_eq!(
                winding_number(&profile, &rect).unwrap(),
                0,
                "passivity violated for {:?}",
                profile
            );
        }
    }

    #[test]
    fn winding_is_conserved_under_subdivision() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..6 {
            let layers: Vec<(f64, f64)> = (0..rng.gen_range(1..4))
                .map(|_| (rng.gen_range(0.15..0.5), rng.gen_range(1.0..5.0)))
                .collect();
            let profile = LayeredProfile1D { layers, gamma: rng.gen_range(0.5..3.0) };
            let rect = Rect::new((0.4, 8.3), (-2.1, 0.12));
            let total = winding_number(&profile, &rect).unwrap();
            let mid = 0.5 * (rect.re.0 + rect.re.1) + 0.013; // off-center split
            let left = Rect::new((rect.re.0, mid), rect.im);
            let right = Rect::new((mid, rect.re.1), rect.im);
            let sum =
                winding_number(&profile, &left).unwrap() + winding_number(&profile, &right).unwrap();
            assert_eq!(total, sum, "profile {:?}", profile);
        }
    }

    #[test]
    fn simplicity_verdict_scale_invariant() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let scene = slab_scene(&profile, 24);
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(PI, -0.35), radius: 0.8, count: 1 };
        let pair = find_eigs(&op, &window, 7, DEFAULT_EIG_TOL).unwrap().remove(0);
        assert_eq!(simplicity_check(&op, &pair, DEFAULT_TOL_PAIR), Simplicity::Simple);
        let mut scaled = pair.clone();
        scaled.psi.scale(C64::new(-3.7, 0.0));
        scaled.pairing = op.pairing(&scaled.psi, &scaled.psi);
        assert_eq!(simplicity_check(&op, &scaled, DEFAULT_TOL_PAIR), Simplicity::Simple);
    }

    #[test]
    fn fix_phase_gauge_invariance() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let scene = slab_scene(&profile, 32);
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(PI, -0.35), radius: 0.8, count: 1 };
        let pair = find_eigs(&op, &window, 7, DEFAULT_EIG_TOL).unwrap().remove(0);
        let (fixed, _theta) = fix_phase(&op, &scene, &pair).unwrap();
        // rotate the input by a random phase; output must agree up to sign
        let mut rotated = pair.clone();
        let rot = C64::new(0.0, PI / 7.0).exp();
        rotated.psi.scale(rot);
        rotated.pairing = pair.pairing * rot * rot;
        let (fixed2, _)= fix_phase(&op, &scene, &rotated).unwrap();
        let x1 = op.field_to_dofs(&fixed.psi);
        let x2 = op.field_to_dofs(&fixed2.psi);
        let overlap = dot_conj(&x1, &x2);
        let cosang = overlap.norm() / (norm2(&x1) * norm2(&x2));
        assert!(cosang > 1.0 - 1e-9, "fields differ beyond sign: {}", cosang);
        let phase = overlap.arg().abs();
        let near_0_or_pi = phase < 1e-6 || (std::f64::consts::PI - phase) < 1e-6;
        assert!(near_0_or_pi, "relative phase {} not a sign", phase);
    }

    #[test]
    fn fix_phase_identity_when_already_fixed() {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let scene = slab_scene(&profile, 32);
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(PI, -0.35), radius: 0.8, count: 1 };
        let pair = find_eigs(&op, &window, 7, DEFAULT_EIG_TOL).unwrap().remove(0);
        let (fixed, _) = fix_phase(&op, &scene, &pair).unwrap();
        let (fixed_again, theta2) = fix_phase(&op, &scene, &fixed).unwrap();
        // already centered in the feasible arc: second rotation is a real sign
        let sign_dist = theta2.abs().min((theta2.abs() - PI).abs());
        assert!(sign_dist < 1e-6, "theta2 = {}", theta2);
        let x1 = op.field_to_dofs(&fixed.psi);
        let x2 = op.field_to_dofs(&fixed_again.psi);
        let diff_plus: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        let diff_minus: f64 = x1.iter().zip(&x2).map(|(a, b)| (a + b).norm_sqr()).sum::<f64>();
        assert!(diff_plus.min(diff_minus).sqrt() <= 1e-6 * norm2(&x1));
    }
}
