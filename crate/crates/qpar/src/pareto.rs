//! Constrained first-order descent on the loss rate Γ = −Im ω at fixed
//! Re ω = α, and the α-sweep tracing the Pareto frontier Γ_min(α).
//!
//! Each iteration solves a box-constrained linear program over the tangent
//! cone of the feasible family: maximize the first-order Γ decrease subject
//! to zero first-order drift of Re ω. The LP is solved exactly by walking
//! the Lagrange-multiplier breakpoints of the separable bang-bang solution;
//! a fractional fiber closes the equality constraint. Accepted steps
//! backtrack under an Armijo rule with warm-started eigenvalue continuation
//! and a real-frequency drift budget; a correction phase with the
//! transposed objective pulls Re ω back toward α.

use log::{debug, info, warn};
use num_complex::Complex64;

use crate::eigensolve::{
    continue_eig, find_eigs, fix_phase, EigError, EigenPair, SearchWindow,
};
use crate::elverify::{el_residual, structure_metrics, switching, ELReport, SwitchingVariant};
use crate::maxwell::{assemble, DiscreteOperator};
use crate::medium::{
    bang_bang_round, direction_bounds, fibers, perturbed_scene, validate_scene, Direction,
    MaterialScene,
};
use crate::sensitivity::{density, first_order_shift, SensitivityDensity};
use crate::C64;

/// Tunables of the descent loop; every tolerance in one place.
#[derive(Debug, Clone)]
pub struct OptimizeParams {
    /// |Re ω − α| ≤ alpha_tol_rel·α at a converged point.
    pub alpha_tol_rel: f64,
    /// per-iterate drift allowance, relative to α.
    pub drift_budget_rel: f64,
    /// EL residual bound for `converged`.
    pub el_tol: f64,
    /// relative dead band for rounding and the singular set.
    pub dead_band: f64,
    pub eig_tol: f64,
    pub max_iters: usize,
    pub armijo: f64,
    pub trust_init: f64,
    pub trust_min: f64,
    pub seed: u64,
    /// initial search window, relative to α.
    pub window_radius_rel: f64,
    pub window_im_rel: f64,
}

impl Default for OptimizeParams {
    fn default() -> Self {
        OptimizeParams {
            alpha_tol_rel: 1e-6,
            drift_budget_rel: 1e-4,
            el_tol: 1e-6,
            dead_band: 1e-10,
            eig_tol: 1e-10,
            max_iters: 400,
            armijo: 0.1,
            trust_init: 1.0,
            trust_min: 1e-10,
            seed: 1,
            window_radius_rel: 0.45,
            window_im_rel: -0.12,
        }
    }
}

/// One point of the Pareto frontier with its diagnostics.
#[derive(Debug, Clone)]
pub struct ParetoPoint {
    pub alpha: f64,
    pub gamma: f64,
    pub scene: MaterialScene,
    pub pair: EigenPair,
    pub el: ELReport,
    pub iterations: usize,
    pub converged: bool,
    /// Γ after each accepted descent iterate (strictly decreasing).
    pub gamma_trace: Vec<f64>,
    /// box-clip events over the whole run
    pub clip_events: usize,
}

/// A planned descent step.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub p: Direction,
    pub predicted_shift: C64,
    pub trust_step: f64,
    /// first-order Γ decrease rate Im C₁(p); positive for a descent plan
    pub value: f64,
    /// equality multiplier of the LP, for KKT checking
    pub lp_multiplier: f64,
}

/// Outcome of planning: a step or first-order stationarity.
#[derive(Debug, Clone)]
pub enum PlanOutcome {
    Step(StepPlan),
    AtStationaryPoint { zero_density: bool },
}

#[derive(Debug, Clone)]
pub enum OptimizeError {
    NotAchievable { alpha: f64 },
    SceneInvalid { report: String },
    Eig(EigError),
    Degenerate { alpha: f64 },
}

impl std::fmt::Display for OptimizeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizeError::NotAchievable { alpha } => {
                write!(f, "no eigenvalue achievable near alpha = {}", alpha)
            }
            OptimizeError::SceneInvalid { report } => write!(f, "scene invalid: {}", report),
            OptimizeError::Eig(e) => write!(f, "{}", e),
            OptimizeError::Degenerate { alpha } => {
                write!(f, "eigenvalue near alpha = {} lost simplicity", alpha)
            }
        }
    }
}

impl std::error::Error for OptimizeError {}

/// Per-fiber aggregate of the density: G_f = Σ_{c∈f} g_c·vol with the
/// shared box bounds of the fiber.
struct FiberLp {
    g: Vec<C64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    fibers: Vec<Vec<usize>>,
}

fn fiber_aggregate(scene: &MaterialScene, g: &[C64]) -> FiberLp {
    let vol = scene.grid.cell_volume();
    let fibs = fibers(scene);
    let mut gg = Vec::with_capacity(fibs.len());
    let mut lo = Vec::with_capacity(fibs.len());
    let mut hi = Vec::with_capacity(fibs.len());
    for fiber in &fibs {
        let acc: C64 = fiber.iter().map(|&c| g[c] * vol).sum();
        gg.push(acc);
        let (l, h) = direction_bounds(scene, fiber[0]);
        lo.push(l);
        hi.push(h);
    }
    FiberLp { g: gg, lo, hi, fibers: fibs }
}

/// Exact solution of: maximize Σ p_f Im G_f  s.t.  Σ p_f Re G_f = 0,
/// p_f ∈ [lo_f, hi_f]. Returns per-fiber p, the objective value, and the
/// equality multiplier. The vertex solution is p_f = hi/lo as
/// Im G_f − λ Re G_f ≷ 0; r(λ) = Σ p_f(λ) Re G_f is non-increasing, so the
/// multiplier is found by walking sorted breakpoints; the crossing group is
/// set fractionally to meet the constraint exactly.
fn box_lp(g: &[C64], lo: &[f64], hi: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = g.len();
    let scale: f64 = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let re_tiny = 1e-14 * scale.max(1e-300);
    // assignment at λ = −∞ (p favors sign(Re G))
    let p_at = |lambda: f64| -> Vec<f64> {
        (0..n)
            .map(|f| {
                let c = g[f].im - lambda * g[f].re;
                if c > 0.0 {
                    hi[f]
                } else if c < 0.0 {
                    lo[f]
                } else {
                    0.0 // breakpoint fibers resolved separately
                }
            })
            .collect()
    };
    let r_of = |p: &[f64]| -> f64 { (0..n).map(|f| p[f] * g[f].re).sum() };

    // breakpoints of fibers with real sensitivity
    let mut bps: Vec<(f64, usize)> = (0..n)
        .filter(|&f| g[f].re.abs() > re_tiny)
        .map(|f| (g[f].im / g[f].re, f))
        .collect();
    bps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut lambda = bps.first().map(|b| b.0 - 1.0).unwrap_or(0.0);
    let mut p = p_at(lambda);
    let mut r = r_of(&p);
    if r < 0.0 {
        // numerically possible only when every |Re G| is at the noise
        // floor; the constraint is met by zeroing the real fibers
        for f in 0..n {
            if g[f].re.abs() > re_tiny {
                p[f] = 0.0;
            }
        }
        r = r_of(&p);
    }
    let mut i = 0;
    while i < bps.len() && r > 0.0 {
        // group of equal breakpoints
        let lam = bps[i].0;
        let mut group = vec![bps[i].1];
        let mut j = i + 1;
        while j < bps.len() && (bps[j].0 - lam).abs() <= 0.0 {
            group.push(bps[j].1);
            j += 1;
        }
        // r after flipping the whole group
        let mut r_after = r;
        for &f in &group {
            let to = if g[f].re > 0.0 { lo[f] } else { hi[f] };
            let from = if g[f].re > 0.0 { hi[f] } else { lo[f] };
            r_after += (to - from) * g[f].re;
        }
        if r_after > 0.0 {
            for &f in &group {
                p[f] = if g[f].re > 0.0 { lo[f] } else { hi[f] };
            }
            r = r_after;
            lambda = lam;
            i = j;
            continue;
        }
        // crossing group: distribute to hit r = 0 exactly
        lambda = lam;
        for &f in &group {
            let from = if g[f].re > 0.0 { hi[f] } else { lo[f] };
            let to = if g[f].re > 0.0 { lo[f] } else { hi[f] };
            // moving p_f from `from` to `to` changes r by (to-from)·ReG_f < 0
            let delta = (to - from) * g[f].re;
            if r + delta > 0.0 {
                p[f] = to;
                r += delta;
            } else {
                // fractional fiber
                let need = -r; // negative change required
                let frac = need / delta; // both negative → frac ∈ [0,1]
                p[f] = from + frac * (to - from);
                r = 0.0;
                break;
            }
        }
        break;
    }
    // Re-neutral fibers maximize freely
    for f in 0..n {
        if g[f].re.abs() <= re_tiny {
            p[f] = if g[f].im > 0.0 { hi[f] } else if g[f].im < 0.0 { lo[f] } else { 0.0 };
        }
    }
    let value: f64 = (0..n).map(|f| p[f] * g[f].im).sum();
    (p, value, lambda)
}

/// Plan a descent step from the current density, or detect stationarity.
pub fn plan_step(
    dens: &SensitivityDensity,
    scene: &MaterialScene,
    trust_step: f64,
) -> PlanOutcome {
    let agg = fiber_aggregate(scene, &dens.g);
    let scale: f64 = agg
        .g
        .iter()
        .zip(agg.lo.iter().zip(&agg.hi))
        .map(|(z, (l, h))| z.norm() * l.abs().max(h.abs()))
        .sum();
    if scale == 0.0 {
        return PlanOutcome::AtStationaryPoint { zero_density: true };
    }
    let (pf, value, lambda) = box_lp(&agg.g, &agg.lo, &agg.hi);
    if value <= 1e-12 * scale {
        return PlanOutcome::AtStationaryPoint { zero_density: false };
    }
    let mut p = vec![0.0; scene.grid.cell_count()];
    for (f, fiber) in agg.fibers.iter().enumerate() {
        for &c in fiber {
            p[c] = pf[f];
        }
    }
    let direction = Direction { p };
    let shift = first_order_shift(dens, &direction, scene).expect("direction is on D_opt");
    PlanOutcome::Step(StepPlan {
        p: direction,
        predicted_shift: shift,
        trust_step,
        value,
        lp_multiplier: lambda,
    })
}

/// The correction plan: maximize movement of Re ω toward α with zero
/// first-order Γ change. Implemented through the same LP under g ↦ −s·i·g.
fn plan_correction(
    dens: &SensitivityDensity,
    scene: &MaterialScene,
    toward: f64, // sign(α − Re ω): desired sign of Re C₁
) -> Option<(Direction, C64)> {
    let rot = Complex64::new(0.0, toward); // i·s with s = toward
    let g_rot: Vec<C64> = dens.g.iter().map(|&z| rot * z).collect();
    let agg = fiber_aggregate(scene, &g_rot);
    let scale: f64 = agg
        .g
        .iter()
        .zip(agg.lo.iter().zip(&agg.hi))
        .map(|(z, (l, h))| z.norm() * l.abs().max(h.abs()))
        .sum();
    if scale == 0.0 {
        return None;
    }
    let (pf, value, _) = box_lp(&agg.g, &agg.lo, &agg.hi);
    if value <= 1e-12 * scale {
        return None;
    }
    let mut p = vec![0.0; scene.grid.cell_count()];
    for (f, fiber) in agg.fibers.iter().enumerate() {
        for &c in fiber {
            p[c] = pf[f];
        }
    }
    let direction = Direction { p };
    let shift = first_order_shift(dens, &direction, scene).ok()?;
    Some((direction, shift))
}

struct State {
    scene: MaterialScene,
    op: DiscreteOperator,
    pair: EigenPair,
}

impl State {
    fn resolve_perturbed(
        &self,
        p: &Direction,
        t: f64,
        eig_tol: f64,
        predicted: C64,
    ) -> Result<(MaterialScene, DiscreteOperator, EigenPair, usize), OptimizeError> {
        let (scene_t, clipped) = perturbed_scene(&self.scene, p, t, true);
        let op_t = assemble(&scene_t)
            .map_err(|r| OptimizeError::SceneInvalid { report: r.to_string() })?;
        let pair_t = continue_eig(&op_t, &self.pair.psi, predicted, eig_tol)
            .map_err(OptimizeError::Eig)?;
        Ok((scene_t, op_t, pair_t, clipped))
    }
}

/// Apply a planned step with Armijo backtracking plus the Re ω correction
/// phase. Returns the accepted state or the rejection.
#[allow(clippy::too_many_arguments)]
fn apply_step(
    state: &State,
    plan: &StepPlan,
    alpha: f64,
    params: &OptimizeParams,
    budget: usize,
) -> Result<(State, f64, usize), OptimizeError> {
    let gamma0 = crate::loss_rate(state.pair.omega);
    let drift_budget = params.drift_budget_rel * alpha;
    let mut last_err: Option<OptimizeError> = None;
    for k in 0..budget {
        let t = plan.trust_step * 0.5_f64.powi(k as i32);
        let predicted = state.pair.omega + t * plan.predicted_shift;
        let (scene_t, op_t, pair_t, mut clipped) =
            match state.resolve_perturbed(&plan.p, t, params.eig_tol, predicted) {
                Ok(v) => v,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
        // branch-jump guard
        let jump = (pair_t.omega - predicted).norm();
        if jump > 10.0 * (t * plan.predicted_shift).norm() + 1e4 * params.eig_tol * alpha {
            debug!("step t={:.3e} rejected: branch jump {:.3e}", t, jump);
            continue;
        }
        let gamma_t = crate::loss_rate(pair_t.omega);
        if gamma_t >= gamma0 - params.armijo * t * plan.value {
            continue; // insufficient decrease
        }
        // the raw step only keeps Re ω fixed to first order; allow the
        // second-order drift through and let the correction phase remove it
        if (pair_t.omega.re - alpha).abs() > 100.0 * drift_budget {
            continue;
        }
        // correction phase: drive Re ω back toward α with Im-neutral steps
        let mut cur = State { scene: scene_t, op: op_t, pair: pair_t };
        for _ in 0..3 {
            let off = cur.pair.omega.re - alpha;
            if off.abs() <= params.alpha_tol_rel * alpha {
                break;
            }
            let dens = match density(&cur.pair, &cur.scene, &cur.op) {
                Ok(d) => d,
                Err(_) => break,
            };
            let Some((pc, shift)) = plan_correction(&dens, &cur.scene, -off.signum()) else {
                break;
            };
            if shift.re.abs() < 1e-300 {
                break;
            }
            let tau_star = ((alpha - cur.pair.omega.re) / shift.re).clamp(0.0, 1.0);
            let mut applied = false;
            for halve in 0..4 {
                let tau = tau_star * 0.5_f64.powi(halve);
                if tau == 0.0 {
                    break;
                }
                let predicted = cur.pair.omega + tau * shift;
                let Ok((s2, o2, p2, c2)) =
                    cur.resolve_perturbed(&pc, tau, params.eig_tol, predicted)
                else {
                    continue;
                };
                let new_off = (p2.omega.re - alpha).abs();
                let new_gamma = crate::loss_rate(p2.omega);
                if new_off < off.abs() && new_gamma < gamma0 - 0.5 * params.armijo * t * plan.value
                {
                    clipped += c2;
                    cur = State { scene: s2, op: o2, pair: p2 };
                    applied = true;
                    break;
                }
            }
            if !applied {
                break;
            }
        }
        if (cur.pair.omega.re - alpha).abs() > drift_budget {
            continue; // corrections could not hold the frequency constraint
        }
        return Ok((cur, t, clipped));
    }
    Err(last_err.unwrap_or(OptimizeError::Eig(EigError::NotConverged {
        center: state.pair.omega,
        radius: 0.0,
        detail: format!("line search exhausted {} halvings", budget),
    })))
}

/// Pull Re ω within `tol_abs` of α by correction steps alone (Γ-neutral to
/// first order). Optionally restrict to the given fiber cells.
fn align_alpha(
    state: &mut State,
    alpha: f64,
    tol_abs: f64,
    params: &OptimizeParams,
    restrict: Option<&[bool]>,
    max_steps: usize,
) -> usize {
    let mut clip = 0;
    for _ in 0..max_steps {
        let off = state.pair.omega.re - alpha;
        if off.abs() <= tol_abs {
            break;
        }
        let Ok(dens) = density(&state.pair, &state.scene, &state.op) else { break };
        let mut dens = dens;
        if let Some(mask) = restrict {
            for c in 0..mask.len() {
                if !mask[c] {
                    dens.g[c] = C64::new(0.0, 0.0);
                }
            }
        }
        let Some((pc, shift)) = plan_correction(&dens, &state.scene, -off.signum()) else {
            break;
        };
        if shift.re.abs() < 1e-300 {
            break;
        }
        let tau_star = ((alpha - state.pair.omega.re) / shift.re).clamp(0.0, 1.0);
        let mut applied = false;
        for halve in 0..6 {
            let tau = tau_star * 0.5_f64.powi(halve);
            if tau == 0.0 {
                break;
            }
            let predicted = state.pair.omega + tau * shift;
            let Ok((s2, o2, p2, c2)) =
                state.resolve_perturbed(&pc, tau, params.eig_tol, predicted)
            else {
                continue;
            };
            if (p2.omega.re - alpha).abs() < off.abs() {
                clip += c2;
                *state = State { scene: s2, op: o2, pair: p2 };
                applied = true;
                break;
            }
        }
        if !applied {
            break;
        }
    }
    clip
}

/// Minimize Γ at fixed Re ω = α from the given starting scene.
pub fn optimize(
    scene0: &MaterialScene,
    alpha: f64,
    params: &OptimizeParams,
) -> Result<ParetoPoint, OptimizeError> {
    let report = validate_scene(scene0);
    if !report.is_empty() {
        return Err(OptimizeError::SceneInvalid { report: report.to_string() });
    }
    let op0 = assemble(scene0).map_err(|r| OptimizeError::SceneInvalid { report: r.to_string() })?;
    let window = SearchWindow {
        center: C64::new(alpha, params.window_im_rel * alpha),
        radius: params.window_radius_rel * alpha,
        count: 8,
    };
    let pairs =
        find_eigs(&op0, &window, params.seed, params.eig_tol).map_err(OptimizeError::Eig)?;
    let pair0 = pairs
        .into_iter()
        .filter(|p| p.omega.re > 0.0)
        .min_by(|a, b| {
            let da = (a.omega.re - alpha).abs();
            let db = (b.omega.re - alpha).abs();
            da.partial_cmp(&db).unwrap().then(
                crate::loss_rate(a.omega)
                    .partial_cmp(&crate::loss_rate(b.omega))
                    .unwrap(),
            )
        })
        .ok_or(OptimizeError::NotAchievable { alpha })?;
    info!(
        "optimize alpha={:.6}: starting branch omega={:+.6}{:+.6}i",
        alpha, pair0.omega.re, pair0.omega.im
    );

    let mut state = State { scene: scene0.clone(), op: op0, pair: pair0 };
    let alpha_tol = params.alpha_tol_rel * alpha;
    let mut clip_events = align_alpha(&mut state, alpha, alpha_tol, params, None, 16);
    let mut gamma_trace: Vec<f64> = vec![crate::loss_rate(state.pair.omega)];
    let mut iterations = 0usize;
    let mut trust = params.trust_init;
    let variant = SwitchingVariant::for_family(&state.scene.family.kind);

    'outer: for round in 0..3 {
        // descent phase
        while iterations < params.max_iters {
            let dens = match density(&state.pair, &state.scene, &state.op) {
                Ok(d) => d,
                Err(_) => return Err(OptimizeError::Degenerate { alpha }),
            };
            let plan = match plan_step(&dens, &state.scene, trust) {
                PlanOutcome::AtStationaryPoint { .. } => break,
                PlanOutcome::Step(p) => p,
            };
            if plan.value <= 1e-11 * alpha {
                break; // descent rate negligible
            }
            match apply_step(&state, &plan, alpha, params, 24) {
                Ok((new_state, t, clipped)) => {
                    let g_new = crate::loss_rate(new_state.pair.omega);
                    debug!(
                        "iter {}: t={:.3e} gamma {:.9e} -> {:.9e}",
                        iterations,
                        t,
                        gamma_trace.last().unwrap(),
                        g_new
                    );
                    if g_new >= *gamma_trace.last().unwrap() {
                        warn!("non-monotone gamma step discarded");
                        trust *= 0.5;
                    } else {
                        gamma_trace.push(g_new);
                        state = new_state;
                        clip_events += clipped;
                        iterations += 1;
                        if t >= 0.99 * plan.trust_step {
                            trust = (trust * 1.6).min(params.trust_init);
                        } else {
                            trust = (t * 2.0).min(params.trust_init);
                        }
                    }
                }
                Err(_) => {
                    trust *= 0.5;
                }
            }
            if trust < params.trust_min {
                break;
            }
        }
        // re-align, then round to the two-material layout
        clip_events += align_alpha(&mut state, alpha, alpha_tol, params, None, 12);
        let Ok((fixed, _theta)) = fix_phase(&state.op, &state.scene, &state.pair) else {
            break 'outer; // cone spans more than a half-plane: not optimal
        };
        let sw = match switching(&fixed, &state.scene, variant) {
            Ok(s) => s,
            Err(_) => break 'outer,
        };
        let rounded = bang_bang_round(&state.scene, &sw.phi, params.dead_band);
        let changed = (0..rounded.grid.cell_count())
            .filter(|&c| rounded.eps_r[c] != state.scene.eps_r[c])
            .count();
        if changed == 0 {
            break 'outer;
        }
        debug!("round {}: bang-bang rounding changed {} cells", round, changed);
        let op_r = assemble(&rounded)
            .map_err(|r| OptimizeError::SceneInvalid { report: r.to_string() })?;
        let pair_r = continue_eig(&op_r, &state.pair.psi, state.pair.omega, params.eig_tol)
            .map_err(OptimizeError::Eig)?;
        state = State { scene: rounded, op: op_r, pair: pair_r };
    }

    // final alignment through dead-band fibers only, so the rounded layout
    // is untouched
    if (state.pair.omega.re - alpha).abs() > alpha_tol {
        let Ok((fixed, _)) = fix_phase(&state.op, &state.scene, &state.pair) else {
            return finish(state, alpha, params, variant, iterations, false, gamma_trace, clip_events);
        };
        if let Ok(sw) = switching(&fixed, &state.scene, variant) {
            let opt_cells: Vec<usize> = (0..state.scene.grid.cell_count())
                .filter(|&c| state.scene.opt.contains(c))
                .collect();
            let max_abs = opt_cells.iter().map(|&c| sw.phi[c].abs()).fold(0.0_f64, f64::max);
            let band = params.dead_band * max_abs;
            let mask: Vec<bool> = (0..state.scene.grid.cell_count())
                .map(|c| state.scene.opt.contains(c) && sw.phi[c].abs() <= band)
                .collect();
            if mask.iter().any(|&m| m) {
                clip_events += align_alpha(&mut state, alpha, alpha_tol, params, Some(&mask), 8);
            }
        }
    }

    let converged_alpha = (state.pair.omega.re - alpha).abs() <= alpha_tol;
    finish(state, alpha, params, variant, iterations, converged_alpha, gamma_trace, clip_events)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    state: State,
    alpha: f64,
    params: &OptimizeParams,
    variant: SwitchingVariant,
    iterations: usize,
    alpha_ok: bool,
    gamma_trace: Vec<f64>,
    clip_events: usize,
) -> Result<ParetoPoint, OptimizeError> {
    let (el, _sw) = diagnose(&state, variant, params);
    let converged = alpha_ok && el.residual.is_finite() && el.residual <= params.el_tol;
    info!(
        "optimize alpha={:.6}: gamma={:.6e} iters={} converged={} el_residual={:.3e} bb={:.4}",
        alpha, crate::loss_rate(state.pair.omega), iterations, converged, el.residual, el.bang_bang_fraction
    );
    Ok(ParetoPoint {
        alpha,
        gamma: crate::loss_rate(state.pair.omega),
        pair: state.pair,
        scene: state.scene,
        el,
        iterations,
        converged,
        gamma_trace,
        clip_events,
    })
}

fn diagnose(
    state: &State,
    variant: SwitchingVariant,
    params: &OptimizeParams,
) -> (ELReport, Option<crate::elverify::SwitchingField>) {
    match fix_phase(&state.op, &state.scene, &state.pair) {
        Ok((fixed, theta)) => match switching(&fixed, &state.scene, variant) {
            Ok(sw) => {
                let (residual, vacuous) = el_residual(&fixed, &state.scene, &sw, &state.op);
                let (singular, bb) = structure_metrics(&state.scene, &sw, params.dead_band);
                (
                    ELReport {
                        residual,
                        singular_fraction: singular,
                        bang_bang_fraction: bb,
                        phase_theta: theta,
                        vacuous,
                    },
                    Some(sw),
                )
            }
            Err(_) => (
                ELReport {
                    residual: f64::INFINITY,
                    singular_fraction: 1.0,
                    bang_bang_fraction: 0.0,
                    phase_theta: 0.0,
                    vacuous: false,
                },
                None,
            ),
        },
        Err(_) => (
            ELReport {
                residual: f64::INFINITY,
                singular_fraction: 1.0,
                bang_bang_fraction: 0.0,
                phase_theta: 0.0,
                vacuous: false,
            },
            None,
        ),
    }
}

/// An entry of the frontier sweep.
#[derive(Debug, Clone)]
pub enum FrontierEntry {
    Point(ParetoPoint),
    NotAchievable { alpha: f64 },
}

/// Run [`optimize`] over strictly increasing α values, warm-starting each
/// from its predecessor's layout. Unachievable entries are recorded and the
/// sweep continues.
pub fn sweep_frontier(
    scene0: &MaterialScene,
    alphas: &[f64],
    params: &OptimizeParams,
) -> Result<Vec<FrontierEntry>, String> {
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err("alphas must be strictly increasing".to_string());
    }
    let mut out = Vec::with_capacity(alphas.len());
    let mut warm = scene0.clone();
    for (idx, &alpha) in alphas.iter().enumerate() {
        let mut p = params.clone();
        p.seed = params.seed.wrapping_add((idx as u64).wrapping_mul(0x9e3779b97f4a7c15));
        match optimize(&warm, alpha, &p) {
            Ok(point) => {
                if point.converged {
                    warm = point.scene.clone();
                }
                out.push(FrontierEntry::Point(point));
            }
            Err(OptimizeError::NotAchievable { .. }) => {
                out.push(FrontierEntry::NotAchievable { alpha });
            }
            Err(e) => return Err(format!("alpha {} failed: {}", alpha, e)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::DEFAULT_EIG_TOL;
    use crate::maxwell::LayeredProfile1D;
    use std::f64::consts::PI;

    fn slab_state(nz: usize, eps_start: f64) -> State {
        let profile = LayeredProfile1D::uniform(1.0, 1.0, 3.0);
        let mut scene = crate::testbeds::slab_scene_from_profile(&profile, nz, crate::testbeds::EPS_SILICON);
        for c in 0..scene.grid.cell_count() {
            if scene.opt.contains(c) {
                scene.eps_r[c] = eps_start;
            }
        }
        let op = assemble(&scene).unwrap();
        let window = SearchWindow { center: C64::new(PI / eps_start.sqrt(), -0.2), radius: 1.3, count: 3 };
        let pair = find_eigs(&op, &window, 3, DEFAULT_EIG_TOL).unwrap().remove(0);
        State { scene, op, pair }
    }

    #[test]
    fn lp_separable_case_hits_upper_bounds() {
        // g purely imaginary with Im g > 0: maximizing Im Σ p g puts p at hi,
        // the equality constraint is trivially 0 = 0
        let g = vec![C64::new(0.0, 1.0), C64::new(0.0, 2.0), C64::new(0.0, 0.5)];
        let lo = vec![-1.0, -1.0, -1.0];
        let hi = vec![0.5, 0.25, 1.0];
        let (p, value, _lam) = box_lp(&g, &lo, &hi);
        assert_eq!(p, hi);
        assert!((value - (0.5 + 0.5 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn lp_constraint_is_met_exactly_and_kkt_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..200 {
            let n = rng.gen_range(1..40);
            let g: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for _ in 0..n {
                let a = rng.gen_range(-1.0..0.0);
                let b = rng.gen_range(0.0..1.0);
                lo.push(a);
                hi.push(b);
            }
            let (p, value, lam) = box_lp(&g, &lo, &hi);
            let scale: f64 = g.iter().map(|z| z.norm()).sum();
            let r: f64 = (0..n).map(|f| p[f] * g[f].re).sum();
            assert!(r.abs() <= 1e-12 * scale.max(1.0), "trial {}: r = {:e}", trial, r);
            assert!(value >= -1e-12 * scale, "trial {}: negative value", trial);
            // feasibility and KKT: p at a bound wherever Im g − λ Re g ≠ 0
            for f in 0..n {
                assert!(p[f] >= lo[f] - 1e-12 && p[f] <= hi[f] + 1e-12);
                let c = g[f].im - lam * g[f].re;
                if c.abs() > 1e-9 * g[f].norm().max(1e-12) {
                    let at_bound =
                        (p[f] - lo[f]).abs() <= 1e-10 || (p[f] - hi[f]).abs() <= 1e-10;
                    assert!(at_bound, "trial {} fiber {}: interior p with c = {:e}", trial, f, c);
                }
            }
            // optimality against random feasible points
            for _ in 0..20 {
                let q: Vec<f64> = (0..n).map(|f| rng.gen_range(lo[f]..=hi[f])).collect();
                let qr: f64 = (0..n).map(|f| q[f] * g[f].re).sum();
                if qr.abs() > 1e-9 * scale.max(1.0) {
                    continue;
                }
                let qv: f64 = (0..n).map(|f| q[f] * g[f].im).sum();
                assert!(
                    qv <= value + 1e-9 * scale.max(1.0),
                    "trial {}: feasible point beats LP ({} > {})",
                    trial,
                    qv,
                    value
                );
            }
        }
    }

    #[test]
    fn zero_density_is_stationary() {
        let state = slab_state(24, 2.0);
        let dens = SensitivityDensity {
            g: vec![C64::new(0.0, 0.0); state.scene.grid.cell_count()],
            denom: C64::new(1.0, 0.0),
            omega0: state.pair.omega,
        };
        match plan_step(&dens, &state.scene, 1.0) {
            PlanOutcome::AtStationaryPoint { zero_density } => assert!(zero_density),
            PlanOutcome::Step(_) => panic!("zero density must be stationary"),
        }
    }

    #[test]
    fn planned_step_descends_gamma_on_resolve() {
        let state = slab_state(48, 2.0);
        let dens = density(&state.pair, &state.scene, &state.op).unwrap();
        let plan = match plan_step(&dens, &state.scene, 1.0) {
            PlanOutcome::Step(p) => p,
            PlanOutcome::AtStationaryPoint { .. } => panic!("uniform start must descend"),
        };
        assert!(plan.value > 0.0);
        assert!(
            plan.predicted_shift.re.abs() <= 1e-10 * plan.predicted_shift.norm(),
            "re-neutrality violated: {}",
            plan.predicted_shift
        );
        // small applied steps reduce Γ of the re-solved eigenvalue
        let gamma0 = crate::loss_rate(state.pair.omega);
        for &t in &[1e-3, 1e-2] {
            let (scene_t, _) = perturbed_scene(&state.scene, &plan.p, t, true);
            let op_t = assemble(&scene_t).unwrap();
            let predicted = state.pair.omega + t * plan.predicted_shift;
            let pair_t = continue_eig(&op_t, &state.pair.psi, predicted, DEFAULT_EIG_TOL).unwrap();
            let gamma_t = crate::loss_rate(pair_t.omega);
            assert!(
                gamma_t < gamma0,
                "t = {}: gamma {} did not drop below {}",
                t,
                gamma_t,
                gamma0
            );
        }
    }

    #[test]
    fn stationary_plan_noop_apply() {
        let state = slab_state(24, 2.0);
        let dens = density(&state.pair, &state.scene, &state.op).unwrap();
        // a stationary outcome means no step is applied; emulate by checking
        // the plan consumer path
        if let PlanOutcome::AtStationaryPoint { .. } = plan_step(&dens, &state.scene, 1.0) {
            // uniform start in the interior always has a descent direction
            panic!("unexpected stationarity at uniform interior start");
        }
    }
}
