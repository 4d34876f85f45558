//! Parabolic minimizers by implicit variational time stepping.
//!
//! Each step minimizes J(w) = Σ_x μ_x (w_x - u_prev_x)² / (2Δt)
//! + (1/p) Σ_e m_e |Δw/ℓ_e|^p subject to boundary values. J is strictly
//! convex for p > 1 (the mass term keeps the Hessian positive definite even
//! where the p-energy degenerates), so the step is unique. The module also
//! evaluates separation-of-variables heat solutions, maps structure
//! constants of the flux to quasiminimizer constants, and checks the
//! comparison-principle conclusion on pairs of fields.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::SpaceTimeField;
use crate::mesh::{Space, TimeGrid};
use crate::quasimin::{ConstantsMode, QuasiminConstants};
use crate::{Error, Result};

/// Two-sided growth bounds on the flux: c₁|ξ|^p ≤ A(x,t,ξ)·ξ and
/// |A(x,t,ξ)| ≤ c₂|ξ|^{p-1}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StructureConstants {
    pub c1: f64,
    pub c2: f64,
    pub p: f64,
}

impl StructureConstants {
    pub fn new(c1: f64, c2: f64, p: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 >= c1 && c2.is_finite()) {
            return Err(Error::parameter(format!(
                "structure constants need 0 < c1 <= c2 < inf, got c1={c1}, c2={c2}"
            )));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::parameter(format!("exponent must satisfy 1 < p < inf, got {p}")));
        }
        Ok(StructureConstants { c1, c2, p })
    }
}

/// How (α, K) is derived from structure constants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum ConstantsDerivation {
    /// α = p/c₁ gives the smallest K = (c₂/c₁)^p from the Young split
    MinK,
    /// keep α fixed and pay the price in K
    FixedAlpha(f64),
}

/// Map structure constants to quasiminimizer constants through the Young
/// absorption chain.
///
/// Min-K mode fixes the Young parameter at the minimizer of K and returns
/// (α, K) = (p/c₁, (c₂/c₁)^p). Fixed-α mode requires α > 1/c₁ (otherwise
/// the gradient term cannot be absorbed) and returns
/// K = α c₂ s^{1-p} / p with s = p (c₁ - 1/α) / (c₂ (p-1)).
pub fn constants_from_structure(
    sc: &StructureConstants,
    mode: ConstantsDerivation,
) -> Result<QuasiminConstants> {
    match mode {
        ConstantsDerivation::MinK => QuasiminConstants::new(
            sc.p / sc.c1,
            (sc.c2 / sc.c1).powf(sc.p),
            ConstantsMode::DerivedMinK,
        ),
        ConstantsDerivation::FixedAlpha(alpha) => {
            if !(alpha > 1.0 / sc.c1) {
                return Err(Error::parameter(format!(
                    "absorption impossible: alpha = {alpha} must exceed 1/c1 = {}",
                    1.0 / sc.c1
                )));
            }
            let s = sc.p * (sc.c1 - 1.0 / alpha) / (sc.c2 * (sc.p - 1.0));
            let k = alpha * sc.c2 * s.powf(1.0 - sc.p) / sc.p;
            QuasiminConstants::new(alpha, k, ConstantsMode::DerivedFixedAlpha)
        }
    }
}

/// Inner-solve parameters for one implicit step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InnerSolve {
    /// target Euclidean norm of the objective gradient
    pub tol: f64,
    pub max_iter: usize,
    /// start the iteration from zero instead of the previous slice
    pub start_from_zero: bool,
}

impl Default for InnerSolve {
    fn default() -> Self {
        InnerSolve { tol: 1e-9, max_iter: 200, start_from_zero: false }
    }
}

/// Full solve configuration.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub p: f64,
    pub initial: Vec<f64>,
    /// per boundary vertex, per slice; `None` means zero boundary data
    pub boundary: Option<Vec<Vec<(usize, f64)>>>,
    pub inner: InnerSolve,
}

/// Convergence bookkeeping for one step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepStats {
    pub iterations: usize,
    pub residual: f64,
    pub kappa: f64,
}

/// Metadata of a full run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub total_iterations: usize,
    pub max_residual: f64,
    pub kappa: f64,
    pub runtime_seconds: f64,
}

/// Solver output: the space-time field plus run metadata.
pub struct SolveOutput {
    pub field: SpaceTimeField,
    pub metadata: RunMetadata,
}

fn objective(
    space: &Space,
    w: &[f64],
    u_prev: &[f64],
    p: f64,
    dt: f64,
) -> f64 {
    let mut j = 0.0;
    for v in 0..space.num_vertices() {
        let d = w[v] - u_prev[v];
        j += space.measure(v) * d * d / (2.0 * dt);
    }
    for e in space.edges() {
        let d = (w[e.a] - w[e.b]) / e.length;
        j += e.measure * d.abs().powf(p) / p;
    }
    j
}

/// Regularized flux |d|^{p-2} d and its derivative. κ = 0 recovers the
/// exact flux; κ > 0 is used for p < 2 where the derivative blows up at 0.
fn flux(d: f64, p: f64, kappa: f64) -> (f64, f64) {
    if kappa == 0.0 {
        if d == 0.0 {
            // p > 2: flux 0 with zero slope; p = 2: slope 1
            return (0.0, if p == 2.0 { 1.0 } else { 0.0 });
        }
        let ad = d.abs();
        (ad.powf(p - 2.0) * d, (p - 1.0) * ad.powf(p - 2.0))
    } else {
        let q = d * d + kappa * kappa;
        let f = q.powf((p - 2.0) / 2.0) * d;
        let df = q.powf((p - 4.0) / 2.0) * ((p - 1.0) * d * d + kappa * kappa);
        (f, df)
    }
}

/// One implicit variational step: minimize J subject to the boundary
/// values, starting from `u_prev` (or zero), by damped Newton with a
/// gradient-descent fallback.
pub fn p_parabolic_step(
    space: &Space,
    u_prev: &[f64],
    boundary: &[(usize, f64)],
    p: f64,
    dt: f64,
    inner: &InnerSolve,
) -> Result<(Vec<f64>, StepStats)> {
    if !(p > 1.0) {
        return Err(Error::parameter(format!("exponent must exceed 1, got {p}")));
    }
    if u_prev.len() != space.num_vertices() {
        return Err(Error::parameter("previous slice length does not match vertex count"));
    }
    let free: Vec<usize> = space.interior_vertices().collect();
    let free_pos: Vec<Option<usize>> = {
        let mut m = vec![None; space.num_vertices()];
        for (i, &v) in free.iter().enumerate() {
            m[v] = Some(i);
        }
        m
    };

    let scale = u_prev
        .iter()
        .map(|x| x.abs())
        .chain(boundary.iter().map(|(_, x)| x.abs()))
        .fold(1.0, f64::max);
    let kappa = if p < 2.0 { 1e-8 * scale } else { 0.0 };

    let mut w = if inner.start_from_zero { vec![0.0; u_prev.len()] } else { u_prev.to_vec() };
    for &(v, val) in boundary {
        w[v] = val;
    }

    let grad = |w: &[f64]| -> DVector<f64> {
        let mut g = DVector::zeros(free.len());
        for (i, &v) in free.iter().enumerate() {
            g[i] = space.measure(v) * (w[v] - u_prev[v]) / dt;
        }
        for e in space.edges() {
            let d = (w[e.a] - w[e.b]) / e.length;
            let (f, _) = flux(d, p, kappa);
            let coeff = e.measure * f / e.length;
            if let Some(i) = free_pos[e.a] {
                g[i] += coeff;
            }
            if let Some(i) = free_pos[e.b] {
                g[i] -= coeff;
            }
        }
        g
    };

    let mut iterations = 0;
    let mut residual = grad(&w).norm();
    // Stagnation bookkeeping: for p > 2 the energy is cubically flat across
    // zero-difference edges, so the gradient has a floating-point floor the
    // iteration cannot cross even though the iterate itself is accurate
    // (strong convexity of the mass term bounds the w-error by
    // residual · Δt / min μ). Accept the best iterate once progress stops
    // well below √tol.
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut stalled = 0usize;
    while residual > inner.tol {
        if iterations >= inner.max_iter {
            return Err(Error::NonConvergence { residual, iterations, last_iterate: w });
        }
        iterations += 1;

        // assemble Hessian over free vertices
        let mut h = DMatrix::zeros(free.len(), free.len());
        for (i, &v) in free.iter().enumerate() {
            h[(i, i)] = space.measure(v) / dt;
        }
        for e in space.edges() {
            let d = (w[e.a] - w[e.b]) / e.length;
            let (_, df) = flux(d, p, kappa);
            let coeff = e.measure * df / (e.length * e.length);
            match (free_pos[e.a], free_pos[e.b]) {
                (Some(i), Some(j)) => {
                    h[(i, i)] += coeff;
                    h[(j, j)] += coeff;
                    h[(i, j)] -= coeff;
                    h[(j, i)] -= coeff;
                }
                (Some(i), None) => h[(i, i)] += coeff,
                (None, Some(j)) => h[(j, j)] += coeff,
                (None, None) => {}
            }
        }

        let g = grad(&w);
        let direction = match h.cholesky() {
            Some(chol) => chol.solve(&-&g),
            // fall back to a diagonally scaled gradient step
            None => DVector::from_iterator(
                free.len(),
                free.iter().enumerate().map(|(i, &v)| -g[i] * dt / space.measure(v)),
            ),
        };

        // backtracking line search on J
        let j0 = objective(space, &w, u_prev, p, dt);
        let slope: f64 = g.dot(&direction);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial = w.clone();
            for (i, &v) in free.iter().enumerate() {
                trial[v] += lambda * direction[i];
            }
            if objective(space, &trial, u_prev, p, dt) <= j0 + 1e-4 * lambda * slope {
                w = trial;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return Err(Error::NonConvergence { residual, iterations, last_iterate: w });
        }
        residual = grad(&w).norm();

        match &mut best {
            Some((bw, br)) => {
                if residual < *br * 0.9 {
                    stalled = 0;
                } else {
                    stalled += 1;
                }
                if residual < *br {
                    bw.clone_from(&w);
                    *br = residual;
                }
            }
            None => best = Some((w.clone(), residual)),
        }
        if stalled >= 8 {
            let (bw, br) = best.unwrap();
            if br <= inner.tol.sqrt() {
                return Ok((bw, StepStats { iterations, residual: br, kappa }));
            }
            return Err(Error::NonConvergence { residual: br, iterations, last_iterate: bw });
        }
    }

    Ok((w, StepStats { iterations, residual, kappa }))
}

/// Sequential implicit steps from the initial slice.
pub fn solve_p_parabolic(
    space: &Arc<Space>,
    grid: TimeGrid,
    config: &SolveConfig,
) -> Result<SolveOutput> {
    if config.initial.len() != space.num_vertices() {
        return Err(Error::parameter("initial data length does not match vertex count"));
    }
    if let Some(b) = &config.boundary {
        if b.len() != grid.num_slices() {
            return Err(Error::parameter("boundary data must cover every slice"));
        }
    }
    let start = Instant::now();
    let zero_boundary: Vec<(usize, f64)> = space.boundary_vertices().map(|v| (v, 0.0)).collect();
    let boundary_at = |t: usize| -> Vec<(usize, f64)> {
        match &config.boundary {
            Some(b) => b[t].clone(),
            None => zero_boundary.clone(),
        }
    };

    let mut slices: Vec<Vec<f64>> = Vec::with_capacity(grid.num_slices());
    let mut first = config.initial.clone();
    for &(v, val) in &boundary_at(0) {
        first[v] = val;
    }
    slices.push(first);

    let mut total_iterations = 0;
    let mut max_residual = 0.0f64;
    let mut kappa = 0.0;
    for t in 1..grid.num_slices() {
        let (next, stats) = p_parabolic_step(
            space,
            &slices[t - 1],
            &boundary_at(t),
            config.p,
            grid.dt(),
            &config.inner,
        )?;
        total_iterations += stats.iterations;
        max_residual = max_residual.max(stats.residual);
        kappa = stats.kappa;
        slices.push(next);
    }

    let field = SpaceTimeField::from_slices(space.clone(), grid, &slices)?;
    Ok(SolveOutput {
        field,
        metadata: RunMetadata {
            total_iterations,
            max_residual,
            kappa,
            runtime_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Separation-of-variables solution of ∂u/∂t = a u'' on the unit interval
/// with zero lateral boundary values:
/// u(x,t) = Σ_n b_n e^{-a (nπ)² t} sin(nπx).
pub fn heat_series_solution(
    a: f64,
    coefficients: &[f64],
    space: &Arc<Space>,
    grid: TimeGrid,
) -> Result<SpaceTimeField> {
    if !(a > 0.0) {
        return Err(Error::parameter(format!("diffusion coefficient must be positive, got {a}")));
    }
    let pi = std::f64::consts::PI;
    let mut field = SpaceTimeField::from_xt(space.clone(), grid, |x, t| {
        coefficients
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let n = (i + 1) as f64;
                b * (-a * (n * pi).powi(2) * t).exp() * (n * pi * x).sin()
            })
            .sum()
    })?;
    // every mode vanishes at the lateral boundary; make that exact instead
    // of leaving sin(nπ) round-off
    for t in 0..grid.num_slices() {
        for b in space.boundary_vertices() {
            field.set(t, b, 0.0);
        }
    }
    Ok(field)
}

/// Piecewise-linear time cutoff used by the comparison argument: ramps up
/// over [h, 2h], sits at 1, and ramps down over [t' - h, t' + h].
#[derive(Debug, Clone)]
pub struct CutoffProfile {
    pub h: f64,
    pub t_prime: f64,
    pub values: Vec<f64>,
}

/// χ at an arbitrary time. The interval (t'-2h, t'-h) is filled with the
/// value 1, the unique continuous completion of the two adjacent ramps.
pub fn chi_value(t: f64, h: f64, t_prime: f64) -> f64 {
    if t <= h {
        0.0
    } else if t >= 2.0 * h && t < t_prime - h {
        // plateau checked first so that χ(2h) = 1 exactly
        1.0
    } else if t < 2.0 * h {
        ((t - h) / h).clamp(0.0, 1.0)
    } else if t <= t_prime + h {
        // written so that χ(t') = 1/2 exactly
        (0.5 + (t_prime - t) / (2.0 * h)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn chi_cutoff(h: f64, t_prime: f64, grid: TimeGrid) -> Result<CutoffProfile> {
    if !(h > 0.0) {
        return Err(Error::parameter(format!("cutoff needs h > 0, got {h}")));
    }
    if !(2.0 * h < t_prime - 2.0 * h) {
        return Err(Error::parameter(format!(
            "cutoff geometry violated: need 2h < t' - 2h, got h={h}, t'={t_prime}"
        )));
    }
    if !(t_prime + h < grid.t_end()) {
        return Err(Error::parameter(format!(
            "cutoff geometry violated: need t' + h < T, got t'={t_prime}, h={h}, T={}",
            grid.t_end()
        )));
    }
    let values = (0..grid.num_slices()).map(|i| chi_value(grid.time(i), h, t_prime)).collect();
    Ok(CutoffProfile { h, t_prime, values })
}

/// Comparison-principle verdict for a super/sub pair.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub max_violation: f64,
    pub at_slice: usize,
    pub at_vertex: String,
    pub tol: f64,
    pub pass: bool,
}

/// Check the comparison conclusion u ≥ v on the whole cylinder. The
/// precondition is the boundary ordering: (v - u)₊ must vanish (≤ tol) on
/// every boundary vertex of every slice.
pub fn comparison_check(u: &SpaceTimeField, v: &SpaceTimeField, tol: f64) -> Result<ComparisonReport> {
    let space = u.space();
    for t in 0..u.num_slices() {
        for b in space.boundary_vertices() {
            let excess = (v.value(t, b) - u.value(t, b)).max(0.0);
            if excess > tol {
                return Err(Error::parameter(format!(
                    "boundary ordering violated at slice {t}, vertex '{}': (v-u)+ = {excess:.3e}",
                    space.vertex(b).id
                )));
            }
        }
    }
    let mut max_violation = 0.0;
    let mut at = (0usize, 0usize);
    for t in 0..u.num_slices() {
        for x in 0..space.num_vertices() {
            let excess = (v.value(t, x) - u.value(t, x)).max(0.0);
            if excess > max_violation {
                max_violation = excess;
                at = (t, x);
            }
        }
    }
    Ok(ComparisonReport {
        max_violation,
        at_slice: at.0,
        at_vertex: space.vertex(at.1).id.clone(),
        tol,
        pass: max_violation <= tol,
    })
}

/// (1/h) ∫₀ʰ ∫_Ω (v - u)₊² dν, the quantity whose decay encodes initial
/// ordering.
pub fn initial_condition_residual(u: &SpaceTimeField, v: &SpaceTimeField, h: f64) -> Result<f64> {
    let grid = u.grid();
    if !(h > 0.0 && h <= grid.t_end()) {
        return Err(Error::parameter(format!("window must satisfy 0 < h <= T, got {h}")));
    }
    let space = u.space();
    let dt = grid.dt();
    let mut acc = 0.0;
    for t in 0..u.num_slices() {
        if grid.time(t) >= h {
            break;
        }
        for x in 0..space.num_vertices() {
            let excess = (v.value(t, x) - u.value(t, x)).max(0.0);
            acc += space.measure(x) * excess * excess * dt;
        }
    }
    Ok(acc / h)
}
