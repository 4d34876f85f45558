//! The parabolic quasiminimizer energy inequality and its equivalent
//! region forms, plus numerical estimation of the smallest admissible K.
//!
//! The central object is the margin of
//!
//!   α ∫_U u ∂φ/∂t dν + ∫_U g_u^p dν ≤ K ∫_U g_{u+φ}^p dν
//!
//! evaluated discretely over a region U of the space-time cylinder, for test
//! functions φ vanishing near the parabolic boundary. The region can be an
//! enclosing open set, an arbitrary measurable set, the nonzero set of φ, or
//! its support; the four margins are mutually consistent through exact
//! summation identities that the form checker verifies.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{
    edge_gradient, time_derivative, MollifierKernel, Region, SpaceTimeField,
};
use crate::mesh::{Space, TimeGrid};
use crate::{Error, Result};

/// Provenance of a constants pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstantsMode {
    Given,
    DerivedMinK,
    DerivedFixedAlpha,
}

/// The pair (α, K) of the quasiminimizer definition.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuasiminConstants {
    pub alpha: f64,
    pub k: f64,
    pub mode: ConstantsMode,
}

impl QuasiminConstants {
    pub fn new(alpha: f64, k: f64, mode: ConstantsMode) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::parameter(format!("alpha must be positive, got {alpha}")));
        }
        if !(k >= 1.0) {
            return Err(Error::parameter(format!("K must be >= 1, got {k}")));
        }
        Ok(QuasiminConstants { alpha, k, mode })
    }

    pub fn given(alpha: f64, k: f64) -> Result<Self> {
        Self::new(alpha, k, ConstantsMode::Given)
    }
}

/// Which sign class of test functions the inequality is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// unrestricted φ
    Minimizer,
    /// φ ≥ 0 (quasisuperminimizer check)
    Super,
    /// φ ≤ 0 (quasisubminimizer check)
    Sub,
}

/// Admissible region shapes for the energy inequality.
#[derive(Debug, Clone)]
pub enum RegionForm {
    /// an enclosing open set, given explicitly
    OpenSet(Region),
    /// an arbitrary measurable set containing {φ ≠ 0}
    MeasurableSet(Region),
    /// exactly {φ ≠ 0}
    NonzeroSet,
    /// discrete support: {φ ≠ 0} grown by one graph hop and one time step
    Support,
}

impl RegionForm {
    pub fn tag(&self) -> &'static str {
        match self {
            RegionForm::OpenSet(_) => "OPEN_SET",
            RegionForm::MeasurableSet(_) => "MEASURABLE_SET",
            RegionForm::NonzeroSet => "NONZERO_SET",
            RegionForm::Support => "SUPPORT",
        }
    }

    /// Resolve to a concrete region, enforcing admissibility: the region
    /// must contain {φ ≠ 0} and be compactly contained in the cylinder.
    pub fn resolve(&self, phi: &SpaceTimeField) -> Result<Region> {
        let space = phi.space();
        let nonzero = Region::nonzero_set(phi);
        let region = match self {
            RegionForm::NonzeroSet => nonzero.clone(),
            RegionForm::Support => nonzero.dilate(space),
            RegionForm::OpenSet(r) | RegionForm::MeasurableSet(r) => {
                if !nonzero.is_subset_of(r) {
                    return Err(Error::inadmissible(format!(
                        "{{phi != 0}} is not contained in the given {} region",
                        self.tag()
                    )));
                }
                r.clone()
            }
        };
        if !region.is_compactly_contained(space) {
            return Err(Error::inadmissible(format!(
                "{} region touches the parabolic boundary (boundary vertex or first/last slice)",
                self.tag()
            )));
        }
        Ok(region)
    }
}

/// The three integrals of the energy inequality over one region.
#[derive(Debug, Clone, Serialize)]
pub struct EnergyTerms {
    /// ∫ u ∂φ/∂t dν
    pub a: f64,
    /// ∫ g_u^p dν
    pub b: f64,
    /// ∫ g_{u+φ}^p dν
    pub c: f64,
    pub form: String,
}

/// Evaluate A, B, C over the resolved region.
pub fn energy_terms(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    form: &RegionForm,
    p: f64,
) -> Result<EnergyTerms> {
    let region = form.resolve(phi)?;
    let terms = energy_terms_on_region(u, phi, &region, p);
    Ok(EnergyTerms { form: form.tag().to_string(), ..terms })
}

/// A, B, C over an explicit region without admissibility checks. The form
/// equivalences are verified through exact region decompositions, so the
/// raw per-region sums are exposed too.
pub fn energy_terms_on_region(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    region: &Region,
    p: f64,
) -> EnergyTerms {
    let space = u.space();
    let dt = u.grid().dt();
    let dphi = time_derivative(phi);
    let gu = edge_gradient(u);
    let gup = edge_gradient(&u.add(phi));

    let a: f64 =
        region.cells().map(|(t, v)| u.value(t, v) * dphi.value(t, v) * space.measure(v) * dt).sum();
    let mut b = 0.0;
    let mut c = 0.0;
    for t in 0..u.num_slices() {
        for e in region.edges_at(space, t) {
            let m = space.edge(e).measure * dt;
            b += gu.value(t, e).powf(p) * m;
            c += gup.value(t, e).powf(p) * m;
        }
    }
    EnergyTerms { a, b, c, form: String::new() }
}

/// Outcome of one inequality evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct MarginReport {
    pub form: String,
    pub variant: Variant,
    pub alpha: f64,
    pub k: f64,
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// K·C - (α·A + B); nonnegative (up to tol) when the inequality holds
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// First-order quadrature slack: 10 (h + Δt) · (B + C).
pub fn default_margin_tol(space: &Space, grid: TimeGrid, b: f64, c: f64) -> f64 {
    let h = space.edges().iter().map(|e| e.length).fold(0.0, f64::max);
    10.0 * (h + grid.dt()) * (b + c)
}

/// Check the quasiminimizer inequality for one test function. `tol = None`
/// uses the default discretization slack.
pub fn check_inequality(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    constants: &QuasiminConstants,
    p: f64,
    form: &RegionForm,
    tol: Option<f64>,
    variant: Variant,
) -> Result<MarginReport> {
    match variant {
        Variant::Super => {
            if phi.values().iter().any(|&v| v < 0.0) {
                return Err(Error::inadmissible(
                    "superminimizer check requires a nonnegative test function",
                ));
            }
        }
        Variant::Sub => {
            if phi.values().iter().any(|&v| v > 0.0) {
                return Err(Error::inadmissible(
                    "subminimizer check requires a nonpositive test function",
                ));
            }
        }
        Variant::Minimizer => {}
    }
    let terms = energy_terms(u, phi, form, p)?;
    let tol = tol.unwrap_or_else(|| default_margin_tol(u.space(), u.grid(), terms.b, terms.c));
    let margin = constants.k * terms.c - (constants.alpha * terms.a + terms.b);
    Ok(MarginReport {
        form: terms.form,
        variant,
        alpha: constants.alpha,
        k: constants.k,
        p,
        a: terms.a,
        b: terms.b,
        c: terms.c,
        margin,
        tol,
        pass: margin >= -tol,
    })
}

/// Margins of all four region forms plus the consistency verdict.
#[derive(Debug, Clone, Serialize)]
pub struct FourFormReport {
    pub open: MarginReport,
    pub measurable: MarginReport,
    pub nonzero: MarginReport,
    pub support: MarginReport,
    /// nonzero and measurable margins agree exactly, and the support/open
    /// margins match their region-decomposition reconstructions
    pub chain_consistent: bool,
    pub all_pass: bool,
}

/// Evaluate the inequality under all four forms. The measurable form uses
/// {φ ≠ 0} as the measurable set. In the discrete topology every vertex set
/// is open, so the smallest enclosing admissible open set is the support
/// itself.
pub fn check_all_forms(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    constants: &QuasiminConstants,
    p: f64,
    tol: Option<f64>,
) -> Result<FourFormReport> {
    let space = u.space();
    let nonzero_region = Region::nonzero_set(phi);
    let support_region = nonzero_region.dilate(space);
    let open_region = support_region.clone();

    let nonzero =
        check_inequality(u, phi, constants, p, &RegionForm::NonzeroSet, tol, Variant::Minimizer)?;
    let measurable = check_inequality(
        u,
        phi,
        constants,
        p,
        &RegionForm::MeasurableSet(nonzero_region.clone()),
        tol,
        Variant::Minimizer,
    )?;
    let support =
        check_inequality(u, phi, constants, p, &RegionForm::Support, tol, Variant::Minimizer)?;
    let open = check_inequality(
        u,
        phi,
        constants,
        p,
        &RegionForm::OpenSet(open_region.clone()),
        tol,
        Variant::Minimizer,
    )?;

    // Exact consistency: margins over nested regions differ by the terms on
    // the difference set, nothing else.
    let scale = 1.0 + nonzero.margin.abs() + support.margin.abs() + open.margin.abs();
    let eq = |x: f64, y: f64| (x - y).abs() <= 1e-9 * scale;
    let recon_support = reconstruct_margin(u, phi, constants, p, &nonzero, &nonzero_region, &support_region);
    let recon_open = reconstruct_margin(u, phi, constants, p, &support, &support_region, &open_region);
    let chain_consistent = eq(nonzero.margin, measurable.margin)
        && eq(support.margin, recon_support)
        && eq(open.margin, recon_open);

    let all_pass = nonzero.pass && measurable.pass && support.pass && open.pass;
    Ok(FourFormReport { open, measurable, nonzero, support, chain_consistent, all_pass })
}

/// Margin over `larger` reconstructed from the margin over `smaller` plus
/// independently summed terms on the difference cells and edges.
fn reconstruct_margin(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    constants: &QuasiminConstants,
    p: f64,
    smaller_report: &MarginReport,
    smaller: &Region,
    larger: &Region,
) -> f64 {
    let space = u.space();
    let dt = u.grid().dt();
    let dphi = time_derivative(phi);
    let gu = edge_gradient(u);
    let gup = edge_gradient(&u.add(phi));

    let diff = larger.difference(smaller);
    let da: f64 =
        diff.cells().map(|(t, v)| u.value(t, v) * dphi.value(t, v) * space.measure(v) * dt).sum();
    let mut db = 0.0;
    let mut dc = 0.0;
    for t in 0..u.num_slices() {
        let in_small: Vec<usize> = smaller.edges_at(space, t).collect();
        for e in larger.edges_at(space, t) {
            if in_small.contains(&e) {
                continue;
            }
            let m = space.edge(e).measure * dt;
            db += gu.value(t, e).powf(p) * m;
            dc += gup.value(t, e).powf(p) * m;
        }
    }
    smaller_report.margin + constants.k * dc - constants.alpha * da - db
}

/// Two-sided truncation ψᵢ = (φ - 1/i)₊ - (φ + 1/i)₋: shrinks |φ| by 1/i
/// and keeps the sign.
pub fn truncate_test(phi: &SpaceTimeField, i: u32) -> SpaceTimeField {
    assert!(i >= 1, "truncation index must be >= 1");
    let cut = 1.0 / i as f64;
    phi.map(|v| (v - cut).max(0.0) - (-(v + cut)).max(0.0))
}

/// Margin of the mollified inequality: time-regularized form with the time
/// derivative moved onto u.
#[derive(Debug, Clone, Serialize)]
pub struct MollifiedMarginReport {
    /// -α ∫ ∂u_ε/∂t · φ dν
    pub lhs_time: f64,
    /// ∫ (g_u^p)_ε dν
    pub lhs_energy: f64,
    /// ∫ (g_{u(x,t-s)+φ}^p)_ε dν
    pub rhs_energy: f64,
    pub margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Evaluate the mollified quasisuperminimizer inequality
///
///   -α ∫ ∂u_ε/∂t φ dν + ∫ (g_u^p)_ε dν ≤ K ∫ (g_{u(x,t-s)+φ}^p)_ε dν
///
/// over {φ ≠ 0}. The right side mollifies over the shift s with the same
/// kernel weights. ε must leave the whole nonzero set of φ inside the valid
/// mollification window, with one extra slice for the time derivative.
pub fn mollified_inequality_check(
    u: &SpaceTimeField,
    phi: &SpaceTimeField,
    kernel: &MollifierKernel,
    constants: &QuasiminConstants,
    p: f64,
    tol: Option<f64>,
) -> Result<MollifiedMarginReport> {
    if phi.values().iter().any(|&v| v < 0.0) {
        return Err(Error::inadmissible("mollified check requires a nonnegative test function"));
    }
    let space = u.space();
    let grid = u.grid();
    let nt = grid.num_slices();
    let dt = grid.dt();
    let h = kernel.half_steps();

    let nonzero = Region::nonzero_set(phi);
    if !nonzero.is_compactly_contained(space) {
        return Err(Error::inadmissible("{phi != 0} touches the parabolic boundary"));
    }
    for (t, _) in nonzero.cells() {
        if t < h + 1 || t + h + 1 > nt - 1 {
            return Err(Error::parameter(format!(
                "mollifier half-width {} too large: slice {t} of {{phi != 0}} leaves the valid window",
                kernel.eps()
            )));
        }
    }

    let u_eps = crate::calculus::mollify_time(u, kernel)?;
    let du_eps = time_derivative(&u_eps.field);

    let lhs_time: f64 = nonzero
        .cells()
        .map(|(t, v)| {
            -constants.alpha * du_eps.value(t, v) * phi.value(t, v) * space.measure(v) * dt
        })
        .sum();

    let gu = edge_gradient(u);
    let mut lhs_energy = 0.0;
    for t in 0..nt {
        for e in nonzero.edges_at(space, t) {
            let mut acc = 0.0;
            for j in -(h as i64)..=h as i64 {
                let ts = (t as i64 - j) as usize;
                acc += kernel.weight(j) * gu.value(ts, e).powf(p);
            }
            lhs_energy += acc * space.edge(e).measure * dt;
        }
    }

    // shifted-u-plus-phi gradients, averaged over the shift with the kernel
    let mut rhs_energy = 0.0;
    let shifted: Vec<SpaceTimeField> =
        (0..=h).map(|s| u.shift_time(s)).collect();
    for t in 0..nt {
        let edges: Vec<usize> = nonzero.edges_at(space, t).collect();
        if edges.is_empty() {
            continue;
        }
        for j in -(h as i64)..=h as i64 {
            let w = kernel.weight(j);
            // field u(·, t - s) at slice t, s = jΔt: value u(t - j)
            for &e in &edges {
                let edge = space.edge(e);
                let us = (t as i64 - j) as usize;
                let (ua, ub) = if j >= 0 {
                    (shifted[j as usize].value(t, edge.a), shifted[j as usize].value(t, edge.b))
                } else {
                    (u.value(us, edge.a), u.value(us, edge.b))
                };
                let ga = ua + phi.value(t, edge.a);
                let gb = ub + phi.value(t, edge.b);
                let g = (ga - gb).abs() / edge.length;
                rhs_energy += w * g.powf(p) * edge.measure * dt;
            }
        }
    }

    let tol = tol.unwrap_or_else(|| default_margin_tol(space, grid, lhs_energy, rhs_energy));
    let margin = constants.k * rhs_energy - (lhs_time + lhs_energy);
    Ok(MollifiedMarginReport {
        lhs_time,
        lhs_energy,
        rhs_energy,
        margin,
        tol,
        pass: margin >= -tol,
    })
}

/// Sign restriction for generated families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SignRestriction {
    Nonnegative,
    Nonpositive,
    Any,
}

/// Parameters of one space-time tent function.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BumpSpec {
    pub center_vertex: usize,
    pub center_slice: usize,
    /// spatial half-width in graph distance
    pub space_width: f64,
    /// temporal half-width in grid steps
    pub time_halfwidth: usize,
    pub amplitude: f64,
}

/// Generator parameters for a seeded test-function family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilySpec {
    pub count: usize,
    /// sampled spatial width range, clipped per-center to stay inside Ω
    pub width_range: (f64, f64),
    pub amplitude_range: (f64, f64),
    pub sign: SignRestriction,
    pub seed: u64,
}

/// A family of compactly supported Lipschitz test functions.
pub struct TestFamily {
    pub members: Vec<SpaceTimeField>,
    pub specs: Vec<BumpSpec>,
    pub sign: SignRestriction,
}

/// Build the tent field of one bump spec.
pub fn bump_field(space: &Arc<Space>, grid: TimeGrid, spec: &BumpSpec) -> SpaceTimeField {
    let dist = space.distances_from(spec.center_vertex);
    let ht = spec.time_halfwidth as f64;
    SpaceTimeField::from_fn(space.clone(), grid, |t, v| {
        let hat_x = (1.0 - dist[v] / spec.space_width).max(0.0);
        let hat_t = (1.0 - (t as f64 - spec.center_slice as f64).abs() / ht).max(0.0);
        spec.amplitude * hat_x * hat_t
    })
}

/// Largest spatial bump width around `center` that keeps the nonzero set
/// two graph hops away from the spatial boundary, so that the support
/// (nonzero set dilated one step) stays compactly contained. Zero when the
/// center itself sits in the one-hop boundary collar.
pub fn max_admissible_width(space: &Space, center: usize) -> f64 {
    // vertices within one hop of the boundary
    let mut collar = vec![false; space.num_vertices()];
    for b in space.boundary_vertices() {
        collar[b] = true;
        for &(_, w) in space.neighbours(b) {
            collar[w] = true;
        }
    }
    let dist = space.distances_from(center);
    (0..space.num_vertices())
        .filter(|&v| collar[v])
        .map(|v| dist[v])
        .fold(f64::INFINITY, f64::min)
}

/// Deterministic-under-seed family of products of spatial and temporal hat
/// functions. Every member stays two hops and two slices clear of the
/// parabolic boundary: the nonzero set and its support are compactly
/// contained, and central-difference summation by parts in time is exact.
pub fn generate_test_family(
    space: &Arc<Space>,
    grid: TimeGrid,
    spec: &FamilySpec,
) -> Result<TestFamily> {
    let nt = grid.num_slices();
    let last = nt - 1;
    if last < 4 {
        return Err(Error::parameter(
            "time grid too short for compactly supported bumps (need at least 4 steps)",
        ));
    }
    if !(spec.width_range.0 > 0.0) || spec.width_range.1 < spec.width_range.0 {
        return Err(Error::parameter("invalid bump width range"));
    }
    if !(spec.amplitude_range.0 > 0.0) || spec.amplitude_range.1 < spec.amplitude_range.0 {
        return Err(Error::parameter("amplitude range must be positive (sign is applied separately)"));
    }

    // admissible centers: interior vertices with room for a bump outside
    // the one-hop boundary collar
    let candidates: Vec<(usize, f64)> = space
        .interior_vertices()
        .map(|v| (v, max_admissible_width(space, v)))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if candidates.is_empty() {
        return Err(Error::parameter(
            "space has no interior vertices clear of the one-hop boundary collar",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut members = Vec::with_capacity(spec.count);
    let mut specs = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let pick = rng.gen_range(0..candidates.len());
        let (center_vertex, admissible) = candidates[pick];
        let max_w = admissible.min(spec.width_range.1);
        let min_w = spec.width_range.0.min(max_w);
        let space_width = if max_w > min_w { rng.gen_range(min_w..=max_w) } else { max_w };

        // nonzero slices must stay within [2, last - 2]
        let center_slice = rng.gen_range(2..=last - 2);
        let max_ht = center_slice.min(last - center_slice).saturating_sub(1).max(1);
        let time_halfwidth = rng.gen_range(1..=max_ht);

        let magnitude = rng.gen_range(spec.amplitude_range.0..=spec.amplitude_range.1);
        let amplitude = match spec.sign {
            SignRestriction::Nonnegative => magnitude,
            SignRestriction::Nonpositive => -magnitude,
            SignRestriction::Any => {
                if rng.gen_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            }
        };

        let bump = BumpSpec { center_vertex, center_slice, space_width, time_halfwidth, amplitude };
        members.push(bump_field(space, grid, &bump));
        specs.push(bump);
    }
    Ok(TestFamily { members, specs, sign: spec.sign })
}

/// Result of the minimal-K search.
#[derive(Debug)]
pub struct KEstimate {
    /// sup over explored φ of (α·A + B)/C, clamped below at 1; infinite when
    /// some φ had C = 0 but α·A + B > 0 ("no finite K")
    pub value: f64,
    pub witness: Option<SpaceTimeField>,
    pub witness_coefficients: Vec<f64>,
    /// true when no explored φ had C > 0
    pub inconclusive: bool,
    pub evaluations: usize,
}

/// Ratio (α·A + B)/C over supp φ; None when C = 0 and the numerator
/// vanishes too, +inf when C = 0 with positive numerator.
///
/// The support region (nonzero set dilated one step) rather than {φ ≠ 0}
/// itself: on the support the discrete time-coupling sum telescopes to zero
/// exactly for every compactly supported φ, so the ratio cannot be inflated
/// by O(Δt) edge effects of the region restriction.
fn k_ratio(u: &SpaceTimeField, phi: &SpaceTimeField, alpha: f64, p: f64) -> Option<f64> {
    let nonzero = Region::nonzero_set(phi);
    if nonzero.is_empty() {
        return None;
    }
    let region = nonzero.dilate(u.space());
    if !region.is_compactly_contained(u.space()) {
        return None;
    }
    let terms = energy_terms_on_region(u, phi, &region, p);
    let numerator = alpha * terms.a + terms.b;
    if terms.c > 0.0 {
        Some(numerator / terms.c)
    } else {
        // C = 0: tell a genuine "no finite K" apart from round-off in the
        // time-coupling sum, which telescopes to zero in exact arithmetic
        let noise = 1e-10
            * (alpha.abs()
                * u.max_abs()
                * phi.max_abs()
                * u.space().total_measure()
                * u.grid().t_end()
                + terms.b);
        if numerator > noise {
            Some(f64::INFINITY)
        } else {
            None
        }
    }
}

/// Lower-bound estimate of the minimal quasiminimizer constant K for fixed α.
///
/// Evaluates the ratio on every family member, then refines by derivative-free
/// coordinate search over the amplitudes of the best-scoring members:
/// one coefficient is perturbed at a time, improvements are accepted, and the
/// step decays geometrically. Deterministic for a fixed family; a larger
/// budget explores a superset of combinations and never lowers the result.
pub fn estimate_min_k(
    u: &SpaceTimeField,
    alpha: f64,
    p: f64,
    family: &TestFamily,
    budget: usize,
) -> Result<KEstimate> {
    if budget == 0 {
        return Err(Error::parameter("search budget must be at least 1"));
    }
    let mut evaluations = 0usize;
    let mut scored: Vec<(usize, f64)> = Vec::new();
    let mut best_single: Option<(usize, f64)> = None;
    for (i, phi) in family.members.iter().enumerate() {
        if evaluations >= budget {
            break;
        }
        evaluations += 1;
        if let Some(r) = k_ratio(u, phi, alpha, p) {
            if r.is_infinite() {
                return Ok(KEstimate {
                    value: f64::INFINITY,
                    witness: Some(phi.clone()),
                    witness_coefficients: vec![1.0],
                    inconclusive: false,
                    evaluations,
                });
            }
            scored.push((i, r));
            if best_single.map_or(true, |(_, b)| r > b) {
                best_single = Some((i, r));
            }
        }
    }
    let Some((best_idx, best_ratio)) = best_single else {
        return Ok(KEstimate {
            value: 1.0,
            witness: None,
            witness_coefficients: Vec::new(),
            inconclusive: true,
            evaluations,
        });
    };

    // coordinate search over amplitudes of the top-scoring members
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let basis: Vec<usize> = scored.iter().take(8).map(|(i, _)| *i).collect();
    let mut coeffs = vec![0.0; basis.len()];
    coeffs[basis.iter().position(|&i| i == best_idx).unwrap()] = 1.0;

    let combine = |c: &[f64]| -> SpaceTimeField {
        let mut phi = family.members[basis[0]].scale(c[0]);
        for (k, &i) in basis.iter().enumerate().skip(1) {
            if c[k] != 0.0 {
                phi = phi.add(&family.members[i].scale(c[k]));
            }
        }
        phi
    };

    let mut best_value = best_ratio;
    let mut best_coeffs = coeffs.clone();
    let mut step = 0.5f64;
    while evaluations < budget && step > 1e-4 {
        let mut improved = false;
        'sweep: for k in 0..coeffs.len() {
            for dir in [1.0, -1.0] {
                if evaluations >= budget {
                    break 'sweep;
                }
                let mut trial = coeffs.clone();
                trial[k] += dir * step;
                evaluations += 1;
                if let Some(r) = k_ratio(u, &combine(&trial), alpha, p) {
                    if r.is_infinite() {
                        return Ok(KEstimate {
                            value: f64::INFINITY,
                            witness: Some(combine(&trial)),
                            witness_coefficients: trial,
                            inconclusive: false,
                            evaluations,
                        });
                    }
                    if r > best_value {
                        best_value = r;
                        best_coeffs = trial.clone();
                        coeffs = trial;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    Ok(KEstimate {
        value: best_value.max(1.0),
        witness: Some(combine(&best_coeffs)),
        witness_coefficients: best_coeffs,
        inconclusive: false,
        evaluations,
    })
}

/// Which slope the harmonic staircase uses on segment (i-1, i].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StaircaseReading {
    /// slope 1/i on segment i: continuous across the integers
    PerSegment,
    /// literal fixed slope 1/k on every segment; discontinuous at integers
    /// unless k matches the segment index
    FixedSlope(u32),
}

/// Pointwise value of the staircase function.
pub fn staircase_value(x: f64, reading: StaircaseReading) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let i = x.ceil().max(1.0) as u32;
    let harmonic: f64 = (1..i).map(|j| 1.0 / j as f64).sum();
    let slope = match reading {
        StaircaseReading::PerSegment => 1.0 / i as f64,
        StaircaseReading::FixedSlope(k) => 1.0 / k as f64,
    };
    (x - (i - 1) as f64) * slope + harmonic
}

/// The staircase sampled on a fresh interval mesh over (0, L), constant in
/// time. `density` is vertices per unit length.
pub fn staircase_function(
    length: f64,
    density: usize,
    grid: TimeGrid,
    reading: StaircaseReading,
) -> Result<(Arc<Space>, SpaceTimeField)> {
    if !(length >= 1.0) {
        return Err(Error::parameter(format!("staircase needs L >= 1, got {length}")));
    }
    let n = ((length * density as f64).round() as usize).max(2) + 1;
    let space = Arc::new(Space::interval_mesh(n, length)?);
    let field = SpaceTimeField::from_xt(space.clone(), grid, |x, _| staircase_value(x, reading))?;
    Ok((space, field))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(n: usize, steps: usize) -> (Arc<Space>, TimeGrid) {
        let space = Arc::new(Space::interval_mesh(n, 1.0).unwrap());
        let grid = TimeGrid::new(1.0, steps).unwrap();
        (space, grid)
    }

    fn sample_bump(space: &Arc<Space>, grid: TimeGrid) -> SpaceTimeField {
        let spec = BumpSpec {
            center_vertex: space.num_vertices() / 2,
            center_slice: grid.num_slices() / 2,
            space_width: 0.3,
            time_halfwidth: 2,
            amplitude: 1.0,
        };
        bump_field(space, grid, &spec)
    }

    /// Naive reimplementation of the three energy sums, used as an
    /// independent oracle for the production path.
    fn naive_terms(
        u: &SpaceTimeField,
        phi: &SpaceTimeField,
        region: &Region,
        p: f64,
    ) -> (f64, f64, f64) {
        let space = u.space();
        let dt = u.grid().dt();
        let nt = u.num_slices();
        let mut a = 0.0;
        let mut b = 0.0;
        let mut c = 0.0;
        for t in 0..nt {
            for v in 0..space.num_vertices() {
                if !region.contains(t, v) {
                    continue;
                }
                let d = if t == 0 {
                    (phi.value(1, v) - phi.value(0, v)) / dt
                } else if t == nt - 1 {
                    (phi.value(nt - 1, v) - phi.value(nt - 2, v)) / dt
                } else {
                    (phi.value(t + 1, v) - phi.value(t - 1, v)) / (2.0 * dt)
                };
                a += u.value(t, v) * d * space.measure(v) * dt;
            }
            for e in space.edges() {
                let (ia, ib) = (e.a, e.b);
                if !(region.contains(t, ia) || region.contains(t, ib)) {
                    continue;
                }
                let gu = (u.value(t, ia) - u.value(t, ib)).abs() / e.length;
                let w = |x: f64, v| x + phi.value(t, v);
                let gup = (w(u.value(t, ia), ia) - w(u.value(t, ib), ib)).abs() / e.length;
                b += gu.powf(p) * e.measure * dt;
                c += gup.powf(p) * e.measure * dt;
            }
        }
        (a, b, c)
    }

    #[test]
    fn zero_test_function_gives_a_zero_and_c_equals_b() {
        let (space, grid) = setup(7, 8);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, t| x * x + t).unwrap();
        let phi = SpaceTimeField::zeros(space.clone(), grid);
        let region = Region::interior(&space, grid);
        let terms =
            energy_terms(&u, &phi, &RegionForm::MeasurableSet(region), 2.0).unwrap();
        assert_relative_eq!(terms.a, 0.0);
        assert_relative_eq!(terms.c, terms.b, epsilon = 1e-14);
        assert!(terms.b > 0.0);
    }

    #[test]
    fn constant_u_telescopes_a_to_zero() {
        let (space, grid) = setup(9, 12);
        let u = SpaceTimeField::from_fn(space.clone(), grid, |_, _| 3.7);
        let phi = sample_bump(&space, grid);
        // region covering every slice where dphi/dt can be nonzero
        let region = Region::nonzero_set(&phi).dilate(&space);
        let terms = energy_terms(&u, &phi, &RegionForm::OpenSet(region), 2.0).unwrap();
        assert_relative_eq!(terms.a, 0.0, epsilon = 1e-13);
        assert_relative_eq!(terms.b, 0.0);
    }

    #[test]
    fn energy_terms_match_independent_oracle() {
        let (space, grid) = setup(9, 10);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, _| x).unwrap();
        let phi = sample_bump(&space, grid);
        let region = Region::nonzero_set(&phi);
        let terms = energy_terms(&u, &phi, &RegionForm::NonzeroSet, 2.0).unwrap();
        let (a, b, c) = naive_terms(&u, &phi, &region, 2.0);
        assert_relative_eq!(terms.a, a, epsilon = 1e-13);
        assert_relative_eq!(terms.b, b, epsilon = 1e-13);
        assert_relative_eq!(terms.c, c, epsilon = 1e-13);
        // B = T-weighted measure of region edges times gradient 1
        assert!(b > 0.0);
    }

    #[test]
    fn inadmissible_region_is_rejected_with_named_containment() {
        let (space, grid) = setup(7, 8);
        let u = SpaceTimeField::zeros(space.clone(), grid);
        let phi = sample_bump(&space, grid);
        let small = Region::empty(&space, grid);
        let err = energy_terms(&u, &phi, &RegionForm::OpenSet(small), 2.0).unwrap_err();
        assert!(err.to_string().contains("OPEN_SET"), "{err}");

        // region touching the first slice
        let mut bad = Region::nonzero_set(&phi);
        bad.insert(0, 3);
        let err = energy_terms(&u, &phi, &RegionForm::MeasurableSet(bad), 2.0).unwrap_err();
        assert!(err.to_string().contains("parabolic boundary"), "{err}");
    }

    #[test]
    fn margin_monotone_in_k() {
        let (space, grid) = setup(9, 10);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, t| x * (1.0 - x) * (1.0 + t))
            .unwrap();
        let phi = sample_bump(&space, grid);
        let mut prev = f64::NEG_INFINITY;
        for k in [1.0, 1.5, 2.0, 4.0] {
            let c = QuasiminConstants::given(2.0, k).unwrap();
            let rep =
                check_inequality(&u, &phi, &c, 2.0, &RegionForm::NonzeroSet, None, Variant::Minimizer)
                    .unwrap();
            assert!(rep.margin >= prev);
            prev = rep.margin;
        }
    }

    #[test]
    fn super_sub_duality_is_exact() {
        let (space, grid) = setup(9, 10);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, t| (2.0 * x - t).sin()).unwrap();
        let phi = sample_bump(&space, grid); // nonnegative
        let c = QuasiminConstants::given(1.3, 2.0).unwrap();
        let sup =
            check_inequality(&u, &phi, &c, 2.0, &RegionForm::NonzeroSet, Some(0.0), Variant::Super)
                .unwrap();
        let sub = check_inequality(
            &u.scale(-1.0),
            &phi.scale(-1.0),
            &c,
            2.0,
            &RegionForm::NonzeroSet,
            Some(0.0),
            Variant::Sub,
        )
        .unwrap();
        assert_relative_eq!(sup.margin, sub.margin, epsilon = 1e-12);
    }

    #[test]
    fn sign_restriction_enforced() {
        let (space, grid) = setup(7, 8);
        let u = SpaceTimeField::zeros(space.clone(), grid);
        let phi = sample_bump(&space, grid);
        let c = QuasiminConstants::given(1.0, 1.0).unwrap();
        assert!(check_inequality(&u, &phi, &c, 2.0, &RegionForm::NonzeroSet, None, Variant::Sub)
            .is_err());
        assert!(check_inequality(
            &u,
            &phi.scale(-1.0),
            &c,
            2.0,
            &RegionForm::NonzeroSet,
            None,
            Variant::Super
        )
        .is_err());
    }

    #[test]
    fn four_forms_consistent_on_random_instance() {
        let (space, grid) = setup(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = SpaceTimeField::from_fn(space.clone(), grid, |_, _| rng.gen_range(-1.0..1.0));
        // on 5 vertices (h = 0.25) the bump must be narrow enough that its
        // support, not just its nonzero set, avoids the boundary
        let phi = bump_field(
            &space,
            grid,
            &BumpSpec {
                center_vertex: 2,
                center_slice: 4,
                space_width: 0.25,
                time_halfwidth: 2,
                amplitude: 1.0,
            },
        );
        let c = QuasiminConstants::given(2.0, 1.5).unwrap();
        let rep = check_all_forms(&u, &phi, &c, 2.0, None).unwrap();
        assert!(rep.chain_consistent);
        assert_relative_eq!(rep.nonzero.margin, rep.measurable.margin, epsilon = 1e-14);
    }

    #[test]
    fn four_forms_zero_phi_pass() {
        let (space, grid) = setup(5, 8);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, _| x).unwrap();
        let phi = SpaceTimeField::zeros(space, grid);
        let c = QuasiminConstants::given(2.0, 1.0).unwrap();
        let rep = check_all_forms(&u, &phi, &c, 2.0, None).unwrap();
        assert!(rep.all_pass && rep.chain_consistent);
        assert_relative_eq!(rep.nonzero.margin, 0.0);
    }

    #[test]
    fn truncation_examples() {
        let (space, grid) = setup(3, 4);
        let two = SpaceTimeField::from_fn(space.clone(), grid, |_, _| 2.0);
        assert_relative_eq!(truncate_test(&two, 1).value(0, 0), 1.0);

        let neg = SpaceTimeField::from_fn(space.clone(), grid, |_, _| -0.5);
        assert_relative_eq!(truncate_test(&neg, 4).value(0, 0), -0.25);

        let small = SpaceTimeField::from_fn(space, grid, |_, v| 0.05 * (v as f64 - 1.0));
        let t = truncate_test(&small, 10);
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn truncation_preserves_sign_and_shrinks_magnitude() {
        let (space, grid) = setup(9, 10);
        let phi = SpaceTimeField::from_xt(space, grid, |x, t| (7.0 * x + 3.0 * t).sin()).unwrap();
        for i in [1u32, 3, 9] {
            let psi = truncate_test(&phi, i);
            for (pv, sv) in phi.values().iter().zip(psi.values()) {
                assert!(sv.abs() <= pv.abs() + 1e-15);
                assert!(*sv == 0.0 || sv.signum() == pv.signum());
                assert_relative_eq!(sv.abs(), (pv.abs() - 1.0 / i as f64).max(0.0), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn family_generation_deterministic_and_sign_restricted() {
        let (space, grid) = setup(9, 16);
        let spec = FamilySpec {
            count: 12,
            width_range: (0.1, 0.4),
            amplitude_range: (0.2, 1.0),
            sign: SignRestriction::Nonnegative,
            seed: 42,
        };
        let f1 = generate_test_family(&space, grid, &spec).unwrap();
        let f2 = generate_test_family(&space, grid, &spec).unwrap();
        for (a, b) in f1.members.iter().zip(&f2.members) {
            assert_eq!(a.values(), b.values());
        }
        for phi in &f1.members {
            assert!(phi.values().iter().all(|&v| v >= 0.0));
            let nz = Region::nonzero_set(phi);
            assert!(nz.is_compactly_contained(&space));
            // vanishes on the two slices nearest each end
            for t in [0, 1, grid.num_slices() - 2, grid.num_slices() - 1] {
                for v in 0..space.num_vertices() {
                    assert_eq!(phi.value(t, v), 0.0);
                }
            }
        }
    }

    #[test]
    fn single_tent_reaches_its_amplitude() {
        let (space, grid) = setup(9, 10);
        let phi = sample_bump(&space, grid);
        assert_relative_eq!(phi.max_abs(), 1.0);
    }

    #[test]
    fn min_k_estimate_for_constant_u_is_one() {
        let (space, grid) = setup(9, 12);
        let u = SpaceTimeField::from_fn(space.clone(), grid, |_, _| 5.0);
        let spec = FamilySpec {
            count: 10,
            width_range: (0.1, 0.4),
            amplitude_range: (0.2, 1.0),
            sign: SignRestriction::Any,
            seed: 3,
        };
        let family = generate_test_family(&space, grid, &spec).unwrap();
        let est = estimate_min_k(&u, 2.0, 2.0, &family, 100).unwrap();
        assert!(!est.inconclusive);
        assert_relative_eq!(est.value, 1.0);
    }

    #[test]
    fn min_k_estimate_never_below_family_members_and_monotone_in_budget() {
        let (space, grid) = setup(9, 16);
        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, t| (3.0 * x - 2.0 * t).cos())
            .unwrap();
        let spec = FamilySpec {
            count: 15,
            width_range: (0.1, 0.4),
            amplitude_range: (0.2, 1.0),
            sign: SignRestriction::Any,
            seed: 11,
        };
        let family = generate_test_family(&space, grid, &spec).unwrap();
        let member_best = family
            .members
            .iter()
            .filter_map(|phi| k_ratio(&u, phi, 2.0, 2.0))
            .fold(1.0f64, f64::max);
        let small = estimate_min_k(&u, 2.0, 2.0, &family, 20).unwrap();
        let large = estimate_min_k(&u, 2.0, 2.0, &family, 200).unwrap();
        assert!(large.value >= small.value);
        assert!(large.value >= member_best - 1e-12);
        assert!(large.witness.is_some());
    }

    #[test]
    fn staircase_values() {
        assert_relative_eq!(staircase_value(1.0, StaircaseReading::PerSegment), 1.0);
        assert_relative_eq!(staircase_value(2.0, StaircaseReading::PerSegment), 1.5);
        assert_relative_eq!(staircase_value(0.5, StaircaseReading::PerSegment), 0.5);
        // continuity at the integers under the per-segment reading
        let eps = 1e-9;
        for i in [1.0f64, 2.0, 3.0] {
            let below = staircase_value(i - eps, StaircaseReading::PerSegment);
            let above = staircase_value(i + eps, StaircaseReading::PerSegment);
            assert!((below - above).abs() < 1e-6);
        }
        // the literal fixed-slope reading jumps at x = 1 unless k = 1
        let below = staircase_value(1.0 - eps, StaircaseReading::FixedSlope(2));
        let above = staircase_value(1.0 + eps, StaircaseReading::FixedSlope(2));
        assert!((below - above).abs() > 0.4);
    }

    #[test]
    fn mollified_check_zero_phi_and_constant_u() {
        let (space, grid) = setup(7, 16);
        let k = MollifierKernel::triangular(2.0 * grid.dt(), grid.dt()).unwrap();
        let c = QuasiminConstants::given(2.0, 1.0).unwrap();

        let u = SpaceTimeField::from_xt(space.clone(), grid, |x, t| x * t).unwrap();
        let phi = SpaceTimeField::zeros(space.clone(), grid);
        let rep = mollified_inequality_check(&u, &phi, &k, &c, 2.0, None).unwrap();
        assert_relative_eq!(rep.margin, 0.0);
        assert!(rep.pass);

        let constant = SpaceTimeField::from_fn(space.clone(), grid, |_, _| 2.0);
        let bump = sample_bump(&space, grid);
        let rep = mollified_inequality_check(&constant, &bump, &k, &c, 2.0, None).unwrap();
        assert_relative_eq!(rep.lhs_time, 0.0, epsilon = 1e-13);
        assert_relative_eq!(rep.lhs_energy, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn mollified_check_rejects_oversized_epsilon() {
        let (space, grid) = setup(7, 10);
        let u = SpaceTimeField::zeros(space.clone(), grid);
        let phi = sample_bump(&space, grid);
        let k = MollifierKernel::triangular(0.45, grid.dt()).unwrap();
        let c = QuasiminConstants::given(2.0, 1.0).unwrap();
        assert!(mollified_inequality_check(&u, &phi, &k, &c, 2.0, None).is_err());
    }

    #[test]
    fn constants_validation() {
        assert!(QuasiminConstants::given(0.0, 1.0).is_err());
        assert!(QuasiminConstants::given(1.0, 0.5).is_err());
        assert!(QuasiminConstants::given(2.0, 1.0).is_ok());
    }
}
