//! Upper gradients, Newtonian norms, parabolic fields, and time
//! mollification on the space-time cylinder of a weighted graph.
//!
//! On a finite graph the minimal upper gradient of a vertex function is the
//! per-edge difference quotient |u(x)-u(y)| / ℓ_e, exactly; no p-modulus
//! machinery is needed. Time integrals are slice sums weighted by Δt.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::mesh::{Space, TimeGrid};
use crate::{Error, Result};

/// Real-valued function on vertices × time slices.
///
/// Values are stored slice-major: index `t * nv + v`. Immutable by
/// convention once handed to an operation.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    space: Arc<Space>,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn from_fn(
        space: Arc<Space>,
        grid: TimeGrid,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let nv = space.num_vertices();
        let nt = grid.num_slices();
        let mut values = Vec::with_capacity(nt * nv);
        for t in 0..nt {
            for v in 0..nv {
                values.push(f(t, v));
            }
        }
        SpaceTimeField { space, grid, values }
    }

    pub fn zeros(space: Arc<Space>, grid: TimeGrid) -> Self {
        Self::from_fn(space, grid, |_, _| 0.0)
    }

    /// Sample a function of (x, t) using the first vertex coordinate.
    pub fn from_xt(space: Arc<Space>, grid: TimeGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = space.coordinates_1d()?;
        Ok(Self::from_fn(space.clone(), grid, |t, v| f(xs[v], grid.time(t))))
    }

    /// Extend a single spatial slice constantly in time.
    pub fn constant_in_time(space: Arc<Space>, grid: TimeGrid, slice: &[f64]) -> Result<Self> {
        if slice.len() != space.num_vertices() {
            return Err(Error::parameter(format!(
                "slice has {} values for {} vertices",
                slice.len(),
                space.num_vertices()
            )));
        }
        Ok(Self::from_fn(space.clone(), grid, |_, v| slice[v]))
    }

    pub fn from_slices(space: Arc<Space>, grid: TimeGrid, slices: &[Vec<f64>]) -> Result<Self> {
        if slices.len() != grid.num_slices() {
            return Err(Error::parameter(format!(
                "{} slices for a grid with {}",
                slices.len(),
                grid.num_slices()
            )));
        }
        for s in slices {
            if s.len() != space.num_vertices() {
                return Err(Error::parameter("slice length does not match vertex count"));
            }
        }
        Ok(Self::from_fn(space.clone(), grid, |t, v| slices[t][v]))
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_slices(&self) -> usize {
        self.grid.num_slices()
    }

    pub fn value(&self, t: usize, v: usize) -> f64 {
        self.values[t * self.space.num_vertices() + v]
    }

    pub fn set(&mut self, t: usize, v: usize, x: f64) {
        self.values[t * self.space.num_vertices() + v] = x;
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let nv = self.space.num_vertices();
        &self.values[t * nv..(t + 1) * nv]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        SpaceTimeField {
            space: self.space.clone(),
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "fields live on different cylinders");
        SpaceTimeField {
            space: self.space.clone(),
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Shift in time by `s` grid steps: result(t) = self(t - s). Slices with
    /// t < s have no preimage; the caller restricts to `s..num_slices()`.
    pub fn shift_time(&self, s: usize) -> Self {
        let nv = self.space.num_vertices();
        Self::from_fn(self.space.clone(), self.grid, |t, v| {
            if t >= s {
                self.values[(t - s) * nv + v]
            } else {
                0.0
            }
        })
    }

    /// Write the field file format: header then `time_index,vertex_id,value`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("time_index,vertex_id,value\n");
        for t in 0..self.num_slices() {
            for v in 0..self.space.num_vertices() {
                out.push_str(&format!("{t},{},{:.17e}\n", self.space.vertex(v).id, self.value(t, v)));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load a field file; every (slice, vertex) pair must be present.
    pub fn load(path: &Path, space: Arc<Space>, grid: TimeGrid) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "time_index,vertex_id,value" => {}
            _ => return Err(Error::parameter("field file must start with header 'time_index,vertex_id,value'")),
        }
        let nv = space.num_vertices();
        let nt = grid.num_slices();
        let mut values = vec![f64::NAN; nt * nv];
        let mut seen = vec![false; nt * nv];
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.splitn(3, ',').collect();
            if parts.len() != 3 {
                return Err(Error::parameter(format!("field file line {}: expected 3 fields", lineno + 2)));
            }
            let t: usize = parts[0]
                .trim()
                .parse()
                .map_err(|_| Error::parameter(format!("field file line {}: bad time index", lineno + 2)))?;
            let v = space.vertex_index(parts[1].trim())?;
            let x: f64 = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::parameter(format!("field file line {}: bad value", lineno + 2)))?;
            if t >= nt {
                return Err(Error::parameter(format!(
                    "field file line {}: time index {t} outside grid with {nt} slices",
                    lineno + 2
                )));
            }
            values[t * nv + v] = x;
            seen[t * nv + v] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let (t, v) = (missing / nv, missing % nv);
            return Err(Error::parameter(format!(
                "field file is missing value for slice {t}, vertex '{}'",
                space.vertex(v).id
            )));
        }
        Ok(SpaceTimeField { space, grid, values })
    }
}

/// Nonnegative values on edges × time slices; houses upper gradients.
#[derive(Debug, Clone)]
pub struct EdgeField {
    space: Arc<Space>,
    grid: TimeGrid,
    values: Vec<f64>, // t * ne + e
}

impl EdgeField {
    pub fn value(&self, t: usize, e: usize) -> f64 {
        self.values[t * self.space.num_edges() + e]
    }

    pub fn space(&self) -> &Arc<Space> {
        &self.space
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }
}

/// Per-slice minimal upper gradient: g_e = |u(x) - u(y)| / ℓ_e on each edge.
pub fn edge_gradient(u: &SpaceTimeField) -> EdgeField {
    let space = u.space().clone();
    let ne = space.num_edges();
    let nt = u.num_slices();
    let mut values = Vec::with_capacity(nt * ne);
    for t in 0..nt {
        let slice = u.slice(t);
        for e in space.edges() {
            values.push((slice[e.a] - slice[e.b]).abs() / e.length);
        }
    }
    EdgeField { space, grid: u.grid(), values }
}

/// Gradient of a single spatial slice.
pub fn slice_gradient(space: &Space, slice: &[f64]) -> Vec<f64> {
    space.edges().iter().map(|e| (slice[e.a] - slice[e.b]).abs() / e.length).collect()
}

/// Subset of the space-time cylinder, stored as a (slice, vertex) mask.
/// Edges belong to a region slice iff at least one endpoint does: an edge
/// carries the interaction of its endpoints, so it counts wherever it
/// touches the region.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    nv: usize,
    nt: usize,
    mask: Vec<bool>,
}

impl Region {
    pub fn empty(space: &Space, grid: TimeGrid) -> Self {
        let nv = space.num_vertices();
        let nt = grid.num_slices();
        Region { nv, nt, mask: vec![false; nv * nt] }
    }

    pub fn full(space: &Space, grid: TimeGrid) -> Self {
        let nv = space.num_vertices();
        let nt = grid.num_slices();
        Region { nv, nt, mask: vec![true; nv * nt] }
    }

    /// Whole interior: no boundary vertices, no first/last slice.
    pub fn interior(space: &Space, grid: TimeGrid) -> Self {
        let mut r = Self::empty(space, grid);
        for t in 1..grid.num_slices() - 1 {
            for v in space.interior_vertices() {
                r.insert(t, v);
            }
        }
        r
    }

    /// Exact nonzero set {φ ≠ 0}.
    pub fn nonzero_set(phi: &SpaceTimeField) -> Self {
        let nv = phi.space().num_vertices();
        let nt = phi.num_slices();
        Region { nv, nt, mask: phi.values().iter().map(|&v| v != 0.0).collect() }
    }

    pub fn from_cells(space: &Space, grid: TimeGrid, cells: &[(usize, usize)]) -> Self {
        let mut r = Self::empty(space, grid);
        for &(t, v) in cells {
            r.insert(t, v);
        }
        r
    }

    pub fn insert(&mut self, t: usize, v: usize) {
        self.mask[t * self.nv + v] = true;
    }

    pub fn contains(&self, t: usize, v: usize) -> bool {
        self.mask[t * self.nv + v]
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&b| b)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let nv = self.nv;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i / nv, i % nv))
    }

    pub fn num_cells(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.mask.iter().zip(&other.mask).all(|(a, b)| !a || *b)
    }

    pub fn union(&self, other: &Region) -> Region {
        Region {
            nv: self.nv,
            nt: self.nt,
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// Cells of `self` not in `other`.
    pub fn difference(&self, other: &Region) -> Region {
        Region {
            nv: self.nv,
            nt: self.nt,
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && !*b).collect(),
        }
    }

    /// Grow by one graph hop and one time step in each direction.
    pub fn dilate(&self, space: &Space) -> Region {
        let mut out = self.clone();
        for t in 0..self.nt {
            for v in 0..self.nv {
                if !self.contains(t, v) {
                    continue;
                }
                for &(_, w) in space.neighbours(v) {
                    out.insert(t, w);
                }
                if t > 0 {
                    out.insert(t - 1, v);
                }
                if t + 1 < self.nt {
                    out.insert(t + 1, v);
                }
            }
        }
        out
    }

    /// Discrete U ⋐ Ω_T: no boundary vertex, no first or last time slice.
    pub fn is_compactly_contained(&self, space: &Space) -> bool {
        for (t, v) in self.cells() {
            if space.is_boundary(v) || t == 0 || t == self.nt - 1 {
                return false;
            }
        }
        true
    }

    /// Edges touching the region at slice `t` (at least one endpoint in it).
    pub fn edges_at<'a>(&'a self, space: &'a Space, t: usize) -> impl Iterator<Item = usize> + 'a {
        space
            .edges()
            .iter()
            .enumerate()
            .filter(move |(_, e)| self.contains(t, e.a) || self.contains(t, e.b))
            .map(|(k, _)| k)
    }
}

/// Lᵖ norm of a vertex field over a region: (Σ |f|ᵖ μ Δt)^{1/p}.
pub fn lp_norm(f: &SpaceTimeField, p: f64, region: &Region) -> f64 {
    let space = f.space();
    let dt = f.grid().dt();
    let total: f64 =
        region.cells().map(|(t, v)| f.value(t, v).abs().powf(p) * space.measure(v) * dt).sum();
    total.powf(1.0 / p)
}

/// Lᵖ norm of an edge field over a region: (Σ |g|ᵖ m_e Δt)^{1/p}, edges
/// included iff they touch the region slice.
pub fn lp_norm_edges(g: &EdgeField, p: f64, region: &Region) -> f64 {
    let space = g.space();
    let dt = g.grid().dt();
    let mut total = 0.0;
    for t in 0..g.grid().num_slices() {
        for e in region.edges_at(space, t) {
            total += g.value(t, e).abs().powf(p) * space.edge(e).measure * dt;
        }
    }
    total.powf(1.0 / p)
}

/// Lᵖ norm over the whole cylinder with trapezoidal time weights, so the
/// time integral of a constant is exactly T.
pub fn lp_norm_cylinder(f: &SpaceTimeField, p: f64) -> f64 {
    let space = f.space();
    let grid = f.grid();
    let dt = grid.dt();
    let nt = grid.num_slices();
    let mut total = 0.0;
    for t in 0..nt {
        let w = if t == 0 || t == nt - 1 { 0.5 * dt } else { dt };
        for v in 0..space.num_vertices() {
            total += f.value(t, v).abs().powf(p) * space.measure(v) * w;
        }
    }
    total.powf(1.0 / p)
}

/// Spatial Lᵖ norm of one slice (no time weight).
pub fn slice_lp_norm(space: &Space, slice: &[f64], p: f64) -> f64 {
    slice
        .iter()
        .enumerate()
        .map(|(v, x)| x.abs().powf(p) * space.measure(v))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Spatial Lᵖ norm of a slice gradient.
pub fn slice_gradient_lp_norm(space: &Space, slice: &[f64], p: f64) -> f64 {
    space
        .edges()
        .iter()
        .map(|e| ((slice[e.a] - slice[e.b]).abs() / e.length).powf(p) * e.measure)
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Newtonian norm of one spatial slice: ‖u‖_p + ‖g_u‖_p.
pub fn newtonian_norm(space: &Space, slice: &[f64], p: f64) -> f64 {
    slice_lp_norm(space, slice, p) + slice_gradient_lp_norm(space, slice, p)
}

/// Per-slice membership test for the zero-boundary class: |u| ≤ tol on all
/// boundary vertices.
pub fn zero_boundary_check(u: &SpaceTimeField, tol: f64) -> Vec<bool> {
    let space = u.space();
    (0..u.num_slices())
        .map(|t| space.boundary_vertices().all(|v| u.value(t, v).abs() <= tol))
        .collect()
}

/// Discrete ∂φ/∂t: central differences at interior slices, one-sided at the
/// ends. Exact for fields affine in t.
pub fn time_derivative(phi: &SpaceTimeField) -> SpaceTimeField {
    let dt = phi.grid().dt();
    let nt = phi.num_slices();
    SpaceTimeField::from_fn(phi.space().clone(), phi.grid(), |t, v| {
        if t == 0 {
            (phi.value(1, v) - phi.value(0, v)) / dt
        } else if t == nt - 1 {
            (phi.value(nt - 1, v) - phi.value(nt - 2, v)) / dt
        } else {
            (phi.value(t + 1, v) - phi.value(t - 1, v)) / (2.0 * dt)
        }
    })
}

/// Symmetric nonnegative unit-mass kernel on grid offsets jΔt, |jΔt| ≤ ε.
///
/// Triangular profile max(0, 1 - |s|/ε), renormalized so the discrete
/// weights sum to exactly 1.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    eps: f64,
    half: usize,
    weights: Vec<f64>, // offsets -half..=half
}

impl MollifierKernel {
    pub fn triangular(eps: f64, dt: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::parameter(format!("mollifier half-width must be positive, got {eps}")));
        }
        let half = (eps / dt).floor() as usize;
        let mut weights: Vec<f64> = (-(half as i64)..=half as i64)
            .map(|j| (1.0 - (j as f64 * dt).abs() / eps).max(0.0))
            .collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        Ok(MollifierKernel { eps, half, weights })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Number of grid steps the window extends to each side.
    pub fn half_steps(&self) -> usize {
        self.half
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// weight for offset j ∈ [-half, half]
    pub fn weight(&self, j: i64) -> f64 {
        self.weights[(j + self.half as i64) as usize]
    }
}

/// Mollified field together with the slice range on which the kernel window
/// fits inside the grid. Values outside the window are zero and invalid.
#[derive(Debug, Clone)]
pub struct MollifiedField {
    pub field: SpaceTimeField,
    pub valid: Range<usize>,
}

/// Discrete time convolution f_ε(t) = Σ_j w_j f(t - jΔt).
///
/// The result is reported only where the window fits inside (0, T); if it
/// fits nowhere, that is an error. ε must be smaller than half the span.
pub fn mollify_time(f: &SpaceTimeField, kernel: &MollifierKernel) -> Result<MollifiedField> {
    let nt = f.num_slices();
    if kernel.eps() >= f.grid().t_end() / 2.0 {
        return Err(Error::parameter(format!(
            "mollifier half-width {} must be below half the time span {}",
            kernel.eps(),
            f.grid().t_end() / 2.0
        )));
    }
    let h = kernel.half_steps();
    if 2 * h >= nt {
        return Err(Error::parameter("mollifier window exceeds the whole grid"));
    }
    let valid = h..nt - h;
    let nv = f.space().num_vertices();
    let mut field = SpaceTimeField::zeros(f.space().clone(), f.grid());
    for t in valid.clone() {
        for v in 0..nv {
            let mut acc = 0.0;
            for j in -(h as i64)..=h as i64 {
                acc += kernel.weight(j) * f.value((t as i64 - j) as usize, v);
            }
            field.set(t, v, acc);
        }
    }
    Ok(MollifiedField { field, valid })
}

/// One row of the gradient convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    /// shift s or half-width ε, in time units
    pub parameter: f64,
    pub norm: Option<f64>,
    pub skipped: bool,
}

/// Table of ‖g_{u(·,t-s) - u(·,t)}‖_p and ‖g_{u_ε} - u‖_p over a compactly
/// contained window, with fitted log-log slopes.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub shift_rows: Vec<ConvergenceRow>,
    pub mollify_rows: Vec<ConvergenceRow>,
    pub shift_slope: Option<f64>,
    pub mollify_slope: Option<f64>,
}

/// Check the two limits of the upper-gradient convergence lemma on a grid:
/// time-shift differences and mollification differences, both measured in
/// the edge Lᵖ norm over a window where every shifted/mollified value
/// exists. Shifts are in grid steps, widths in time units.
pub fn gradient_convergence_report(
    u: &SpaceTimeField,
    shifts: &[usize],
    widths: &[f64],
    p: f64,
) -> Result<ConvergenceReport> {
    if !u.is_finite() {
        return Err(Error::parameter("field has non-finite values"));
    }
    let space = u.space();
    let grid = u.grid();
    let nt = grid.num_slices();
    let dt = grid.dt();

    // common interior window accommodating the largest requested shift
    let window = |margin: usize| -> Option<Region> {
        let lo = margin.max(1);
        let hi = nt.saturating_sub(1);
        if lo >= hi {
            return None;
        }
        let mut r = Region::empty(space, grid);
        for t in lo..hi {
            for v in space.interior_vertices() {
                r.insert(t, v);
            }
        }
        Some(r)
    };

    let mut shift_rows = Vec::new();
    for &s in shifts {
        match window(s) {
            Some(w) => {
                let diff = u.shift_time(s).sub(u);
                let norm = lp_norm_edges(&edge_gradient(&diff), p, &w);
                shift_rows.push(ConvergenceRow { parameter: s as f64 * dt, norm: Some(norm), skipped: false });
            }
            None => shift_rows.push(ConvergenceRow { parameter: s as f64 * dt, norm: None, skipped: true }),
        }
    }

    let mut mollify_rows = Vec::new();
    for &eps in widths {
        let kernel = MollifierKernel::triangular(eps, dt)?;
        let h = kernel.half_steps();
        match (mollify_time(u, &kernel), window(h)) {
            (Ok(m), Some(w)) => {
                let diff = m.field.sub(u);
                // restrict to the kernel's valid slices
                let mut wm = Region::empty(space, grid);
                for (t, v) in w.cells() {
                    if m.valid.contains(&t) {
                        wm.insert(t, v);
                    }
                }
                let norm = lp_norm_edges(&edge_gradient(&diff), p, &wm);
                mollify_rows.push(ConvergenceRow { parameter: eps, norm: Some(norm), skipped: false });
            }
            _ => mollify_rows.push(ConvergenceRow { parameter: eps, norm: None, skipped: true }),
        }
    }

    Ok(ConvergenceReport {
        shift_slope: fit_slope(&shift_rows),
        mollify_slope: fit_slope(&mollify_rows),
        shift_rows,
        mollify_rows,
    })
}

/// Least-squares slope of ln(norm) against ln(parameter) over usable rows.
fn fit_slope(rows: &[ConvergenceRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.norm.filter(|n| *n > 0.0).map(|n| (r.parameter.ln(), n.ln())))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}
