//! Discrete metric measure spaces.
//!
//! A [`Space`] is a finite connected weighted graph with strictly positive
//! vertex measures, edge lengths and edge measures, and a marked boundary.
//! Shortest-path distance makes it a metric space, vertex measures make it a
//! measure space. The module also estimates the doubling constant of the
//! vertex measure and the constant of the weak (1,p)-Poincaré inequality by
//! exhaustive sampling over metric balls.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One vertex of the space: an id, a strictly positive measure, and optional
/// embedding coordinates (used by analytic reference solutions).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vertex {
    pub id: String,
    pub measure: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
}

/// One weighted edge, stored with vertex indices after validation.
#[derive(Debug, Clone)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub measure: f64,
}

/// Raw edge record as it appears in a space file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeSpec {
    u: String,
    v: String,
    length: f64,
    measure: f64,
}

/// On-disk representation of a space.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpaceFile {
    vertices: Vec<Vertex>,
    edges: Vec<EdgeSpec>,
    boundary: Vec<String>,
}

/// A finite weighted graph acting as the metric measure space (Ω, d, μ).
///
/// Immutable after construction; all queries are pure.
#[derive(Debug, Clone)]
pub struct Space {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    boundary: Vec<bool>,
    adjacency: Vec<Vec<(usize, usize)>>, // vertex -> (edge index, neighbour)
    index: HashMap<String, usize>,
}

impl Space {
    /// Validate raw parts and build the space. Collects every violated
    /// invariant instead of stopping at the first.
    pub fn new(
        vertices: Vec<Vertex>,
        edge_specs: Vec<(String, String, f64, f64)>,
        boundary_ids: Vec<String>,
    ) -> Result<Self> {
        let mut issues = Vec::new();

        let mut index = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.id.clone(), i).is_some() {
                issues.push(format!("duplicate vertex id '{}'", v.id));
            }
            if !(v.measure > 0.0) || !v.measure.is_finite() {
                issues.push(format!(
                    "vertex '{}': measure must be strictly positive, got {}",
                    v.id, v.measure
                ));
            }
        }

        let mut edges = Vec::with_capacity(edge_specs.len());
        for (k, (u, v, length, measure)) in edge_specs.iter().enumerate() {
            let ia = index.get(u);
            let ib = index.get(v);
            if ia.is_none() {
                issues.push(format!("edge {k}: unknown endpoint '{u}'"));
            }
            if ib.is_none() {
                issues.push(format!("edge {k}: unknown endpoint '{v}'"));
            }
            if u == v {
                issues.push(format!("edge {k}: endpoints must be distinct, both '{u}'"));
            }
            if !(*length > 0.0) || !length.is_finite() {
                issues.push(format!("edge {k}: length must be strictly positive, got {length}"));
            }
            if !(*measure > 0.0) || !measure.is_finite() {
                issues.push(format!("edge {k}: measure must be strictly positive, got {measure}"));
            }
            if let (Some(&a), Some(&b)) = (ia, ib) {
                if a != b {
                    edges.push(Edge { a, b, length: *length, measure: *measure });
                }
            }
        }

        let mut boundary = vec![false; vertices.len()];
        for id in &boundary_ids {
            match index.get(id) {
                Some(&i) => boundary[i] = true,
                None => issues.push(format!("boundary lists unknown vertex '{id}'")),
            }
        }

        let mut adjacency = vec![Vec::new(); vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            adjacency[e.a].push((k, e.b));
            adjacency[e.b].push((k, e.a));
        }

        // Connectivity check only makes sense once ids resolved.
        if issues.is_empty() && !vertices.is_empty() {
            let mut seen = vec![false; vertices.len()];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for &(_, y) in &adjacency[x] {
                    if !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            for (i, s) in seen.iter().enumerate() {
                if !s {
                    issues.push(format!("vertex '{}' is disconnected", vertices[i].id));
                }
            }
        }
        if vertices.is_empty() {
            issues.push("space must contain at least one vertex".to_string());
        }

        if !issues.is_empty() {
            return Err(Error::SpaceValidation(issues));
        }
        Ok(Space { vertices, edges, boundary, adjacency, index })
    }

    /// Canonical discretization of the interval (0, L): a path graph with
    /// spacing h = L/(n-1), interior vertex measure h, endpoint measure h/2,
    /// edge length and measure h, boundary at both ends.
    pub fn interval_mesh(n: usize, length: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::parameter(format!("interval mesh needs n >= 2, got {n}")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::parameter(format!("interval mesh needs L > 0, got {length}")));
        }
        let h = length / (n - 1) as f64;
        let vertices = (0..n)
            .map(|i| Vertex {
                id: format!("v{i}"),
                measure: if i == 0 || i == n - 1 { h / 2.0 } else { h },
                coords: Some(vec![i as f64 * h]),
            })
            .collect();
        let edges = (0..n - 1)
            .map(|i| (format!("v{i}"), format!("v{}", i + 1), h, h))
            .collect();
        let boundary = vec!["v0".to_string(), format!("v{}", n - 1)];
        Space::new(vertices, edges, boundary)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edge(&self, k: usize) -> &Edge {
        &self.edges[k]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn measure(&self, i: usize) -> f64 {
        self.vertices[i].measure
    }

    pub fn total_measure(&self) -> f64 {
        self.vertices.iter().map(|v| v.measure).sum()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(move |&i| self.boundary[i])
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(move |&i| !self.boundary[i])
    }

    pub fn neighbours(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn vertex_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::parameter(format!("unknown vertex '{id}'")))
    }

    /// First coordinate of every vertex; errors if any vertex lacks coords.
    pub fn coordinates_1d(&self) -> Result<Vec<f64>> {
        self.vertices
            .iter()
            .map(|v| {
                v.coords
                    .as_ref()
                    .and_then(|c| c.first().copied())
                    .ok_or_else(|| Error::parameter(format!("vertex '{}' has no coordinates", v.id)))
            })
            .collect()
    }

    /// Single-source shortest-path distances (Dijkstra, edge lengths).
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                // min-heap on distance
                other.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal)
            }
        }

        let mut dist = vec![f64::INFINITY; self.vertices.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Item(0.0, source));
        while let Some(Item(d, x)) = heap.pop() {
            if d > dist[x] {
                continue;
            }
            for &(k, y) in &self.adjacency[x] {
                let nd = d + self.edges[k].length;
                if nd < dist[y] {
                    dist[y] = nd;
                    heap.push(Item(nd, y));
                }
            }
        }
        dist
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances_from(a)[b]
    }

    pub fn diameter(&self) -> f64 {
        (0..self.vertices.len())
            .flat_map(|i| self.distances_from(i))
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    /// Open metric ball {y : d(x, y) < r}.
    pub fn ball(&self, center: usize, radius: f64) -> Result<Ball> {
        if center >= self.vertices.len() {
            return Err(Error::parameter(format!("vertex index {center} out of range")));
        }
        if !(radius > 0.0) {
            return Err(Error::parameter(format!("ball radius must be positive, got {radius}")));
        }
        let dist = self.distances_from(center);
        let members = (0..self.vertices.len()).filter(|&i| in_open_ball(dist[i], radius)).collect();
        Ok(Ball { center, radius, members })
    }

    /// μ-measure of a vertex set.
    pub fn set_measure(&self, members: &[usize]) -> f64 {
        members.iter().map(|&i| self.vertices[i].measure).sum()
    }

    /// Load from a JSON space file, rejecting invariant violations with a
    /// line-itemized report.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SpaceFile = serde_json::from_str(&text)?;
        Space::new(
            file.vertices,
            file.edges.into_iter().map(|e| (e.u, e.v, e.length, e.measure)).collect(),
            file.boundary,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SpaceFile {
            vertices: self.vertices.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    u: self.vertices[e.a].id.clone(),
                    v: self.vertices[e.b].id.clone(),
                    length: e.length,
                    measure: e.measure,
                })
                .collect(),
            boundary: self
                .boundary
                .iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .map(|(i, _)| self.vertices[i].id.clone())
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// Smallest positive edge length; a natural "h" for tolerance scaling.
    pub fn min_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(f64::INFINITY, f64::min)
    }

    /// Sorted distinct pairwise distances, the radii at which ball
    /// membership can change.
    pub fn pairwise_distances(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.vertices.len() {
            for d in self.distances_from(i) {
                if d > 0.0 && d.is_finite() {
                    out.push(d);
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        out
    }
}

/// Open metric ball with its enumerated members.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
}

/// Uniform time grid on (0, T): N steps, N+1 slices t_i = i·Δt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::parameter(format!("time grid needs T > 0, got {t_end}")));
        }
        if steps < 2 {
            return Err(Error::parameter(format!("time grid needs N >= 2, got {steps}")));
        }
        Ok(TimeGrid { t_end, steps })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn num_slices(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }
}

/// Strict open-ball membership, tolerant of shortest-path round-off: a
/// distance that equals the radius up to relative 1e-12 counts as on the
/// sphere, not inside it. Without this, a Dijkstra sum like 10 × 0.01 =
/// 0.09999999999999999 slips inside the ball of radius 0.1 and distorts
/// measure ratios.
fn in_open_ball(distance: f64, radius: f64) -> bool {
    distance < radius * (1.0 - 1e-12)
}

/// Witness-carrying doubling constant estimate.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingEstimate {
    pub value: f64,
    pub witness_vertex: String,
    pub witness_radius: f64,
    pub sampled_radii: Vec<f64>,
}

/// max over vertices x and sampled radii r of μ(B(x,2r)) / μ(B(x,r)).
///
/// Exact over the sampled set, hence a certified lower bound on the true
/// doubling constant.
pub fn estimate_doubling(space: &Space, radii: &[f64]) -> Result<DoublingEstimate> {
    if radii.is_empty() {
        return Err(Error::parameter("doubling estimate needs at least one radius"));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::parameter(format!("radii must be positive, got {r}")));
    }
    let mut best = 1.0f64;
    let mut witness = (0usize, radii[0]);
    for x in 0..space.num_vertices() {
        let dist = space.distances_from(x);
        for &r in radii {
            let small: f64 = dist
                .iter()
                .enumerate()
                .filter(|(_, d)| in_open_ball(**d, r))
                .map(|(i, _)| space.measure(i))
                .sum();
            let big: f64 = dist
                .iter()
                .enumerate()
                .filter(|(_, d)| in_open_ball(**d, 2.0 * r))
                .map(|(i, _)| space.measure(i))
                .sum();
            let ratio = big / small; // small > 0: the center is always a member
            if ratio > best {
                best = ratio;
                witness = (x, r);
            }
        }
    }
    Ok(DoublingEstimate {
        value: best,
        witness_vertex: space.vertex(witness.0).id.clone(),
        witness_radius: witness.1,
        sampled_radii: radii.to_vec(),
    })
}

/// Poincaré constant estimate over a probe set.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareEstimate {
    pub p0: f64,
    pub p: f64,
    pub dilation: f64,
    /// Number of (probe, ball) pairs where the oscillation was nonzero but
    /// no gradient mass was inside the dilated ball. None occurred on any
    /// connected space tested; counted for transparency.
    pub degenerate_pairs: usize,
    pub sampled_radii: Vec<f64>,
}

/// Smallest P₀ for which the weak (1,p)-Poincaré inequality
///
/// (1/μ(B)) Σ_B |u - u_B| μ  ≤  P₀ r ((1/μ(τB)) Σ_{τB} g_u^p m_e)^{1/p}
///
/// holds for every probe field, every center, and every sampled radius.
/// Radii default to midpoints between the distinct pairwise distances, which
/// exhausts the combinatorially distinct balls of the finite space.
pub fn estimate_poincare(
    space: &Space,
    p: f64,
    dilation: f64,
    probes: &[Vec<f64>],
) -> Result<PoincareEstimate> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::parameter(format!("exponent must satisfy 1 <= p < inf, got {p}")));
    }
    if !(dilation >= 1.0) {
        return Err(Error::parameter(format!("dilation must be >= 1, got {dilation}")));
    }
    for (k, probe) in probes.iter().enumerate() {
        if probe.len() != space.num_vertices() {
            return Err(Error::parameter(format!(
                "probe {k} has {} values for {} vertices",
                probe.len(),
                space.num_vertices()
            )));
        }
    }

    let radii = poincare_radii(space);
    let mut p0 = 0.0f64;
    let mut degenerate = 0usize;

    for x in 0..space.num_vertices() {
        let dist = space.distances_from(x);
        for &r in &radii {
            let ball: Vec<usize> =
                (0..space.num_vertices()).filter(|&i| in_open_ball(dist[i], r)).collect();
            if ball.len() < 2 {
                // a singleton has zero oscillation by definition
                continue;
            }
            let dilated: HashSet<usize> = (0..space.num_vertices())
                .filter(|&i| in_open_ball(dist[i], dilation * r))
                .collect();
            let mu_ball = space.set_measure(&ball);
            let mu_dilated: f64 = dilated.iter().map(|&i| space.measure(i)).sum();

            for probe in probes {
                let mean: f64 =
                    ball.iter().map(|&i| probe[i] * space.measure(i)).sum::<f64>() / mu_ball;
                let osc: f64 =
                    ball.iter().map(|&i| (probe[i] - mean).abs() * space.measure(i)).sum::<f64>()
                        / mu_ball;
                if osc == 0.0 {
                    continue;
                }
                // gradient energy on edges with both endpoints in the dilated ball
                let energy: f64 = space
                    .edges()
                    .iter()
                    .filter(|e| dilated.contains(&e.a) && dilated.contains(&e.b))
                    .map(|e| {
                        let g = (probe[e.a] - probe[e.b]).abs() / e.length;
                        g.powf(p) * e.measure
                    })
                    .sum();
                let rhs_inner = (energy / mu_dilated).powf(1.0 / p);
                if rhs_inner == 0.0 {
                    degenerate += 1;
                    continue;
                }
                p0 = p0.max(osc / (r * rhs_inner));
            }
        }
    }

    Ok(PoincareEstimate { p0, p, dilation, degenerate_pairs: degenerate, sampled_radii: radii })
}

/// Radii between consecutive distinct pairwise distances plus one beyond the
/// diameter: every combinatorially distinct ball occurs.
fn poincare_radii(space: &Space) -> Vec<f64> {
    let dists = space.pairwise_distances();
    if dists.is_empty() {
        return vec![1.0];
    }
    let mut radii = Vec::with_capacity(dists.len() + 1);
    let mut prev = 0.0;
    for &d in &dists {
        radii.push(0.5 * (prev + d));
        prev = d;
    }
    radii.push(prev * 1.5);
    radii
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_mesh() {
        let s = Space::interval_mesh(2, 1.0).unwrap();
        assert_eq!(s.num_edges(), 1);
        assert_relative_eq!(s.edge(0).length, 1.0);
        assert_relative_eq!(s.measure(0), 0.5);
        assert_relative_eq!(s.measure(1), 0.5);
    }

    #[test]
    fn interval_mesh_measure_partitions_length() {
        let s = Space::interval_mesh(5, 1.0).unwrap();
        assert_relative_eq!(s.total_measure(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.edge(0).length, 0.25);
    }

    #[test]
    fn interval_mesh_edge_measure_and_diameter() {
        let s = Space::interval_mesh(101, 1.0).unwrap();
        let edge_total: f64 = s.edges().iter().map(|e| e.measure).sum();
        assert_relative_eq!(edge_total, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.distance(0, 100), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_interval_parameters() {
        assert!(Space::interval_mesh(1, 1.0).is_err());
        assert!(Space::interval_mesh(5, 0.0).is_err());
        assert!(Space::interval_mesh(5, -2.0).is_err());
    }

    #[test]
    fn open_ball_membership() {
        let s = Space::interval_mesh(5, 1.0).unwrap();
        let center = s.vertex_index("v2").unwrap(); // x = 0.5
        let b = s.ball(center, 0.3).unwrap();
        assert_eq!(b.members, vec![1, 2, 3]);

        // radius larger than the diameter captures everything
        let b = s.ball(center, 10.0).unwrap();
        assert_eq!(b.members.len(), 5);

        // endpoint ball
        let b = s.ball(0, 0.26).unwrap();
        assert_eq!(b.members, vec![0, 1]);
    }

    #[test]
    fn ball_is_strictly_open() {
        let s = Space::interval_mesh(5, 1.0).unwrap();
        // d(v0, v1) = 0.25; radius exactly 0.25 excludes v1
        let b = s.ball(0, 0.25).unwrap();
        assert_eq!(b.members, vec![0]);
    }

    #[test]
    fn ball_rejects_bad_arguments() {
        let s = Space::interval_mesh(5, 1.0).unwrap();
        assert!(s.ball(99, 0.1).is_err());
        assert!(s.ball(0, 0.0).is_err());
        assert!(s.vertex_index("nope").is_err());
    }

    #[test]
    fn doubling_single_vertex_like_space() {
        // smallest legal space: two vertices; any ball covering both has ratio 1
        let s = Space::interval_mesh(2, 1.0).unwrap();
        let est = estimate_doubling(&s, &[2.0]).unwrap();
        assert_relative_eq!(est.value, 1.0);
    }

    #[test]
    fn doubling_uniform_interval() {
        let s = Space::interval_mesh(101, 1.0).unwrap();
        let est = estimate_doubling(&s, &[0.05, 0.1, 0.2]).unwrap();
        assert!(est.value >= 2.0 && est.value <= 2.3, "got {}", est.value);
    }

    #[test]
    fn doubling_exponential_measures() {
        let vertices: Vec<Vertex> = (0..=10)
            .map(|i| Vertex {
                id: format!("v{i}"),
                measure: 2f64.powi(i),
                coords: None,
            })
            .collect();
        let edges = (0..10).map(|i| (format!("v{i}"), format!("v{}", i + 1), 1.0, 1.0)).collect();
        let s = Space::new(vertices, edges, vec!["v0".into(), "v10".into()]).unwrap();
        let est = estimate_doubling(&s, &[1.5, 2.5, 3.5]).unwrap();
        assert!(est.value > 2.5, "got {}", est.value);
    }

    #[test]
    fn doubling_monotone_in_radius_samples() {
        let s = Space::interval_mesh(31, 1.0).unwrap();
        let small = estimate_doubling(&s, &[0.1]).unwrap().value;
        let large = estimate_doubling(&s, &[0.1, 0.04, 0.23]).unwrap().value;
        assert!(large >= small);
    }

    #[test]
    fn poincare_constant_probe_contributes_nothing() {
        let s = Space::interval_mesh(9, 1.0).unwrap();
        let est = estimate_poincare(&s, 2.0, 1.0, &[vec![3.0; 9]]).unwrap();
        assert_relative_eq!(est.p0, 0.0);
    }

    #[test]
    fn poincare_linear_probe_half_ball() {
        // u(x) = x on the unit interval, ball B(0.5, 0.5), τ = 1:
        // mean 0.5, mean deviation 0.25, gradient 1, so this ball demands
        // P0 = 0.25 / (0.5 · 1) = 0.5. The estimator maximizes over all
        // balls, so it must return at least that.
        let n = 41;
        let s = Space::interval_mesh(n, 1.0).unwrap();
        let xs = s.coordinates_1d().unwrap();
        let est = estimate_poincare(&s, 2.0, 1.0, &[xs]).unwrap();
        assert!(est.p0 >= 0.45 && est.p0 <= 1.0, "got {}", est.p0);
        assert_eq!(est.degenerate_pairs, 0);
    }

    #[test]
    fn poincare_quadratic_probe_finite() {
        let s = Space::interval_mesh(21, 1.0).unwrap();
        let xs = s.coordinates_1d().unwrap();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let est = estimate_poincare(&s, 2.0, 1.0, &[sq]).unwrap();
        assert!(est.p0.is_finite() && est.p0 > 0.0);
    }

    #[test]
    fn space_file_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("space.json");
        let s = Space::interval_mesh(7, 2.0).unwrap();
        s.save(&path).unwrap();
        let loaded = Space::load(&path).unwrap();
        assert_eq!(loaded.num_vertices(), 7);
        assert_relative_eq!(loaded.total_measure(), s.total_measure());

        // corrupt: negative measure and dangling edge
        let bad = r#"{
            "vertices": [{"id": "a", "measure": -1.0}, {"id": "b", "measure": 1.0}],
            "edges": [{"u": "a", "v": "c", "length": 1.0, "measure": 1.0}],
            "boundary": ["zz"]
        }"#;
        let bad_path = dir.path().join("bad.json");
        std::fs::write(&bad_path, bad).unwrap();
        match Space::load(&bad_path) {
            Err(Error::SpaceValidation(issues)) => {
                assert!(issues.len() >= 3, "issues: {issues:?}");
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn metric_triangle_inequality_sampled() {
        let s = Space::interval_mesh(17, 1.0).unwrap();
        let n = s.num_vertices();
        for a in (0..n).step_by(3) {
            let da = s.distances_from(a);
            for b in (0..n).step_by(4) {
                let db = s.distances_from(b);
                assert_relative_eq!(da[b], db[a], epsilon = 1e-12);
                for c in (0..n).step_by(5) {
                    assert!(da[c] <= da[b] + db[c] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn time_grid_basics() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_relative_eq!(g.dt(), 0.25);
        assert_eq!(g.num_slices(), 5);
        assert_relative_eq!(g.dt() * g.steps() as f64, g.t_end(), epsilon = 1e-15);
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
    }
}
