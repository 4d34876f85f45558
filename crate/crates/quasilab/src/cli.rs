//! Experiment commands behind the command-line binary.
//!
//! Each command deserializes one JSON config document, runs an experiment,
//! and returns a [`Report`]. All randomness flows through the seed recorded
//! in the report, so identical config + seed reproduce identical results
//! (timing fields aside). Witness artifacts for failures and plot tables
//! land in the per-run output directory.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;
use serde_json::json;

use crate::calculus::{gradient_convergence_report, Region, SpaceTimeField};
use crate::mesh::{estimate_doubling, estimate_poincare, Space, TimeGrid};
use crate::quasimin::{
    bump_field, check_all_forms, check_inequality, estimate_min_k, generate_test_family, BumpSpec,
    FamilySpec, KEstimate, QuasiminConstants, RegionForm, SignRestriction, StaircaseReading,
    TestFamily, Variant,
};
use crate::report::{write_plot_table, Report, ReportBuilder};
use crate::solver::{
    comparison_check, constants_from_structure, heat_series_solution, initial_condition_residual,
    solve_p_parabolic, ConstantsDerivation, InnerSolve, SolveConfig, StructureConstants,
};
use crate::{Error, Result};

/// Shared run state: config digest, output directory, optional seed override.
pub struct RunContext {
    pub digest: String,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
}

impl RunContext {
    pub fn new(digest: impl Into<String>, out: impl Into<PathBuf>) -> Self {
        RunContext { digest: digest.into(), out: out.into(), seed_override: None }
    }

    fn seed(&self, config_seed: u64) -> u64 {
        self.seed_override.unwrap_or(config_seed)
    }
}

// ---------------------------------------------------------------- config atoms

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    /// uniform interval mesh with n vertices on (0, length)
    Interval { n: usize, length: f64 },
    /// space file on disk
    File { path: PathBuf },
}

impl SpaceSpec {
    pub fn build(&self) -> Result<Arc<Space>> {
        match self {
            SpaceSpec::Interval { n, length } => Ok(Arc::new(Space::interval_mesh(*n, *length)?)),
            SpaceSpec::File { path } => Ok(Arc::new(Space::load(path)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct GridSpec {
    pub t_end: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_end, self.steps)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignSpec {
    Nonnegative,
    Nonpositive,
    Any,
}

impl From<SignSpec> for SignRestriction {
    fn from(s: SignSpec) -> Self {
        match s {
            SignSpec::Nonnegative => SignRestriction::Nonnegative,
            SignSpec::Nonpositive => SignRestriction::Nonpositive,
            SignSpec::Any => SignRestriction::Any,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FamilyConfig {
    pub count: usize,
    #[serde(default = "default_width_range")]
    pub width_range: [f64; 2],
    #[serde(default = "default_amplitude_range")]
    pub amplitude_range: [f64; 2],
    #[serde(default = "default_sign")]
    pub sign: SignSpec,
}

fn default_width_range() -> [f64; 2] {
    [0.1, 0.45]
}
fn default_amplitude_range() -> [f64; 2] {
    [0.05, 0.6]
}
fn default_sign() -> SignSpec {
    SignSpec::Any
}

impl FamilyConfig {
    fn to_spec(&self, seed: u64) -> FamilySpec {
        FamilySpec {
            count: self.count,
            width_range: (self.width_range[0], self.width_range[1]),
            amplitude_range: (self.amplitude_range[0], self.amplitude_range[1]),
            sign: self.sign.into(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// amplitude · sin(πx/L)
    SinePi { amplitude: f64 },
    /// amplitude · 4x(L−x)/L²
    Parabola { amplitude: f64 },
    Zero,
}

impl InitialSpec {
    fn build(&self, space: &Space) -> Result<Vec<f64>> {
        let xs = space.coordinates_1d()?;
        let length = xs.iter().fold(0.0f64, |m, &x| m.max(x)).max(f64::MIN_POSITIVE);
        Ok(match self {
            InitialSpec::SinePi { amplitude } => xs
                .iter()
                .map(|x| amplitude * (std::f64::consts::PI * x / length).sin())
                .collect(),
            InitialSpec::Parabola { amplitude } => {
                xs.iter().map(|x| amplitude * 4.0 * x * (length - x) / (length * length)).collect()
            }
            InitialSpec::Zero => vec![0.0; xs.len()],
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    /// Fourier sine-series heat solution with diffusion coefficient a
    HeatSeries { a: f64, coefficients: Vec<f64> },
    /// implicit p-parabolic solve from an initial condition, zero boundary
    Solve { p: f64, initial: InitialSpec },
    /// field file on disk
    File { path: PathBuf },
}

impl FieldSpec {
    fn build(&self, space: &Arc<Space>, grid: TimeGrid) -> Result<SpaceTimeField> {
        match self {
            FieldSpec::HeatSeries { a, coefficients } => {
                heat_series_solution(*a, coefficients, space, grid)
            }
            FieldSpec::Solve { p, initial } => {
                let config = SolveConfig {
                    p: *p,
                    initial: initial.build(space)?,
                    boundary: None,
                    inner: InnerSolve::default(),
                };
                Ok(solve_p_parabolic(space, grid, &config)?.field)
            }
            FieldSpec::File { path } => SpaceTimeField::load(path, space.clone(), grid),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstantsSpec {
    Given { alpha: f64, k: f64 },
    /// derived from structure constants; omitting alpha picks the min-K mode
    Structure { c1: f64, c2: f64, p: f64, alpha: Option<f64> },
}

impl ConstantsSpec {
    fn build(&self) -> Result<QuasiminConstants> {
        match self {
            ConstantsSpec::Given { alpha, k } => QuasiminConstants::given(*alpha, *k),
            ConstantsSpec::Structure { c1, c2, p, alpha } => {
                let sc = StructureConstants::new(*c1, *c2, *p)?;
                let mode = match alpha {
                    Some(a) => ConstantsDerivation::FixedAlpha(*a),
                    None => ConstantsDerivation::MinK,
                };
                constants_from_structure(&sc, mode)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FormSpec {
    OpenSet,
    MeasurableSet,
    NonzeroSet,
    Support,
    /// all four forms plus the consistency verdict
    All,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    Minimizer,
    Super,
    Sub,
}

impl From<VariantSpec> for Variant {
    fn from(v: VariantSpec) -> Self {
        match v {
            VariantSpec::Minimizer => Variant::Minimizer,
            VariantSpec::Super => Variant::Super,
            VariantSpec::Sub => Variant::Sub,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct InnerConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl InnerConfig {
    fn to_inner(self) -> InnerSolve {
        InnerSolve { tol: self.tol, max_iter: self.max_iter, start_from_zero: false }
    }
}

fn json_estimate(est: &KEstimate, specs: &[BumpSpec]) -> serde_json::Value {
    json!({
        "value": est.value,
        "inconclusive": est.inconclusive,
        "evaluations": est.evaluations,
        "witness_coefficients": est.witness_coefficients,
        "family_specs": specs,
    })
}

// ------------------------------------------------------------- diagnose-space

#[derive(Debug, Clone, Deserialize)]
pub struct DiagnoseSpaceConfig {
    pub space: SpaceSpec,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_dilation")]
    pub dilation: f64,
    /// doubling radii; defaults to diameter · {1/20, 1/10, 1/5}
    pub radii: Option<Vec<f64>>,
    pub max_doubling: Option<f64>,
    pub max_p0: Option<f64>,
}

fn default_p() -> f64 {
    2.0
}
fn default_dilation() -> f64 {
    1.0
}

/// Probe fields for the Poincaré estimator: {x, x², sin(πx/L)} when the
/// space carries 1-d coordinates, otherwise distance-to-first-vertex probes.
fn diagnostic_probes(space: &Space) -> Vec<Vec<f64>> {
    match space.coordinates_1d() {
        Ok(xs) => {
            let length = xs.iter().fold(0.0f64, |m, &x| m.max(x)).max(f64::MIN_POSITIVE);
            vec![
                xs.clone(),
                xs.iter().map(|x| x * x).collect(),
                xs.iter().map(|x| (std::f64::consts::PI * x / length).sin()).collect(),
            ]
        }
        Err(_) => {
            let d = space.distances_from(0);
            vec![d.clone(), d.iter().map(|x| x * x).collect()]
        }
    }
}

pub fn cmd_diagnose_space(config: &DiagnoseSpaceConfig, ctx: &RunContext) -> Result<Report> {
    let space = config.space.build()?;
    let mut builder = ReportBuilder::new("diagnose_space", ctx.digest.clone());

    let diameter = space.diameter();
    let radii = config
        .radii
        .clone()
        .unwrap_or_else(|| vec![diameter / 20.0, diameter / 10.0, diameter / 5.0]);
    let doubling = estimate_doubling(&space, &radii)?;
    let doubling_pass = match config.max_doubling {
        Some(m) => doubling.value <= m,
        None => doubling.value.is_finite(),
    };
    builder.check("doubling_constant", &doubling, doubling_pass);

    // per-radius table for plotting
    let rows: Vec<Vec<f64>> = radii
        .iter()
        .map(|&r| Ok(vec![r, estimate_doubling(&space, &[r])?.value]))
        .collect::<Result<_>>()?;
    write_plot_table(&ctx.out.join("doubling_by_radius.csv"), &["radius", "ratio"], &rows)?;

    let probes = diagnostic_probes(&space);
    let poincare = estimate_poincare(&space, config.p, config.dilation, &probes)?;
    let poincare_pass = match config.max_p0 {
        Some(m) => poincare.p0 <= m,
        None => poincare.p0.is_finite(),
    };
    builder.check("poincare_p0", &poincare, poincare_pass);

    Ok(builder.finish())
}

// -------------------------------------------------------------- counterexample

#[derive(Debug, Clone, Deserialize)]
pub struct CounterexampleConfig {
    /// diffusion coefficient of the quasiminimizer branch; a = 1 degenerates
    pub a: f64,
    pub n: usize,
    pub grid: GridSpec,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_gap_threshold")]
    pub gap_threshold: f64,
    #[serde(default = "default_k_slack")]
    pub k_slack: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_min_k_margin")]
    pub min_k_margin: f64,
    #[serde(default)]
    pub family: Option<FamilyConfig>,
}

fn default_gap_threshold() -> f64 {
    0.2
}
fn default_k_slack() -> f64 {
    1.05
}
fn default_budget() -> usize {
    500
}
fn default_min_k_margin() -> f64 {
    0.02
}

/// Non-uniqueness experiment: u (heat) and v (diffusion a > 1) share the
/// same boundary and initial data, both satisfy the quasiminimizer
/// inequality at K = a²/(2a−1), yet differ by a macroscopic interior gap.
pub fn cmd_counterexample(config: &CounterexampleConfig, ctx: &RunContext) -> Result<Report> {
    if !(config.a >= 1.0) {
        return Err(Error::parameter(format!("need a >= 1, got {}", config.a)));
    }
    let seed = ctx.seed(config.seed);
    let mut builder = ReportBuilder::new("counterexample", ctx.digest.clone()).seed(seed);

    if config.a == 1.0 {
        builder.check("vacuous", "a = 1 makes the two branches identical; nothing to compare", true);
        return Ok(builder.finish());
    }

    let space = Arc::new(Space::interval_mesh(config.n, 1.0)?);
    let grid = config.grid.build()?;
    let u = heat_series_solution(1.0, &[1.0], &space, grid)?;
    let v = heat_series_solution(config.a, &[1.0], &space, grid)?;

    let k_target = config.a * config.a / (2.0 * config.a - 1.0);
    let constants = QuasiminConstants::given(2.0, k_target * config.k_slack)?;

    let family_config = config.family.clone().unwrap_or(FamilyConfig {
        count: config.count,
        width_range: default_width_range(),
        amplitude_range: default_amplitude_range(),
        sign: SignSpec::Any,
    });
    let family = generate_test_family(&space, grid, &family_config.to_spec(seed))?;

    for (name, field) in [("u_inequality", &u), ("v_inequality", &v)] {
        let mut worst_margin = f64::INFINITY;
        let mut failures: Vec<&BumpSpec> = Vec::new();
        for (phi, spec) in family.members.iter().zip(&family.specs) {
            // support form: the central-difference summation by parts for
            // the time-coupling term is exact there, unlike over {φ ≠ 0}
            let report = check_inequality(
                field,
                phi,
                &constants,
                2.0,
                &RegionForm::Support,
                None,
                Variant::Minimizer,
            )?;
            worst_margin = worst_margin.min(report.margin + report.tol);
            if !report.pass {
                failures.push(spec);
            }
        }
        builder.check_with_witness(
            name,
            json!({
                "k": constants.k,
                "members": family.members.len(),
                "failures": failures.len(),
                "worst_slack": worst_margin,
            }),
            failures.is_empty(),
            json!({ "failing_bumps": failures, "seed": seed }),
        );
    }

    // boundary and initial data must agree bit for bit
    let mut data_identical = true;
    for x in 0..space.num_vertices() {
        data_identical &= u.value(0, x).to_bits() == v.value(0, x).to_bits();
    }
    for t in 0..grid.num_slices() {
        for b in space.boundary_vertices() {
            data_identical &= u.value(t, b).to_bits() == v.value(t, b).to_bits();
        }
    }
    builder.check("shared_data_bit_identical", data_identical, data_identical);

    let gap = u.sub(&v).max_abs();
    builder.check(
        "interior_gap",
        json!({ "max_gap": gap, "threshold": config.gap_threshold }),
        gap >= config.gap_threshold,
    );

    let estimate = estimate_min_k(&v, 2.0, 2.0, &family, config.budget)?;
    let lower = 1.0 + config.min_k_margin;
    let upper = k_target + 0.05;
    let min_k_pass = estimate.value > lower && estimate.value <= upper;
    builder.check_with_witness(
        "min_k_estimate",
        json!({
            "value": estimate.value,
            "window": [lower, upper],
            "evaluations": estimate.evaluations,
        }),
        min_k_pass,
        json_estimate(&estimate, &family.specs),
    );
    if let Some(witness) = &estimate.witness {
        witness.save(&ctx.out.join("min_k_witness.csv"))?;
    }

    // gap profile at the midpoint for plotting
    let mid = space.num_vertices() / 2;
    let rows: Vec<Vec<f64>> = (0..grid.num_slices())
        .map(|t| {
            vec![grid.time(t), u.value(t, mid), v.value(t, mid), u.value(t, mid) - v.value(t, mid)]
        })
        .collect();
    write_plot_table(&ctx.out.join("gap_profile.csv"), &["t", "u_mid", "v_mid", "gap"], &rows)?;

    Ok(builder.finish())
}

// ------------------------------------------------------------ comparison-suite

#[derive(Debug, Clone, Deserialize)]
pub struct ComparisonSuiteConfig {
    pub ps: Vec<f64>,
    pub n: usize,
    pub grid: GridSpec,
    #[serde(default = "default_comparison_tol")]
    pub tol: f64,
    #[serde(default = "default_uniqueness_tol")]
    pub uniqueness_tol: f64,
    /// diffusion coefficient of the analytic pair used for the
    /// initial-condition residual decay
    #[serde(default = "default_residual_a")]
    pub residual_a: f64,
    #[serde(default)]
    pub inner: Option<InnerConfig>,
}

fn default_comparison_tol() -> f64 {
    1e-3
}
fn default_uniqueness_tol() -> f64 {
    1e-6
}
fn default_residual_a() -> f64 {
    2.0
}

pub fn cmd_comparison_suite(config: &ComparisonSuiteConfig, ctx: &RunContext) -> Result<Report> {
    let space = Arc::new(Space::interval_mesh(config.n, 1.0)?);
    let grid = config.grid.build()?;
    let mut builder = ReportBuilder::new("comparison_suite", ctx.digest.clone());
    let inner = config.inner.map(InnerConfig::to_inner).unwrap_or_default();

    let initial_hi = InitialSpec::SinePi { amplitude: 1.0 }.build(&space)?;
    let initial_lo: Vec<f64> = initial_hi.iter().map(|x| 0.5 * x).collect();

    for &p in &config.ps {
        let hi = solve_p_parabolic(
            &space,
            grid,
            &SolveConfig { p, initial: initial_hi.clone(), boundary: None, inner },
        )?;
        let lo = solve_p_parabolic(
            &space,
            grid,
            &SolveConfig { p, initial: initial_lo.clone(), boundary: None, inner },
        )?;
        let comparison = comparison_check(&hi.field, &lo.field, config.tol)?;
        let pass = comparison.pass;
        builder.check_with_witness(
            format!("comparison_p_{p}"),
            &comparison,
            pass,
            json!({ "slice": comparison.at_slice, "vertex": comparison.at_vertex }),
        );

        // uniqueness: the two inner-solve starts must land on the same field
        let mut from_zero = inner;
        from_zero.start_from_zero = true;
        let again = solve_p_parabolic(
            &space,
            grid,
            &SolveConfig { p, initial: initial_hi.clone(), boundary: None, inner: from_zero },
        )?;
        let diff = hi.field.sub(&again.field).max_abs();
        builder.check(
            format!("uniqueness_p_{p}"),
            json!({ "max_difference": diff, "tol": config.uniqueness_tol }),
            diff <= config.uniqueness_tol,
        );
    }

    // initial-condition residual decay on an analytic pair with matching
    // initial data: u diffuses faster, so (v - u)+ grows from zero
    let u = heat_series_solution(config.residual_a, &[1.0], &space, grid)?;
    let v = heat_series_solution(1.0, &[1.0], &space, grid)?;
    let t_end = grid.t_end();
    let hs = [t_end / 8.0, t_end / 16.0, t_end / 32.0];
    let mut residuals = Vec::new();
    for &h in &hs {
        residuals.push(initial_condition_residual(&u, &v, h)?);
    }
    let decreasing = residuals.windows(2).all(|w| w[1] < w[0]);
    builder.check(
        "initial_residual_decay",
        json!({ "windows": hs, "residuals": residuals }),
        decreasing,
    );
    let rows: Vec<Vec<f64>> = hs.iter().zip(&residuals).map(|(&h, &r)| vec![h, r]).collect();
    write_plot_table(&ctx.out.join("residual_vs_h.csv"), &["h", "residual"], &rows)?;

    Ok(builder.finish())
}

// ------------------------------------------------------------------ estimate-k

#[derive(Debug, Clone, Deserialize)]
pub struct EstimateKConfig {
    pub space: SpaceSpec,
    pub grid: GridSpec,
    pub field: FieldSpec,
    pub alpha: f64,
    pub p: f64,
    pub family: FamilyConfig,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub seed: u64,
}

pub fn cmd_estimate_k(config: &EstimateKConfig, ctx: &RunContext) -> Result<Report> {
    let space = config.space.build()?;
    let grid = config.grid.build()?;
    let seed = ctx.seed(config.seed);
    let mut builder = ReportBuilder::new("estimate_k", ctx.digest.clone()).seed(seed);

    let u = config.field.build(&space, grid)?;
    let family = generate_test_family(&space, grid, &config.family.to_spec(seed))?;
    let estimate = estimate_min_k(&u, config.alpha, config.p, &family, config.budget)?;

    builder.check_with_witness(
        "min_k",
        json_estimate(&estimate, &family.specs),
        !estimate.inconclusive,
        json!({ "seed": seed, "family": family.specs }),
    );
    if let Some(witness) = &estimate.witness {
        witness.save(&ctx.out.join("min_k_witness.csv"))?;
    }
    Ok(builder.finish())
}

// ----------------------------------------------------------------------- check

#[derive(Debug, Clone, Deserialize)]
pub struct CheckConfig {
    pub space: SpaceSpec,
    pub grid: GridSpec,
    pub field: FieldSpec,
    pub constants: ConstantsSpec,
    pub p: f64,
    pub family: FamilyConfig,
    pub seed: u64,
    #[serde(default = "default_form")]
    pub form: FormSpec,
    #[serde(default = "default_variant")]
    pub variant: VariantSpec,
    /// margin tolerance; omitted → discretization default
    #[serde(default)]
    pub tol: Option<f64>,
}

fn default_form() -> FormSpec {
    // the support form keeps the time-coupling summation by parts exact
    FormSpec::Support
}
fn default_variant() -> VariantSpec {
    VariantSpec::Minimizer
}

pub fn cmd_check(config: &CheckConfig, ctx: &RunContext) -> Result<Report> {
    let space = config.space.build()?;
    let grid = config.grid.build()?;
    let seed = ctx.seed(config.seed);
    let mut builder = ReportBuilder::new("check", ctx.digest.clone()).seed(seed);

    let u = config.field.build(&space, grid)?;
    let constants = config.constants.build()?;
    let family = generate_test_family(&space, grid, &config.family.to_spec(seed))?;

    let mut failures: Vec<serde_json::Value> = Vec::new();
    let mut worst_margin = f64::INFINITY;
    let mut chain_ok = true;
    for (phi, spec) in family.members.iter().zip(&family.specs) {
        let (margin, tol, pass) = match config.form {
            FormSpec::All => {
                let four = check_all_forms(&u, phi, &constants, config.p, config.tol)?;
                chain_ok &= four.chain_consistent;
                (four.nonzero.margin, four.nonzero.tol, four.all_pass && four.chain_consistent)
            }
            _ => {
                let nonzero = Region::nonzero_set(phi);
                let form = match config.form {
                    FormSpec::OpenSet => RegionForm::OpenSet(nonzero.dilate(&space)),
                    FormSpec::MeasurableSet => RegionForm::MeasurableSet(nonzero),
                    FormSpec::NonzeroSet => RegionForm::NonzeroSet,
                    FormSpec::Support => RegionForm::Support,
                    FormSpec::All => unreachable!(),
                };
                let r = check_inequality(
                    &u,
                    phi,
                    &constants,
                    config.p,
                    &form,
                    config.tol,
                    config.variant.into(),
                )?;
                (r.margin, r.tol, r.pass)
            }
        };
        worst_margin = worst_margin.min(margin + tol);
        if !pass {
            failures.push(json!({ "bump": spec, "margin": margin, "tol": tol }));
        }
    }

    builder.check_with_witness(
        "inequality",
        json!({
            "alpha": constants.alpha,
            "k": constants.k,
            "members": family.members.len(),
            "failures": failures.len(),
            "worst_slack": worst_margin,
            "chain_consistent": chain_ok,
        }),
        failures.is_empty() && chain_ok,
        json!({ "seed": seed, "failing": failures }),
    );
    Ok(builder.finish())
}

// ----------------------------------------------------------------------- solve

#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceSpec {
    pub a: f64,
    pub coefficients: Vec<f64>,
    pub max_error: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SolveCliConfig {
    pub space: SpaceSpec,
    pub grid: GridSpec,
    pub p: f64,
    pub initial: InitialSpec,
    #[serde(default)]
    pub inner: Option<InnerConfig>,
    /// optional analytic reference for an error check (p = 2 heat series)
    #[serde(default)]
    pub reference: Option<ReferenceSpec>,
}

pub fn cmd_solve(config: &SolveCliConfig, ctx: &RunContext) -> Result<Report> {
    let space = config.space.build()?;
    let grid = config.grid.build()?;
    let mut builder = ReportBuilder::new("solve", ctx.digest.clone());

    let solve_config = SolveConfig {
        p: config.p,
        initial: config.initial.build(&space)?,
        boundary: None,
        inner: config.inner.map(InnerConfig::to_inner).unwrap_or_default(),
    };
    let out = solve_p_parabolic(&space, grid, &solve_config)?;
    out.field.save(&ctx.out.join("solution.csv"))?;
    builder.check("solved", &out.metadata, true);

    if let Some(reference) = &config.reference {
        let exact = heat_series_solution(reference.a, &reference.coefficients, &space, grid)?;
        let error = out.field.sub(&exact).max_abs();
        builder.check(
            "reference_error",
            json!({ "max_error": error, "bound": reference.max_error }),
            error <= reference.max_error,
        );
    }
    Ok(builder.finish())
}

// -------------------------------------------------------------- mollify-report

#[derive(Debug, Clone, Deserialize)]
pub struct MollifyReportConfig {
    pub space: SpaceSpec,
    pub grid: GridSpec,
    pub field: FieldSpec,
    /// time shifts in grid steps
    pub shifts: Vec<usize>,
    /// mollifier half-widths in grid steps
    pub widths_steps: Vec<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_min_slope")]
    pub min_slope: f64,
}

fn default_min_slope() -> f64 {
    0.9
}

pub fn cmd_mollify_report(config: &MollifyReportConfig, ctx: &RunContext) -> Result<Report> {
    let space = config.space.build()?;
    let grid = config.grid.build()?;
    let mut builder = ReportBuilder::new("mollify_report", ctx.digest.clone());

    let u = config.field.build(&space, grid)?;
    let widths: Vec<f64> = config.widths_steps.iter().map(|&s| s as f64 * grid.dt()).collect();
    let report = gradient_convergence_report(&u, &config.shifts, &widths, config.p)?;

    for (name, slope) in
        [("shift_slope", report.shift_slope), ("mollify_slope", report.mollify_slope)]
    {
        builder.check(
            name,
            json!({ "slope": slope, "min": config.min_slope }),
            slope.map_or(false, |s| s >= config.min_slope),
        );
    }

    let table = |rows: &[crate::calculus::ConvergenceRow]| -> Vec<Vec<f64>> {
        rows.iter()
            .filter_map(|r| r.norm.map(|n| vec![r.parameter, n]))
            .collect()
    };
    write_plot_table(
        &ctx.out.join("shift_convergence.csv"),
        &["s", "norm"],
        &table(&report.shift_rows),
    )?;
    write_plot_table(
        &ctx.out.join("mollify_convergence.csv"),
        &["eps", "norm"],
        &table(&report.mollify_rows),
    )?;
    Ok(builder.finish())
}

// ------------------------------------------------------------------- staircase

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReadingSpec {
    PerSegment,
    FixedSlope { k: u32 },
}

impl From<&ReadingSpec> for StaircaseReading {
    fn from(r: &ReadingSpec) -> Self {
        match r {
            ReadingSpec::PerSegment => StaircaseReading::PerSegment,
            ReadingSpec::FixedSlope { k } => StaircaseReading::FixedSlope(*k),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct StaircaseConfig {
    pub lengths: Vec<f64>,
    /// vertices per unit length
    pub density: usize,
    pub grid: GridSpec,
    #[serde(default = "default_reading")]
    pub reading: ReadingSpec,
    #[serde(default = "default_p")]
    pub alpha: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub seed: u64,
    /// extra random bumps on top of the deterministic kink-centered ones
    #[serde(default)]
    pub extra_random: usize,
}

fn default_reading() -> ReadingSpec {
    ReadingSpec::PerSegment
}

/// Deterministic candidates centered on the staircase kinks (where the
/// slope changes and energy can actually be saved); falls back to the
/// domain midpoint when the domain has no interior kink.
fn staircase_candidates(space: &Arc<Space>, grid: TimeGrid, length: f64) -> Result<TestFamily> {
    let xs = space.coordinates_1d()?;
    let last = grid.num_slices() - 1;
    let center_slice = (last / 2).clamp(2, last - 2);
    let max_ht = center_slice.min(last - center_slice).saturating_sub(1).max(1);

    let kinks: Vec<f64> = (1..length.ceil() as usize).map(|j| j as f64).collect();
    let centers = if kinks.is_empty() { vec![length / 2.0] } else { kinks };

    let mut specs = Vec::new();
    for &cx in &centers {
        let center_vertex = xs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - cx).abs().partial_cmp(&(b.1 - cx).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let admissible = crate::quasimin::max_admissible_width(space, center_vertex);
        for rel in [0.35, 0.7, 0.95] {
            let space_width = rel * admissible;
            for amplitude in [0.25, -0.25] {
                specs.push(BumpSpec {
                    center_vertex,
                    center_slice,
                    space_width,
                    time_halfwidth: max_ht,
                    amplitude,
                });
            }
        }
    }
    let members = specs.iter().map(|s| bump_field(space, grid, s)).collect();
    Ok(TestFamily { members, specs, sign: SignRestriction::Any })
}

pub fn cmd_staircase(config: &StaircaseConfig, ctx: &RunContext) -> Result<Report> {
    if config.lengths.is_empty() {
        return Err(Error::parameter("staircase sweep needs at least one length"));
    }
    let seed = ctx.seed(config.seed);
    let mut builder = ReportBuilder::new("staircase", ctx.digest.clone()).seed(seed);
    let grid = config.grid.build()?;

    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    for &length in &config.lengths {
        let (space, u) =
            crate::quasimin::staircase_function(length, config.density, grid, (&config.reading).into())?;
        let mut family = staircase_candidates(&space, grid, length)?;
        if config.extra_random > 0 {
            let random = generate_test_family(
                &space,
                grid,
                &FamilySpec {
                    count: config.extra_random,
                    width_range: (0.1, (length / 2.0).max(0.2)),
                    amplitude_range: (0.05, 0.5),
                    sign: SignRestriction::Any,
                    seed,
                },
            )?;
            family.members.extend(random.members);
            family.specs.extend(random.specs);
        }
        let estimate = estimate_min_k(&u, config.alpha, config.p, &family, config.budget)?;
        rows.push(vec![length, estimate.value]);
        estimates.push(estimate.value);
    }

    let nondecreasing = estimates.windows(2).all(|w| w[1] >= w[0] - 1e-9);
    builder.check(
        "k_nondecreasing_in_length",
        json!({ "lengths": config.lengths, "estimates": estimates }),
        nondecreasing,
    );
    write_plot_table(&ctx.out.join("k_vs_length.csv"), &["length", "k"], &rows)?;
    Ok(builder.finish())
}
