//! Franke-function Poisson benchmark: convergence tables, timings and
//! method comparisons.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::basis::MonomialBasis;
use crate::error::{Error, Result};
use crate::functionals::{ManufacturedData, PoissonData, SubdomainShape};
use crate::geometry::{generate_grid, NodeSet, Rectangle};
use crate::gmls::{gmls_derivative_row, WeightFunction};
use crate::solver::{self, default_sigma0, DiscreteProblem, Method, QuadratureSettings, ResolvedQuadrature};

/// Exact CSV header of convergence reports.
pub const CSV_HEADER: &str = "method,m,h,N,max_error,ratio,assembly_s,solve_s,c0,delta0,sigma0,shape";

/// `a·exp(−(cx(9x − bx)² + cy(9y − by)²))`
#[derive(Debug, Clone, Copy)]
struct GaussianTerm {
    a: f64,
    cx: f64,
    bx: f64,
    cy: f64,
    by: f64,
}

impl GaussianTerm {
    fn exponent(&self, x: f64, y: f64) -> (f64, [f64; 2], [f64; 2]) {
        let (tx, ty) = (9.0 * x - self.bx, 9.0 * y - self.by);
        let q = -(self.cx * tx * tx + self.cy * ty * ty);
        let grad = [-18.0 * self.cx * tx, -18.0 * self.cy * ty];
        let second = [-162.0 * self.cx, -162.0 * self.cy];
        (q, grad, second)
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        self.a * self.exponent(x, y).0.exp()
    }

    fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (q, g, _) = self.exponent(x, y);
        let e = self.a * q.exp();
        [e * g[0], e * g[1]]
    }

    fn laplacian(&self, x: f64, y: f64) -> f64 {
        let (q, g, s) = self.exponent(x, y);
        self.a * q.exp() * (g[0] * g[0] + g[1] * g[1] + s[0] + s[1])
    }
}

const FRANKE_TERMS: [GaussianTerm; 4] = [
    GaussianTerm { a: 0.75, cx: 0.25, bx: 2.0, cy: 0.25, by: 2.0 },
    GaussianTerm { a: 0.75, cx: 1.0 / 49.0, bx: -1.0, cy: 0.1, by: -1.0 },
    GaussianTerm { a: 0.5, cx: 0.25, bx: 7.0, cy: 0.25, by: 3.0 },
    GaussianTerm { a: -0.2, cx: 1.0, bx: 4.0, cy: 1.0, by: 7.0 },
];

/// Franke's four-Gaussian surface, with the second term's `y` part squared.
pub fn franke(x: f64, y: f64) -> f64 {
    FRANKE_TERMS.iter().map(|t| t.value(x, y)).sum()
}

pub fn franke_gradient(x: f64, y: f64) -> [f64; 2] {
    FRANKE_TERMS.iter().fold([0.0, 0.0], |acc, t| {
        let g = t.gradient(x, y);
        [acc[0] + g[0], acc[1] + g[1]]
    })
}

pub fn franke_laplacian(x: f64, y: f64) -> f64 {
    FRANKE_TERMS.iter().map(|t| t.laplacian(x, y)).sum()
}

/// A manufactured solution with its data.
pub trait ExactSolution: PoissonData {
    fn value(&self, x: &[f64]) -> f64;
}

/// `Δu = f` on the unit square with `u` = Franke's function on all of `Γ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrankeProblem;

impl PoissonData for FrankeProblem {
    fn source(&self, x: &[f64]) -> f64 {
        franke_laplacian(x[0], x[1])
    }

    fn dirichlet(&self, x: &[f64]) -> f64 {
        franke(x[0], x[1])
    }

    fn neumann(&self, x: &[f64], normal: &[f64]) -> f64 {
        let g = franke_gradient(x[0], x[1]);
        g[0] * normal[0] + g[1] * normal[1]
    }
}

impl ExactSolution for FrankeProblem {
    fn value(&self, x: &[f64]) -> f64 {
        franke(x[0], x[1])
    }
}

impl<U, G, L> ExactSolution for ManufacturedData<U, G, L>
where
    U: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
    L: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
}

/// Where the maximum error is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    /// Over trial nodes.
    #[default]
    Nodal,
    /// Over a grid four times finer, through MLS evaluation.
    Probe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseParams {
    pub c0: f64,
    pub delta0: f64,
    pub sigma0: f64,
    pub shape: SubdomainShape,
    pub quadrature: QuadratureSettings,
    pub threads: Option<usize>,
    pub oversample: bool,
    pub error_norm: ErrorNorm,
}

impl CaseParams {
    /// `c0 = 0.6`, circles for `m ≤ 3`; `c0 = 0.8`, squares for `m ≥ 4`; `δ0 = 2m`.
    pub fn defaults_for(m: usize) -> Self {
        let (c0, shape) = if m >= 4 {
            (0.8, SubdomainShape::Square)
        } else {
            (0.6, SubdomainShape::Ball)
        };
        Self {
            c0,
            delta0: 2.0 * m as f64,
            sigma0: default_sigma0(shape),
            shape,
            quadrature: QuadratureSettings::default(),
            threads: None,
            oversample: false,
            error_norm: ErrorNorm::Nodal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub m: usize,
    pub h: f64,
    pub n: usize,
    pub max_error: f64,
    pub ratio: Option<f64>,
    /// `None` when timing is disabled.
    pub assembly_s: Option<f64>,
    pub solve_s: Option<f64>,
    pub c0: f64,
    pub delta0: f64,
    pub sigma0: f64,
    pub shape: SubdomainShape,
}

impl ReportRow {
    pub fn total_s(&self) -> Option<f64> {
        Some(self.assembly_s? + self.solve_s?)
    }

    fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>, p: usize| v.map(|v| format!("{v:.p$}")).unwrap_or_default();
        format!(
            "{},{},{},{},{:.6e},{},{},{},{},{},{},{}",
            self.method.as_str(),
            self.m,
            self.h,
            self.n,
            self.max_error,
            opt(self.ratio, 4),
            opt(self.assembly_s, 6),
            opt(self.solve_s, 6),
            self.c0,
            self.delta0,
            self.sigma0,
            self.shape.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub quadrature: ResolvedQuadrature,
}

/// `log₂(e_i / e_{i+1})`
pub fn observed_ratio(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

impl ConvergenceReport {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.max_error).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.ratio).collect()
    }

    pub fn final_ratio(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.ratio)
    }

    fn fill_ratios(&mut self) {
        for i in 1..self.rows.len() {
            let r = observed_ratio(self.rows[i - 1].max_error, self.rows[i].max_error);
            self.rows[i].ratio = Some(r);
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            writeln!(out, "{}", row.csv_fields())?;
        }
        Ok(())
    }

    /// `log10 h  log10 error` per row, preceded by a `# method` line.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        if let Some(first) = self.rows.first() {
            writeln!(out, "# {} m={}", first.method.as_str(), first.m)?;
        }
        for row in &self.rows {
            writeln!(out, "{:.6} {:.6}", row.h.log10(), row.max_error.log10())?;
        }
        Ok(())
    }
}

fn check_halving(hs: &[f64]) -> Result<()> {
    if hs.is_empty() {
        return Err(Error::Config("empty h list".into()));
    }
    for w in hs.windows(2) {
        if ((w[0] / w[1]) - 2.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "h list must halve at each step, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn problem_for<'a>(
    method: Method,
    m: usize,
    nodes: NodeSet,
    params: &CaseParams,
    data: &'a dyn PoissonData,
) -> DiscreteProblem<'a> {
    DiscreteProblem {
        c0: params.c0,
        delta0: params.delta0,
        shape: params.shape,
        sigma0: params.sigma0,
        quadrature: params.quadrature,
        oversample: params.oversample,
        threads: params.threads,
        ..DiscreteProblem::new(Rectangle::unit_square(), nodes, method, m, data)
    }
}

/// Builds the grid, assembles, solves and measures the maximum error.
pub fn run_case<E: ExactSolution>(method: Method, m: usize, h: f64, params: &CaseParams, exact: &E) -> Result<ReportRow> {
    let domain = Rectangle::unit_square();
    let nodes = generate_grid(&domain, h)?;
    let problem = problem_for(method, m, nodes, params, exact);
    let start = Instant::now();
    let system = solver::assemble(&problem)?;
    let assembly_s = start.elapsed().as_secs_f64();
    let solution = solver::solve_linear(&system)?;
    let nodes = &problem.nodes;
    let max_error = match params.error_norm {
        ErrorNorm::Nodal => nodes
            .points()
            .zip(&solution.values)
            .map(|(p, u)| (u - exact.value(p)).abs())
            .fold(0.0, f64::max),
        ErrorNorm::Probe => {
            let probe = generate_grid(&domain, h / 4.0)?;
            let basis = MonomialBasis::new(m, vec![0.0; 2], h)?;
            let weight = problem.weight()?;
            let mut worst = 0.0f64;
            for p in probe.points() {
                let u = solver::evaluate_solution(&solution, nodes, p, &basis, &weight)?;
                worst = worst.max((u - exact.value(p)).abs());
            }
            worst
        }
    };
    Ok(ReportRow {
        method,
        m,
        h,
        n: nodes.len(),
        max_error,
        ratio: None,
        assembly_s: Some(assembly_s),
        solve_s: Some(solution.solve_seconds),
        c0: params.c0,
        delta0: params.delta0,
        sigma0: params.sigma0,
        shape: params.shape,
    })
}

/// Runs one case per `h` (sequentially, or in parallel without timing) and fills ratios.
pub fn convergence_study<E: ExactSolution>(
    method: Method,
    m: usize,
    hs: &[f64],
    params: &CaseParams,
    exact: &E,
    parallel: bool,
) -> Result<ConvergenceReport> {
    check_halving(hs)?;
    let rows: Vec<ReportRow> = if parallel {
        let rows: Result<Vec<ReportRow>> = hs.par_iter().map(|&h| run_case(method, m, h, params, exact)).collect();
        rows?
            .into_iter()
            .map(|r| ReportRow {
                assembly_s: None,
                solve_s: None,
                ..r
            })
            .collect()
    } else {
        hs.iter().map(|&h| run_case(method, m, h, params, exact)).collect::<Result<_>>()?
    };
    let quadrature = params.quadrature.resolve(method, params.shape, m, 2);
    let mut report = ConvergenceReport { rows, quadrature };
    report.fill_ratios();
    Ok(report)
}

/// MLPG5 reference and DMLPG5 reports on identical grids and settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedReport {
    pub reference: ConvergenceReport,
    pub direct: ConvergenceReport,
}

impl PairedReport {
    /// `assembly_MLPG / assembly_DMLPG` per `h`.
    pub fn speedups(&self) -> Vec<Option<f64>> {
        self.reference
            .rows
            .iter()
            .zip(&self.direct.rows)
            .map(|(r, d)| Some(r.assembly_s? / d.assembly_s?))
            .collect()
    }

    /// Both rows per `h`, with `total_s` and `speedup` appended.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{CSV_HEADER},total_s,speedup")?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for ((r, d), s) in self.reference.rows.iter().zip(&self.direct.rows).zip(self.speedups()) {
            for row in [r, d] {
                writeln!(out, "{},{},{}", row.csv_fields(), opt(row.total_s()), opt(s))?;
            }
        }
        Ok(())
    }

    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        self.reference.write_plot_data(&mut out)?;
        writeln!(out)?;
        self.direct.write_plot_data(&mut out)
    }
}

/// Same quadrature for both methods: the reference default (10 points per
/// square edge, 20 per circle) unless overridden.
pub fn compare_methods<E: ExactSolution>(m: usize, hs: &[f64], params: &CaseParams, exact: &E) -> Result<PairedReport> {
    let mut shared = params.clone();
    let resolved = params.quadrature.resolve(Method::Mlpg5Reference, params.shape, m, 2);
    shared.quadrature.boundary = Some(resolved.boundary);
    let reference = convergence_study(Method::Mlpg5Reference, m, hs, &shared, exact, false)?;
    let direct = convergence_study(Method::Dmlpg5, m, hs, &shared, exact, false)?;
    Ok(PairedReport { reference, direct })
}

/// Maximum error of GMLS `∂u/∂x` recovery of Franke's function over interior
/// nodes, per `h`.
pub fn derivative_recovery_errors(m: usize, hs: &[f64], c0: f64, delta0: f64) -> Result<Vec<f64>> {
    derivative_errors(m, hs, c0, delta0, None)
}

/// As [`derivative_recovery_errors`], at arbitrary points of the unit square.
pub fn derivative_recovery_errors_at(m: usize, hs: &[f64], c0: f64, delta0: f64, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    derivative_errors(m, hs, c0, delta0, Some(points))
}

fn derivative_errors(m: usize, hs: &[f64], c0: f64, delta0: f64, points: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
    let domain = Rectangle::unit_square();
    hs.iter()
        .map(|&h| {
            let nodes = generate_grid(&domain, h)?;
            let u: Vec<f64> = nodes.points().map(|p| franke(p[0], p[1])).collect();
            let basis = MonomialBasis::new(m, vec![0.0; 2], h)?;
            let weight = WeightFunction::scaled(c0, delta0, h)?;
            let targets: Vec<Vec<f64>> = match points {
                Some(p) => p.to_vec(),
                None => (0..nodes.len())
                    .filter(|&j| !nodes.tag(j).is_boundary())
                    .map(|j| nodes.point(j).to_vec())
                    .collect(),
            };
            let mut worst = 0.0f64;
            for p in &targets {
                let row = gmls_derivative_row(&nodes, p, &[1, 0], &basis, &weight)?;
                worst = worst.max((row.apply(&u) - franke_gradient(p[0], p[1])[0]).abs());
            }
            Ok(worst)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn franke_literal(x: f64, y: f64) -> f64 {
        0.75 * (-0.25 * ((9.0 * x - 2.0).powi(2) + (9.0 * y - 2.0).powi(2))).exp()
            + 0.75 * (-(9.0 * x + 1.0).powi(2) / 49.0 - (9.0 * y + 1.0).powi(2) / 10.0).exp()
            + 0.5 * (-0.25 * ((9.0 * x - 7.0).powi(2) + (9.0 * y - 3.0).powi(2))).exp()
            - 0.2 * (-(9.0 * x - 4.0).powi(2) - (9.0 * y - 7.0).powi(2)).exp()
    }

    #[test]
    fn franke_matches_the_formula() {
        assert!((franke(0.5, 0.5) - franke_literal(0.5, 0.5)).abs() < 1e-15);
        // at (1/2, 1/2): 9x − 2 = 5/2, 9x + 1 = 11/2, 9x − 7 = −5/2, 9y − 3 = 3/2, 9x − 4 = 1/2
        let hand = 0.75 * (-12.5f64 / 4.0).exp()
            + 0.75 * (-30.25f64 / 49.0 - 30.25 / 10.0).exp()
            + 0.5 * (-(6.25f64 + 2.25) / 4.0).exp()
            - 0.2 * (-0.25f64 - 6.25).exp();
        assert!((franke(0.5, 0.5) - hand).abs() < 1e-15);
        assert!((FRANKE_TERMS[3].value(4.0 / 9.0, 7.0 / 9.0) + 0.2).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            assert!(franke(x, y) > -0.2);
            assert!((franke(x, y) - franke_literal(x, y)).abs() < 1e-14);
        }
    }

    #[test]
    fn laplacian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = 1e-4;
        for _ in 0..100 {
            let (x, y) = (rng.gen::<f64>(), rng.gen::<f64>());
            let fd = (franke_literal(x + e, y) + franke_literal(x - e, y) + franke_literal(x, y + e)
                + franke_literal(x, y - e)
                - 4.0 * franke_literal(x, y))
                / (e * e);
            assert!((fd - franke_laplacian(x, y)).abs() < 1e-5, "at ({x},{y})");
            let g = franke_gradient(x, y);
            let gx = (franke_literal(x + e, y) - franke_literal(x - e, y)) / (2.0 * e);
            let gy = (franke_literal(x, y + e) - franke_literal(x, y - e)) / (2.0 * e);
            assert!((g[0] - gx).abs() < 1e-6 && (g[1] - gy).abs() < 1e-6);
        }
    }

    #[test]
    fn single_term_laplacian_identity() {
        let t = FRANKE_TERMS[0];
        let (x, y) = (0.31, 0.47);
        let (q, g, s) = t.exponent(x, y);
        let want = t.a * q.exp() * (g[0] * g[0] + g[1] * g[1] + s[0] + s[1]);
        assert_eq!(t.laplacian(x, y), want);
        // at the center the gradient vanishes: Δg = a(q_xx + q_yy) = 0.75·(−81/2 − 81/2)
        assert!((t.laplacian(2.0 / 9.0, 2.0 / 9.0) + 0.75 * 81.0).abs() < 1e-12);
    }

    #[test]
    fn coarse_case_error_matches_the_reference_level() {
        let params = CaseParams::defaults_for(2);
        let row = run_case(Method::Dmlpg5, 2, 0.2, &params, &FrankeProblem).unwrap();
        assert_eq!(row.n, 36);
        assert!(row.max_error <= 5.0 * 0.23e-1 && row.max_error >= 0.23e-1 / 5.0, "{}", row.max_error);
        let row = run_case(Method::Dmlpg5, 4, 0.05, &CaseParams::defaults_for(4), &FrankeProblem).unwrap();
        assert!(row.max_error <= 5.0 * 0.12e-2 && row.max_error >= 0.12e-2 / 5.0, "{}", row.max_error);
    }

    #[test]
    fn quadratic_patch_is_exact() {
        let exact = ManufacturedData {
            value: |p: &[f64]| p[0] * p[0],
            gradient: |p: &[f64]| vec![2.0 * p[0], 0.0],
            laplacian: |_: &[f64]| 2.0,
        };
        for norm in [ErrorNorm::Nodal, ErrorNorm::Probe] {
            let params = CaseParams {
                error_norm: norm,
                ..CaseParams::defaults_for(2)
            };
            let row = run_case(Method::Dmlpg5, 2, 0.1, &params, &exact).unwrap();
            assert!(row.max_error <= 1e-8, "{norm:?}: {}", row.max_error);
        }
    }

    #[test]
    fn report_ratios_and_csv() {
        let params = CaseParams::defaults_for(2);
        let report = convergence_study(Method::Dmlpg2, 2, &[0.2, 0.1, 0.05], &params, &FrankeProblem, false).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].ratio.is_none());
        let e = report.errors();
        for (i, r) in report.ratios().iter().enumerate() {
            assert!((r - (e[i] / e[i + 1]).log2()).abs() < 1e-12);
        }
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 12));
        assert!(lines[1].starts_with("dmlpg2,2,0.2,36,"));
        let mut plot = Vec::new();
        report.write_plot_data(&mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 4);
    }

    #[test]
    fn parallel_study_drops_timings_only() {
        let params = CaseParams::defaults_for(2);
        let seq = convergence_study(Method::Dmlpg5, 2, &[0.2, 0.1], &params, &FrankeProblem, false).unwrap();
        let par = convergence_study(Method::Dmlpg5, 2, &[0.2, 0.1], &params, &FrankeProblem, true).unwrap();
        assert!(par.rows.iter().all(|r| r.assembly_s.is_none() && r.solve_s.is_none()));
        assert_eq!(seq.errors(), par.errors());
    }

    #[test]
    fn h_lists_must_halve() {
        let params = CaseParams::defaults_for(2);
        let err = convergence_study(Method::Dmlpg5, 2, &[0.2, 0.15], &params, &FrankeProblem, false).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn paired_csv_has_speedup_column() {
        let params = CaseParams::defaults_for(2);
        let paired = compare_methods(2, &[0.2, 0.1], &params, &FrankeProblem).unwrap();
        assert_eq!(paired.speedups().len(), 2);
        let mut csv = Vec::new();
        paired.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].ends_with(",total_s,speedup"));
        assert!(lines[1].starts_with("mlpg5,") && lines[2].starts_with("dmlpg5,"));
    }

    #[test]
    fn derivative_recovery_converges() {
        for m in [2, 3] {
            let e = derivative_recovery_errors(m, &[0.1, 0.05, 0.025], 0.6, 2.0 * m as f64).unwrap();
            let order = observed_ratio(e[1], e[2]);
            assert!(order >= m as f64 - 0.3, "m={m}: errors {e:?}, order {order}");
        }
    }
}
