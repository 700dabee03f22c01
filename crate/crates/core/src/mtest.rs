//! Moment-equality tests of the EV1 and symmetry restrictions.
//!
//! The moment vector stacks `Ĝ_τ(y) − Ĝ_τ'(y)` over pairs of levels and the
//! y-grid. Its covariance comes from a respondent block bootstrap, the
//! statistic is `(M'ΩM)^{1/2}` with `Ω` the (ridged) inverse covariance, and
//! critical values are quantiles of the same statistic over Gaussian draws
//! with the ridged covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::iqr::{bootstrap_replicates, estimate_curves, estimate_curves_frozen, CdfCurve, CurveConfig, CurveEstimate, GridSpec};
use crate::rng::{substream, Purpose};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ALPHAS: [f64; 3] = [0.10, 0.05, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullKind {
    Ev1,
    Symmetry,
}

impl NullKind {
    pub fn label(self) -> &'static str {
        match self {
            NullKind::Ev1 => "EV1",
            NullKind::Symmetry => "Symmetry",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentLabel {
    pub tau: f64,
    pub tau_prime: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub entries: Vec<f64>,
    pub index: Vec<MomentLabel>,
    pub null_kind: NullKind,
}

/// Index pairs of levels compared under `kind`, for levels sorted
/// ascending.
pub fn moment_pairs(taus: &[f64], kind: NullKind) -> Result<Vec<(usize, usize)>> {
    match kind {
        NullKind::Ev1 => {
            if taus.len() < 2 {
                return Err(Error::InvalidConfig("EV1 null needs at least two taus".into()));
            }
            Ok((0..taus.len())
                .flat_map(|i| (i + 1..taus.len()).map(move |j| (i, j)))
                .collect())
        }
        NullKind::Symmetry => {
            let mut pairs = Vec::new();
            let mut used = vec![false; taus.len()];
            for (i, &t) in taus.iter().enumerate().filter(|(_, t)| **t < 0.5) {
                let j = taus
                    .iter()
                    .position(|&u| (u - (1.0 - t)).abs() < 1e-9)
                    .ok_or_else(|| Error::InvalidConfig(format!("symmetry null: tau {t} has no partner {}", 1.0 - t)))?;
                used[i] = true;
                used[j] = true;
                pairs.push((i, j));
            }
            if let Some(k) = used.iter().position(|u| !u) {
                return Err(Error::InvalidConfig(format!(
                    "symmetry null: tau {} has no partner {}",
                    taus[k],
                    1.0 - taus[k]
                )));
            }
            Ok(pairs)
        }
    }
}

/// Stacks curve differences: level pairs in lexicographic order, then y
/// ascending.
pub fn build_moment_vector(curves: &[CdfCurve], kind: NullKind) -> Result<MomentVector> {
    let first = curves.first().ok_or(Error::Empty("curve set"))?;
    for c in curves {
        if c.y != first.y || c.normalization != first.normalization {
            return Err(Error::InvalidConfig(
                "curves must share the y-grid and normalization".into(),
            ));
        }
    }
    let mut sorted: Vec<&CdfCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    let taus: Vec<f64> = sorted.iter().map(|c| c.tau).collect();
    let pairs = moment_pairs(&taus, kind)?;
    let mut entries = Vec::with_capacity(pairs.len() * first.y.len());
    let mut index = Vec::with_capacity(entries.capacity());
    for (i, j) in pairs {
        for (k, &y) in first.y.iter().enumerate() {
            entries.push(sorted[i].values[k] - sorted[j].values[k]);
            index.push(MomentLabel {
                tau: taus[i],
                tau_prime: taus[j],
                y,
            });
        }
    }
    Ok(MomentVector {
        entries,
        index,
        null_kind: kind,
    })
}

/// Bootstrap covariance over the coordinates that vary.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub matrix: DMatrix<f64>,
    pub b_used: usize,
    pub dropped_coords: Vec<usize>,
    pub kept_coords: Vec<usize>,
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Sample covariance of replicate rows, dropping coordinates with variance
/// below [`VARIANCE_FLOOR`].
pub fn covariance_from_replicates(reps: &[Vec<f64>]) -> Result<CovMatrix> {
    let b = reps.len();
    if b < 2 {
        return Err(Error::InvalidConfig("covariance needs at least two replicates".into()));
    }
    let dim = reps[0].len();
    let mut mean = vec![0.0; dim];
    for r in reps {
        if r.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
        }
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let centered = DMatrix::from_fn(b, dim, |i, j| reps[i][j] - mean[j]);
    let full = (centered.transpose() * &centered) / (b - 1) as f64;
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..dim).partition(|&j| full[(j, j)] >= VARIANCE_FLOOR);
    let matrix = full.select_rows(&kept).select_columns(&kept);
    Ok(CovMatrix {
        matrix,
        b_used: b,
        dropped_coords: dropped,
        kept_coords: kept,
    })
}

/// Re-estimates the moment vector on `b` block-bootstrap samples with the
/// grids frozen at `est`, returning the covariance and the `b × dim`
/// replicate matrix.
pub fn bootstrap_covariance(
    ds: &Dataset,
    cfg: &CurveConfig,
    est: &CurveEstimate,
    kind: NullKind,
    b: usize,
    seed: u64,
) -> Result<(CovMatrix, Vec<Vec<f64>>)> {
    if b < 30 {
        return Err(Error::InvalidConfig(format!("bootstrap covariance needs B >= 30 (got {b})")));
    }
    let reps = bootstrap_replicates(ds, b, seed, Purpose::Bootstrap, |r| {
        let curves = estimate_curves_frozen(r, cfg, &est.gs, Some(&est.grid))?;
        Ok(build_moment_vector(&curves, kind)?.entries)
    })?;
    let cov = covariance_from_replicates(&reps)?;
    Ok((cov, reps))
}

/// `Ω = Σ̃⁻¹` together with the factor of `Σ̃ = Σ + r·(tr Σ / dim)·I`.
#[derive(Debug, Clone)]
pub struct Weighting {
    pub omega: DMatrix<f64>,
    pub factor: Cholesky<f64, Dyn>,
    pub ridge_used: f64,
    pub escalated: bool,
}

pub const MAX_RIDGE: f64 = 1e-2;

pub fn regularized_inverse(cov: &DMatrix<f64>, ridge: f64) -> Result<Weighting> {
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be nonnegative (got {ridge})")));
    }
    let dim = cov.nrows();
    if dim == 0 {
        return Err(Error::Empty("covariance after dropping constant moments"));
    }
    let scale = cov.trace() / dim as f64;
    let mut r = ridge;
    let mut escalated = false;
    loop {
        let mut m = cov.clone();
        for i in 0..dim {
            m[(i, i)] += r * scale;
        }
        if let Some(ch) = Cholesky::new(m) {
            let omega = ch.inverse();
            return Ok(Weighting {
                omega,
                factor: ch,
                ridge_used: r,
                escalated,
            });
        }
        r = if r == 0.0 { 1e-6 } else { r * 10.0 };
        escalated = true;
        if r > MAX_RIDGE * (1.0 + 1e-9) {
            return Err(Error::Factorization(r / 10.0));
        }
        log::warn!("covariance not positive definite; raising ridge to {r:e}");
    }
}

/// `S(M, Ω) = (M'ΩM)^{1/2}`, floored at zero.
pub fn test_statistic(m: &[f64], omega: &DMatrix<f64>) -> Result<f64> {
    if omega.nrows() != m.len() || omega.ncols() != m.len() {
        return Err(Error::DimensionMismatch {
            expected: omega.nrows(),
            got: m.len(),
        });
    }
    let v = DVector::from_column_slice(m);
    let q = v.dot(&(omega * &v));
    Ok(q.max(0.0).sqrt())
}

/// Empirical `(1 − α)` quantile: the `⌈(1 − α)L⌉`-th order statistic.
fn upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let l = sorted.len();
    let rank = ((1.0 - alpha) * l as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(l) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub alpha: f64,
    pub value: f64,
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidConfig("alphas must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Critical values from `sims` Gaussian draws `Z = L ξ` where `L L' = Σ̃`.
/// Returned in decreasing `α`.
pub fn simulate_critical_values(w: &Weighting, sims: usize, alphas: &[f64], seed: u64) -> Result<Vec<CriticalValue>> {
    if sims < 1000 {
        return Err(Error::InvalidConfig(format!("need at least 1000 simulation draws (got {sims})")));
    }
    validate_alphas(alphas)?;
    let l = w.factor.l();
    let dim = l.nrows();
    let mut stats: Vec<f64> = (0..sims)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Purpose::Gaussian, i as u64);
            let xi = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let z = &l * xi;
            z.dot(&(&w.omega * &z)).max(0.0).sqrt()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let mut sorted_alphas = alphas.to_vec();
    sorted_alphas.sort_by(|a, b| b.total_cmp(a));
    sorted_alphas.dedup();
    Ok(sorted_alphas
        .into_iter()
        .map(|alpha| CriticalValue {
            alpha,
            value: upper_quantile(&stats, alpha),
        })
        .collect())
}

/// Outcome of comparing the statistic with the critical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    /// Smallest level at which the null is rejected.
    pub reject_at: Option<f64>,
    pub label: String,
}

fn percent(alpha: f64) -> String {
    let p = alpha * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p}%")
    }
}

/// Rejects at level `α` when the statistic strictly exceeds `c(α)`.
pub fn decide(statistic: f64, cvs: &[CriticalValue]) -> Decision {
    let reject_at = cvs
        .iter()
        .filter(|c| statistic > c.value)
        .map(|c| c.alpha)
        .min_by(f64::total_cmp);
    let label = match reject_at {
        Some(a) => format!("Reject at {}", percent(a)),
        None => "Do not reject".to_string(),
    };
    Decision { reject_at, label }
}

/// Full test configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub null_kind: NullKind,
    pub curves: CurveConfig,
    pub bootstrap: usize,
    pub sims: usize,
    pub alphas: Vec<f64>,
    pub ridge: f64,
    pub seed: u64,
}

impl TestConfig {
    pub fn new(null_kind: NullKind) -> Self {
        TestConfig {
            null_kind,
            curves: CurveConfig::default(),
            bootstrap: 500,
            sims: 10_000,
            alphas: DEFAULT_ALPHAS.to_vec(),
            ridge: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub null_kind: NullKind,
    pub statistic: f64,
    pub critical_values: Vec<CriticalValue>,
    pub decision: Decision,
    pub moment_dim: usize,
    pub dropped_coords: Vec<usize>,
    pub ridge_used: f64,
    pub bootstrap_used: usize,
    pub grid_spec: GridSpec,
    pub config: TestConfig,
    pub warnings: Vec<String>,
    pub curve_files: Vec<String>,
}

impl TestReport {
    /// Table with one row: hypothesis, statistic, critical values, decision.
    pub fn to_table(&self) -> String {
        let mut head = vec!["H0".to_string(), "Statistic".to_string()];
        let mut row = vec![self.null_kind.label().to_string(), format!("{:.2}", self.statistic)];
        for cv in &self.critical_values {
            head.push(percent(cv.alpha));
            row.push(format!("{:.2}", cv.value));
        }
        head.push("Decision".into());
        row.push(self.decision.label.clone());
        let widths: Vec<usize> = head.iter().zip(&row).map(|(a, b)| a.len().max(b.len())).collect();
        let fmt = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        format!("{}\n{}\n", fmt(&head), fmt(&row))
    }
}

/// Report plus the point estimates it was computed from.
#[derive(Debug, Clone)]
pub struct TestOutcome {
    pub report: TestReport,
    pub estimate: CurveEstimate,
    pub moments: MomentVector,
}

pub fn run_test(ds: &Dataset, cfg: &TestConfig) -> Result<TestOutcome> {
    let mut out = run_tests(ds, cfg, &[cfg.null_kind])?;
    Ok(out.remove(0))
}

/// Runs several nulls on one dataset, sharing the point estimate and the
/// bootstrap replicates. Each outcome equals what [`run_test`] returns with
/// `null_kind` set to that null.
pub fn run_tests(ds: &Dataset, cfg: &TestConfig, nulls: &[NullKind]) -> Result<Vec<TestOutcome>> {
    if ds.n_respondents() < 2 {
        return Err(Error::InvalidDataset("the test needs at least two respondents".into()));
    }
    validate_alphas(&cfg.alphas)?;
    if cfg.sims < 1000 {
        return Err(Error::InvalidConfig(format!("need at least 1000 simulation draws (got {})", cfg.sims)));
    }
    if cfg.bootstrap < 30 {
        return Err(Error::InvalidConfig(format!("bootstrap covariance needs B >= 30 (got {})", cfg.bootstrap)));
    }
    let mut taus = cfg.curves.taus.clone();
    taus.sort_by(f64::total_cmp);
    for &kind in nulls {
        moment_pairs(&taus, kind)?;
    }

    let est = estimate_curves(ds, &cfg.curves).map_err(Error::at_stage("estimation"))?;
    let boot = bootstrap_replicates(ds, cfg.bootstrap, cfg.seed, Purpose::Bootstrap, |r| {
        estimate_curves_frozen(r, &cfg.curves, &est.gs, Some(&est.grid))
    })
    .map_err(Error::at_stage("bootstrap"))?;

    let mut outcomes = Vec::with_capacity(nulls.len());
    for &kind in nulls {
        let moments = build_moment_vector(&est.curves, kind)?;
        let reps = boot
            .iter()
            .map(|c| Ok(build_moment_vector(c, kind)?.entries))
            .collect::<Result<Vec<_>>>()
            .map_err(Error::at_stage("bootstrap"))?;
        let cov = covariance_from_replicates(&reps).map_err(Error::at_stage("bootstrap"))?;
        let mut warnings = est.warnings.clone();
        let (statistic, critical_values, ridge_used) = if cov.kept_coords.is_empty() {
            warnings.push("every moment is constant across replicates; statistic set to 0".into());
            let cvs = {
                let mut a = cfg.alphas.clone();
                a.sort_by(|x, y| y.total_cmp(x));
                a.dedup();
                a.into_iter().map(|alpha| CriticalValue { alpha, value: 0.0 }).collect()
            };
            (0.0, cvs, cfg.ridge)
        } else {
            let w = regularized_inverse(&cov.matrix, cfg.ridge).map_err(Error::at_stage("weighting"))?;
            if w.escalated {
                warnings.push(format!("ridge escalated to {:e}", w.ridge_used));
            }
            let m: Vec<f64> = cov.kept_coords.iter().map(|&j| moments.entries[j]).collect();
            let stat = test_statistic(&m, &w.omega)?;
            let cvs = simulate_critical_values(&w, cfg.sims, &cfg.alphas, cfg.seed)
                .map_err(Error::at_stage("simulation"))?;
            (stat, cvs, w.ridge_used)
        };
        let decision = decide(statistic, &critical_values);
        let mut config = cfg.clone();
        config.null_kind = kind;
        let report = TestReport {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            null_kind: kind,
            statistic,
            critical_values,
            decision,
            moment_dim: moments.entries.len(),
            dropped_coords: cov.dropped_coords,
            ridge_used,
            bootstrap_used: cov.b_used,
            grid_spec: est.gs.clone(),
            config,
            warnings,
            curve_files: Vec::new(),
        };
        outcomes.push(TestOutcome {
            report,
            estimate: est.clone(),
            moments,
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iqr::Normalization;
    use proptest::prelude::*;

    fn curve(tau: f64, values: Vec<f64>) -> CdfCurve {
        CdfCurve {
            tau,
            normalization: Normalization::Logistic,
            y: (0..values.len()).map(|i| i as f64 * 0.1).collect(),
            values,
        }
    }

    #[test]
    fn moment_dimensions() {
        let taus = [0.1, 0.25, 0.75, 0.9];
        let curves: Vec<CdfCurve> = taus.iter().map(|&t| curve(t, vec![0.5; 19])).collect();
        let ev1 = build_moment_vector(&curves, NullKind::Ev1).unwrap();
        assert_eq!(ev1.entries.len(), 114);
        assert!(ev1.entries.iter().all(|v| *v == 0.0));
        let sym = build_moment_vector(&curves, NullKind::Symmetry).unwrap();
        assert_eq!(sym.entries.len(), 38);
        assert_eq!((sym.index[0].tau, sym.index[0].tau_prime), (0.1, 0.9));
        assert_eq!((sym.index[19].tau, sym.index[19].tau_prime), (0.25, 0.75));
        assert!(moment_pairs(&[0.1, 0.25, 0.9], NullKind::Symmetry).is_err());
        assert!(moment_pairs(&[0.1, 0.75, 0.9], NullKind::Symmetry).is_err());
    }

    #[test]
    fn moment_order_and_mismatch() {
        let a = curve(0.75, vec![0.1, 0.6]);
        let b = curve(0.25, vec![0.3, 0.5]);
        let m = build_moment_vector(&[a.clone(), b], NullKind::Ev1).unwrap();
        assert_eq!(m.index[0].tau, 0.25);
        assert!((m.entries[0] - 0.2).abs() < 1e-15 && (m.entries[1] + 0.1).abs() < 1e-15);
        let mut c = curve(0.9, vec![0.1, 0.6]);
        c.y[1] = 0.5;
        assert!(build_moment_vector(&[a, c], NullKind::Ev1).is_err());
    }

    #[test]
    fn inverse_examples() {
        let w = regularized_inverse(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert!((w.omega.clone() - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let w = regularized_inverse(&d, 0.0).unwrap();
        assert!((w.omega[(0, 0)] - 0.25).abs() < 1e-15 && (w.omega[(1, 1)] - 1.0).abs() < 1e-15);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let w = regularized_inverse(&singular, 1e-6).unwrap();
        assert!(w.omega.iter().all(|v| v.is_finite()));
        let w = regularized_inverse(&singular, 0.0).unwrap();
        assert!(w.escalated && w.ridge_used > 0.0);
        assert!(regularized_inverse(&DMatrix::zeros(0, 0), 1e-6).is_err());
    }

    #[test]
    fn statistic_examples() {
        let i2 = DMatrix::identity(2, 2);
        assert_eq!(test_statistic(&[0.0, 0.0], &i2).unwrap(), 0.0);
        assert_eq!(test_statistic(&[1.0, 0.0], &i2).unwrap(), 1.0);
        assert_eq!(test_statistic(&[1.0, 1.0], &(i2.clone() * 2.0)).unwrap(), 2.0);
        assert!(test_statistic(&[1.0], &i2).is_err());
    }

    #[test]
    fn half_normal_critical_values() {
        let w = regularized_inverse(&DMatrix::identity(1, 1), 0.0).unwrap();
        let cv = simulate_critical_values(&w, 10_000, &[0.5, 0.10, 0.05, 0.01], 7).unwrap();
        let get = |a: f64| cv.iter().find(|c| c.alpha == a).unwrap().value;
        assert!((get(0.05) - 1.96).abs() < 0.05, "{}", get(0.05));
        assert!((get(0.5) - 0.674).abs() < 0.03, "{}", get(0.5));
        assert!(get(0.10) <= get(0.05) && get(0.05) <= get(0.01));
        assert!(simulate_critical_values(&w, 999, &[0.05], 7).is_err());
    }

    #[test]
    fn gaussian_draws_match_ridged_covariance() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.2, 0.6, 1.0, 0.3, 0.2, 0.3, 0.5]);
        let w = regularized_inverse(&sigma, 1e-3).unwrap();
        let l = w.factor.l();
        let n = 50_000;
        let mut acc = DMatrix::<f64>::zeros(3, 3);
        for i in 0..n {
            let mut rng = substream(3, Purpose::Gaussian, i);
            let xi = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
            let z = &l * xi;
            acc += &z * z.transpose();
        }
        acc /= n as f64;
        let ridged = &l * l.transpose();
        for (a, b) in acc.iter().zip(ridged.iter()) {
            assert!((a - b).abs() <= 0.05 * b.abs().max(0.2), "{a} vs {b}");
        }
    }

    #[test]
    fn decision_fixtures() {
        let cvs = |a: f64, b: f64, c: f64| {
            vec![
                CriticalValue { alpha: 0.10, value: a },
                CriticalValue { alpha: 0.05, value: b },
                CriticalValue { alpha: 0.01, value: c },
            ]
        };
        assert_eq!(decide(51.09, &cvs(35.83, 36.18, 36.88)).label, "Reject at 1%");
        assert_eq!(decide(13.64, &cvs(16.49, 16.81, 17.37)).label, "Do not reject");
        assert_eq!(decide(36.18, &cvs(35.83, 36.18, 36.88)).label, "Reject at 10%");
        assert_eq!(decide(36.5, &cvs(35.83, 36.18, 36.88)).label, "Reject at 5%");
    }

    #[test]
    fn covariance_drops_constant_coordinates() {
        let reps = vec![vec![1.0, 0.0, 2.0], vec![1.0, 1.0, 4.0], vec![1.0, 2.0, 0.0]];
        let c = covariance_from_replicates(&reps).unwrap();
        assert_eq!(c.dropped_coords, vec![0]);
        assert_eq!(c.matrix.nrows(), 2);
        assert!((c.matrix[(0, 0)] - 1.0).abs() < 1e-15);
        let same = vec![vec![0.3, 0.4]; 5];
        assert!(covariance_from_replicates(&same).unwrap().kept_coords.is_empty());
    }

    #[test]
    fn table_layout() {
        let report_line = TestReport {
            schema_version: 1,
            tool_version: "x".into(),
            null_kind: NullKind::Ev1,
            statistic: 51.09,
            critical_values: vec![
                CriticalValue { alpha: 0.10, value: 35.83 },
                CriticalValue { alpha: 0.05, value: 36.18 },
                CriticalValue { alpha: 0.01, value: 36.88 },
            ],
            decision: decide(51.09, &[CriticalValue { alpha: 0.01, value: 36.88 }]),
            moment_dim: 1,
            dropped_coords: vec![],
            ridge_used: 0.0,
            bootstrap_used: 30,
            grid_spec: GridSpec::symmetric(1, 1.0, 1, vec![]),
            config: TestConfig::new(NullKind::Ev1),
            warnings: vec![],
            curve_files: vec![],
        }
        .to_table();
        let lines: Vec<&str> = report_line.lines().collect();
        assert!(lines[0].starts_with("H0") && lines[0].contains("Statistic | 10%"));
        assert!(lines[1].contains("51.09") && lines[1].ends_with("Reject at 1%"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn statistic_permutation_invariant(seed in 0u64..500, dim in 2usize..6) {
            use rand::Rng;
            let mut rng = substream(seed, Purpose::MonteCarlo, 0);
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            let omega = &a * a.transpose();
            let m: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let perm: Vec<usize> = (0..dim).rev().collect();
            let pm: Vec<f64> = perm.iter().map(|&i| m[i]).collect();
            let pomega = DMatrix::from_fn(dim, dim, |i, j| omega[(perm[i], perm[j])]);
            let s1 = test_statistic(&m, &omega).unwrap();
            let s2 = test_statistic(&pm, &pomega).unwrap();
            prop_assert!((s1 - s2).abs() < 1e-12 * (1.0 + s1));
        }

        #[test]
        fn covariance_is_psd(seed in 0u64..500, b in 3usize..40, dim in 1usize..8) {
            use rand::Rng;
            let mut rng = substream(seed, Purpose::MonteCarlo, 1);
            let reps: Vec<Vec<f64>> = (0..b).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
            let c = covariance_from_replicates(&reps).unwrap();
            prop_assert!((c.matrix.clone() - c.matrix.transpose()).abs().max() < 1e-15);
            let eig = c.matrix.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
        }

        #[test]
        fn decision_monotone(stat in 0.0f64..60.0, bump in 0.0f64..10.0) {
            let cvs = vec![
                CriticalValue { alpha: 0.10, value: 35.83 },
                CriticalValue { alpha: 0.05, value: 36.18 },
                CriticalValue { alpha: 0.01, value: 36.88 },
            ];
            let rank = |d: Decision| d.reject_at.map_or(1.0, |a| a);
            prop_assert!(rank(decide(stat + bump, &cvs)) <= rank(decide(stat, &cvs)));
        }

        #[test]
        fn identical_curves_give_zero_statistic(v in proptest::collection::vec(0.0f64..1.0, 5), seed in 0u64..100) {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let curves: Vec<CdfCurve> = [0.1, 0.25, 0.75, 0.9].iter().map(|&t| curve(t, sorted.clone())).collect();
            let m = build_moment_vector(&curves, NullKind::Ev1).unwrap();
            use rand::Rng;
            let mut rng = substream(seed, Purpose::MonteCarlo, 2);
            let a = DMatrix::from_fn(m.entries.len(), m.entries.len(), |_, _| rng.random_range(-1.0..1.0));
            let omega = &a * a.transpose();
            let s = test_statistic(&m.entries, &omega).unwrap();
            prop_assert_eq!(s, 0.0);
            prop_assert_eq!(decide(s, &[CriticalValue { alpha: 0.05, value: 0.0 }]).label, "Do not reject");
        }
    }
}
