//! Linear quantile regression of stated probabilities on differenced design
//! rows.
//!
//! The check-loss problem `min_b Σ ρ_τ(y_i − x_i·b)` is a linear program whose
//! optimum is attained at a vertex: a coefficient vector interpolating `p`
//! observations. [`fit_qr`] walks between such vertices. At each vertex it
//! evaluates the directional derivative along the `2p` edges obtained by
//! releasing one interpolated observation, moves along the steepest descending
//! edge with an exact line search (a weighted median over the breakpoints),
//! and stops when no edge descends.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Design, DesignRow};
use crate::error::{Error, Result};

/// What was regressed on the design rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomeTransform {
    /// The stated probability itself; predictions are clamped to `[0, 1]`.
    Direct,
    /// `log(p / (1 − p))` after winsorizing `p` into `[winsor, 1 − winsor]`.
    LogOdds { winsor: f64 },
}

impl Default for OutcomeTransform {
    fn default() -> Self {
        OutcomeTransform::LogOdds { winsor: 0.01 }
    }
}

impl OutcomeTransform {
    pub fn outcome(self, prob: f64) -> f64 {
        match self {
            OutcomeTransform::Direct => prob,
            OutcomeTransform::LogOdds { winsor } => logit(prob.clamp(winsor, 1.0 - winsor)),
        }
    }

    /// Maps a linear prediction back to the probability scale.
    pub fn to_prob(self, linear: f64) -> f64 {
        match self {
            OutcomeTransform::Direct => linear.clamp(0.0, 1.0),
            OutcomeTransform::LogOdds { .. } => 1.0 / (1.0 + (-linear).exp()),
        }
    }

    /// Maps a probability in `(0, 1)` to the linear-prediction scale. For
    /// band edges strictly inside `(0, 1)` this is the inverse of
    /// [`to_prob`](Self::to_prob).
    pub fn to_linear(self, prob: f64) -> f64 {
        match self {
            OutcomeTransform::Direct => prob,
            OutcomeTransform::LogOdds { .. } => logit(prob),
        }
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Check loss `ρ_τ(u) = u (τ − 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Total check loss of coefficients `beta`.
pub fn objective(design: &Design, outcomes: &[f64], beta: &[f64], tau: f64) -> f64 {
    design
        .rows
        .iter()
        .zip(outcomes)
        .map(|(r, y)| check_loss(y - r.dot(beta), tau))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Dense row-major regression problem.
struct Problem<'a> {
    x: Vec<f64>,
    y: &'a [f64],
    n: usize,
    p: usize,
}

impl<'a> Problem<'a> {
    fn new(design: &Design, y: &'a [f64]) -> Self {
        Problem {
            x: design.flat(),
            y,
            n: design.len(),
            p: design.n_cols(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn residual(&self, i: usize, beta: &[f64]) -> f64 {
        self.y[i] - self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn objective(&self, beta: &[f64], tau: f64) -> f64 {
        (0..self.n).map(|i| check_loss(self.residual(i, beta), tau)).sum()
    }

    fn least_squares(&self) -> Vec<f64> {
        let x = DMatrix::from_row_slice(self.n, self.p, &self.x);
        let y = DVector::from_column_slice(self.y);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * y;
        match xtx.cholesky() {
            Some(ch) => ch.solve(&xty).iter().copied().collect(),
            None => vec![0.0; self.p],
        }
    }

    /// Picks `p` linearly independent rows, preferring small `|y − x·beta|`.
    fn basis_near(&self, beta: &[f64]) -> Option<Vec<usize>> {
        let mut order: Vec<(f64, usize)> =
            (0..self.n).map(|i| (self.residual(i, beta).abs(), i)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut basis = Vec::with_capacity(self.p);
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(self.p);
        for &(_, i) in &order {
            let row = self.row(i);
            let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut v = row.to_vec();
            for _ in 0..2 {
                for q in &ortho {
                    let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let norm = v.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 * norm0 {
                v.iter_mut().for_each(|a| *a /= norm);
                ortho.push(v);
                basis.push(i);
                if basis.len() == self.p {
                    return Some(basis);
                }
            }
        }
        None
    }

    fn basis_inverse(&self, basis: &[usize]) -> Option<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for (r, &i) in basis.iter().enumerate() {
            for c in 0..self.p {
                m[(r, c)] = self.x[i * self.p + c];
            }
        }
        m.try_inverse()
    }
}

/// Columns that are linear combinations of earlier columns.
fn collinear_columns(design: &Design) -> Vec<usize> {
    let n = design.len();
    let p = design.n_cols();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..p {
        let col: Vec<f64> = design.rows.iter().map(|r| r.regressors[j]).collect();
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col;
        for _ in 0..2 {
            for q in &ortho {
                let c: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = v.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 || n == 0 {
            out.push(j);
        } else {
            v.iter_mut().for_each(|a| *a /= norm);
            ortho.push(v);
        }
    }
    out
}

fn check_rank(design: &Design) -> Result<()> {
    let bad = collinear_columns(design);
    if bad.is_empty() && design.len() >= design.n_cols() {
        Ok(())
    } else {
        let columns = if bad.is_empty() {
            design.names.clone()
        } else {
            bad.iter().map(|&j| design.names[j].clone()).collect()
        };
        Err(Error::RankDeficient { columns })
    }
}

/// Where the vertex walk starts.
#[derive(Debug, Clone)]
pub enum Start<'a> {
    LeastSquares,
    Near(&'a [f64]),
    Basis(Vec<usize>),
}

/// Fits the `tau`-th linear quantile regression.
pub fn fit_qr(design: &Design, outcomes: &[f64], tau: f64) -> Result<QrFit> {
    fit_qr_from(design, outcomes, tau, Start::LeastSquares).map(|(fit, _)| fit)
}

/// Like [`fit_qr`], also returning the final basis for warm starts.
pub fn fit_qr_from(
    design: &Design,
    outcomes: &[f64],
    tau: f64,
    start: Start<'_>,
) -> Result<(QrFit, Vec<usize>)> {
    if design.is_empty() {
        return Err(Error::Empty("design rows"));
    }
    if outcomes.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            got: outcomes.len(),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("quantile level {tau} outside (0, 1)")));
    }
    check_rank(design)?;

    let first = outcomes[0];
    let has_intercept = design.rows.iter().all(|r| r.regressors[0] == 1.0);
    if has_intercept && outcomes.iter().all(|&y| y == first) {
        let mut beta = vec![0.0; design.n_cols()];
        beta[0] = first;
        let fit = QrFit {
            beta,
            objective: 0.0,
            iterations: 0,
            converged: true,
        };
        return Ok((fit, Vec::new()));
    }

    let prob = Problem::new(design, outcomes);
    let basis = match start {
        Start::Basis(b) if b.len() == prob.p && b.iter().all(|&i| i < prob.n) => Some(b),
        Start::Near(beta) if beta.len() == prob.p => prob.basis_near(beta),
        _ => None,
    };
    let basis = match basis {
        Some(b) => b,
        None => prob
            .basis_near(&prob.least_squares())
            .ok_or_else(|| Error::RankDeficient {
                columns: design.names.clone(),
            })?,
    };
    Ok(vertex_walk(&prob, tau, basis))
}

fn vertex_walk(prob: &Problem<'_>, tau: f64, mut basis: Vec<usize>) -> (QrFit, Vec<usize>) {
    let (n, p) = (prob.n, prob.p);
    let max_iter = 1000 + 20 * n;
    let scale = 1.0 + prob.y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero_tol = 1e-11 * scale;

    let mut in_basis = vec![false; n];
    let mut g = vec![0.0; n * p];
    let mut r = vec![0.0; n];
    let mut beta = vec![0.0; p];
    let mut obj = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut breaks: Vec<(f64, f64, usize)> = Vec::with_capacity(n);

    loop {
        let binv = match prob.basis_inverse(&basis) {
            Some(m) => m,
            None => match prob.basis_near(&beta) {
                Some(b) if b != basis => {
                    basis = b;
                    continue;
                }
                _ => break,
            },
        };
        beta_from_basis(prob, &binv, &basis, &mut beta);
        in_basis.iter_mut().for_each(|v| *v = false);
        basis.iter().for_each(|&i| in_basis[i] = true);
        for i in 0..n {
            r[i] = if in_basis[i] { 0.0 } else { prob.residual(i, &beta) };
        }
        let new_obj: f64 = r.iter().map(|&u| check_loss(u, tau)).sum();
        if new_obj > obj + 1e-12 * (1.0 + obj.abs()) {
            // Numerical drift undid progress; the previous vertex stands.
            converged = true;
            break;
        }
        obj = new_obj;
        if iterations >= max_iter {
            break;
        }

        // g[i][j] = x_i · (column j of X_h^{-1}): movement of observation i's
        // fitted value when basis observation j is released by one unit.
        for i in 0..n {
            let row = prob.row(i);
            for j in 0..p {
                let mut acc = 0.0;
                for c in 0..p {
                    acc += row[c] * binv[(c, j)];
                }
                g[i * p + j] = acc;
            }
        }

        let mut best: Option<(f64, usize, f64)> = None;
        for j in 0..p {
            let mut lin = 0.0;
            let mut zero_up = 0.0;
            let mut zero_down = 0.0;
            let mut mass = 1.0;
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let gij = g[i * p + j];
                mass += gij.abs();
                if r[i].abs() > zero_tol {
                    lin += gij * if r[i] > 0.0 { tau } else { tau - 1.0 };
                } else {
                    zero_up += check_loss(-gij, tau);
                    zero_down += check_loss(gij, tau);
                }
            }
            let up = -lin + (1.0 - tau) + zero_up;
            let down = lin + tau + zero_down;
            let tol = 1e-10 * mass;
            for (slope, sign) in [(up, 1.0), (down, -1.0)] {
                if slope < -tol && best.is_none_or(|b| slope < b.0) {
                    best = Some((slope, j, sign));
                }
            }
        }
        let Some((slope0, j, sign)) = best else {
            converged = true;
            break;
        };

        breaks.clear();
        for i in 0..n {
            if in_basis[i] || r[i].abs() <= zero_tol {
                continue;
            }
            let gi = sign * g[i * p + j];
            if gi == 0.0 {
                continue;
            }
            let t = r[i] / gi;
            if t > 0.0 {
                breaks.push((t, gi.abs(), i));
            }
        }
        breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, w, i) in &breaks {
            slope += w;
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(i_new) = entering else {
            // Unbounded direction; cannot happen for full-rank designs.
            break;
        };
        basis[j] = i_new;
        iterations += 1;
    }

    let fit = QrFit {
        objective: prob.objective(&beta, tau),
        beta,
        iterations,
        converged,
    };
    (fit, basis)
}

fn beta_from_basis(prob: &Problem<'_>, binv: &DMatrix<f64>, basis: &[usize], beta: &mut [f64]) {
    for c in 0..prob.p {
        let mut acc = 0.0;
        for (k, &i) in basis.iter().enumerate() {
            acc += binv[(c, k)] * prob.y[i];
        }
        beta[c] = acc;
    }
}

/// Default levels: tail anchors plus the 0.05, 0.15, ..., 0.95 midpoint grid.
pub fn default_levels() -> Vec<f64> {
    let mut v = vec![0.01];
    v.extend((0..10).map(|k| 0.05 + 0.1 * k as f64));
    v.push(0.99);
    v
}

fn one() -> usize {
    1
}

/// Quantile-regression coefficients over a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientGrid {
    pub levels: Vec<f64>,
    pub coefs: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub outcome_transform: OutcomeTransform,
    /// Numeraire basis of the design the grid was fitted on.
    #[serde(default = "one")]
    pub numeraire_degree: usize,
    #[serde(default)]
    pub numeraire_knots: Vec<f64>,
    #[serde(skip)]
    bases: Vec<Vec<usize>>,
    pub all_converged: bool,
}

impl CoefficientGrid {
    /// Builds a grid from given coefficients (used for injected fixtures).
    pub fn from_coefs(
        levels: Vec<f64>,
        coefs: Vec<Vec<f64>>,
        names: Vec<String>,
        outcome_transform: OutcomeTransform,
    ) -> Result<Self> {
        validate_levels(&levels)?;
        if coefs.len() != levels.len() || coefs.iter().any(|c| c.len() != names.len()) {
            return Err(Error::DimensionMismatch {
                expected: levels.len(),
                got: coefs.len(),
            });
        }
        Ok(CoefficientGrid {
            levels,
            coefs,
            names,
            outcome_transform,
            numeraire_degree: 1,
            numeraire_knots: Vec::new(),
            bases: Vec::new(),
            all_converged: true,
        })
    }

    /// Sets the numeraire basis for grids built from coefficients.
    pub fn with_numeraire_basis(mut self, degree: usize, knots: Vec<f64>) -> Self {
        self.numeraire_degree = degree;
        self.numeraire_knots = knots;
        self
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    /// Piecewise-linear interpolation of the coefficients in the level,
    /// constant beyond the outermost levels.
    pub fn interpolate(&self, a: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cols()];
        self.interpolate_into(a, &mut out);
        out
    }

    pub fn interpolate_into(&self, a: f64, out: &mut [f64]) {
        let l = &self.levels;
        let last = l.len() - 1;
        if a <= l[0] {
            out.copy_from_slice(&self.coefs[0]);
            return;
        }
        if a >= l[last] {
            out.copy_from_slice(&self.coefs[last]);
            return;
        }
        match l.binary_search_by(|v| v.total_cmp(&a)) {
            Ok(k) => out.copy_from_slice(&self.coefs[k]),
            Err(k) => {
                let (lo, hi) = (k - 1, k);
                let w = (a - l[lo]) / (l[hi] - l[lo]);
                for (o, (c0, c1)) in out.iter_mut().zip(self.coefs[lo].iter().zip(&self.coefs[hi])) {
                    *o = (1.0 - w) * c0 + w * c1;
                }
            }
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut text = String::from("level");
        for n in &self.names {
            text.push_str(&format!(",coef_{n}"));
        }
        text.push('\n');
        for (lvl, c) in self.levels.iter().zip(&self.coefs) {
            text.push_str(&lvl.to_string());
            for v in c {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub fn interpolate_coefs(grid: &CoefficientGrid, a: f64) -> Vec<f64> {
    grid.interpolate(a)
}

/// Conditional `a`-quantile of the stated probability at design row `row`,
/// on the probability scale.
pub fn predict_quantile(grid: &CoefficientGrid, a: f64, row: &DesignRow) -> f64 {
    let beta = grid.interpolate(a);
    grid.outcome_transform.to_prob(row.dot(&beta))
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidConfig("empty quantile level grid".into()));
    }
    for w in levels.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::InvalidConfig(format!(
                "quantile levels must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if levels.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::InvalidConfig("quantile levels must lie in (0, 1)".into()));
    }
    Ok(())
}

/// Transformed outcomes for a dataset.
pub fn outcomes(ds: &Dataset, transform: OutcomeTransform) -> Vec<f64> {
    ds.observations().iter().map(|o| transform.outcome(o.prob)).collect()
}

/// Fits one regression per level. `outcomes` must already be transformed
/// per `transform`, which is recorded in the grid.
pub fn fit_qr_grid(
    design: &Design,
    outcomes: &[f64],
    levels: &[f64],
    transform: OutcomeTransform,
) -> Result<CoefficientGrid> {
    fit_qr_grid_warm(design, outcomes, levels, transform, None)
}

/// Fits the grid, starting each level from the neighbouring level's vertex;
/// `warm` (e.g. the full-sample grid when refitting a bootstrap sample)
/// seeds the first level.
pub fn fit_qr_grid_warm(
    design: &Design,
    outcomes: &[f64],
    levels: &[f64],
    transform: OutcomeTransform,
    warm: Option<&CoefficientGrid>,
) -> Result<CoefficientGrid> {
    validate_levels(levels)?;
    let k = levels.len();
    let mid = (0..k)
        .min_by(|&a, &b| (levels[a] - 0.5).abs().total_cmp(&(levels[b] - 0.5).abs()))
        .unwrap_or(0);
    let mut coefs = vec![Vec::new(); k];
    let mut bases = vec![Vec::new(); k];
    let mut all_converged = true;
    let mut order: Vec<usize> = vec![mid];
    order.extend(mid + 1..k);
    order.extend((0..mid).rev());
    for (pos, &idx) in order.iter().enumerate() {
        let level = levels[idx];
        let start = if pos == 0 {
            match warm {
                Some(w) => Start::Near(&w.coefs[w.levels.len() / 2]),
                None => Start::LeastSquares,
            }
        } else {
            let neighbour = if idx > mid { idx - 1 } else { idx + 1 };
            if bases[neighbour].is_empty() {
                Start::Near(&coefs[neighbour])
            } else {
                Start::Basis(bases[neighbour].clone())
            }
        };
        let (fit, basis) = fit_qr_from(design, outcomes, level, start).map_err(|e| Error::AtLevel {
            level,
            source: Box::new(e),
        })?;
        all_converged &= fit.converged;
        coefs[idx] = fit.beta;
        bases[idx] = basis;
    }
    Ok(CoefficientGrid {
        levels: levels.to_vec(),
        coefs,
        names: design.names.clone(),
        outcome_transform: transform,
        numeraire_degree: design.rows.first().map_or(1, |r| r.numeraire_degree),
        numeraire_knots: design.rows.first().map_or_else(Vec::new, |r| r.numeraire_knots.clone()),
        bases,
        all_converged,
    })
}

/// Why a respondent has no individual fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum IndividualStatus {
    Estimated { beta: Vec<f64>, objective: f64 },
    InsufficientScenarios { scenarios: usize, required: usize },
    RankDeficient { columns: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualFit {
    pub respondent_id: String,
    #[serde(flatten)]
    pub status: IndividualStatus,
}

/// Separate median (LAD) regressions of `log(P1/P0)` per respondent.
/// Probabilities are winsorized into `[winsor, 1 − winsor]` first.
pub fn fit_individual_lad(ds: &Dataset, design: &Design, winsor: f64) -> Result<Vec<IndividualFit>> {
    let transform = OutcomeTransform::LogOdds { winsor };
    let y = outcomes(ds, transform);
    let p = design.n_cols();
    let fits: Vec<IndividualFit> = ds
        .respondents()
        .iter()
        .map(|resp| {
            let rows = resp.rows.clone();
            let status = if rows.len() < p {
                IndividualStatus::InsufficientScenarios {
                    scenarios: rows.len(),
                    required: p,
                }
            } else {
                let sub = design.subset(rows.clone());
                match fit_qr(&sub, &y[rows], 0.5) {
                    Ok(fit) => IndividualStatus::Estimated {
                        beta: fit.beta,
                        objective: fit.objective,
                    },
                    Err(Error::RankDeficient { columns }) => IndividualStatus::RankDeficient { columns },
                    Err(_) => IndividualStatus::RankDeficient {
                        columns: design.names.clone(),
                    },
                }
            };
            IndividualFit {
                respondent_id: resp.id.clone(),
                status,
            }
        })
        .collect();
    if fits
        .iter()
        .all(|f| !matches!(f.status, IndividualStatus::Estimated { .. }))
    {
        return Err(Error::InvalidDataset("no respondent is individually estimable".into()));
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DesignRow;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn design_from(rows: Vec<Vec<f64>>) -> Design {
        let p = rows[0].len();
        let mut names = vec!["intercept".to_string()];
        names.extend((1..p).map(|j| format!("x{j}")));
        Design {
            names,
            rows: rows
                .into_iter()
                .map(|regressors| DesignRow {
                    regressors,
                    numeraire_coord: 1.min(p - 1),
                    numeraire_degree: 1,
                    numeraire_knots: vec![],
                })
                .collect(),
        }
    }

    fn random_problem(seed: u64, n: usize, p: usize) -> (Design, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r = vec![1.0];
                r.extend((1..p).map(|_| rng.random_range(-3.0..3.0)));
                r
            })
            .collect();
        let y = rows
            .iter()
            .map(|r| 0.5 + r.iter().skip(1).sum::<f64>() * 0.7 + rng.random_range(-1.0..1.0f64).powi(3) * 2.0)
            .collect();
        (design_from(rows), y)
    }

    /// Exhaustive oracle: the optimum is attained at a vertex interpolating
    /// `p` observations, so enumerate all of them.
    pub(crate) fn vertex_enumeration_min(design: &Design, y: &[f64], tau: f64) -> f64 {
        let n = design.len();
        let p = design.n_cols();
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..p).collect();
        loop {
            let m = DMatrix::from_fn(p, p, |r, c| design.rows[idx[r]].regressors[c]);
            if let Some(inv) = m.try_inverse() {
                let yy = DVector::from_fn(p, |r, _| y[idx[r]]);
                let b: Vec<f64> = (inv * yy).iter().copied().collect();
                best = best.min(objective(design, y, &b, tau));
            }
            // next combination
            let mut k = p;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < n - p + k {
                    idx[k] += 1;
                    for m in k + 1..p {
                        idx[m] = idx[m - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn intercept_only_median() {
        let d = design_from(vec![vec![1.0]; 3]);
        let fit = fit_qr(&d, &[0.2, 0.4, 0.6], 0.5).unwrap();
        assert_eq!(fit.beta, vec![0.4]);
        assert!(fit.converged);
    }

    #[test]
    fn intercept_only_lower_quartile() {
        let d = design_from(vec![vec![1.0]; 3]);
        let y = [0.2, 0.4, 0.6];
        let fit = fit_qr(&d, &y, 0.25).unwrap();
        // Grid search over b in [0, 0.8] for the minimal check loss.
        let grid_min = (0..=8000)
            .map(|k| objective(&d, &y, &[k as f64 * 1e-4], 0.25))
            .fold(f64::INFINITY, f64::min);
        assert!((fit.objective - grid_min).abs() < 1e-9);
        assert!((fit.beta[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn exact_linear_outcomes_recovered() {
        let (d, _) = random_problem(1, 40, 3);
        let truth = [0.3, -1.2, 2.0];
        let y: Vec<f64> = d.rows.iter().map(|r| r.dot(&truth)).collect();
        for tau in [0.1, 0.5, 0.9] {
            let fit = fit_qr(&d, &y, tau).unwrap();
            assert!(fit.objective < 1e-10);
            for (b, t) in fit.beta.iter().zip(truth) {
                assert!((b - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_vertex_enumeration() {
        for seed in 0..5 {
            let (d, y) = random_problem(seed, 30, 3);
            for tau in [0.1, 0.37, 0.5, 0.9] {
                let fit = fit_qr(&d, &y, tau).unwrap();
                let oracle = vertex_enumeration_min(&d, &y, tau);
                assert!(fit.converged);
                assert!((fit.objective - oracle).abs() < 1e-8, "{} vs {}", fit.objective, oracle);
            }
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let rows = (0..10).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        let d = design_from(rows);
        match fit_qr(&d, &[0.0; 10], 0.5) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["x2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn degenerate_outcomes() {
        let (d, _) = random_problem(3, 12, 3);
        let fit = fit_qr(&d, &[0.7; 12], 0.3).unwrap();
        assert_eq!(fit.beta, vec![0.7, 0.0, 0.0]);
    }

    #[test]
    fn grid_levels() {
        let lv = default_levels();
        assert_eq!(lv.len(), 12);
        assert!((lv[1] - 0.05).abs() < 1e-12 && (lv[10] - 0.95).abs() < 1e-12);
        let (d, y) = random_problem(5, 60, 2);
        let g = fit_qr_grid(&d, &y, &[0.5], OutcomeTransform::Direct).unwrap();
        let single = fit_qr(&d, &y, 0.5).unwrap();
        assert!(
            (objective(&d, &y, &g.coefs[0], 0.5) - single.objective).abs() < 1e-10
        );
        assert!(fit_qr_grid(&d, &y, &[0.2, 0.2], OutcomeTransform::Direct).is_err());

        let full = fit_qr_grid(&d, &y, &lv, OutcomeTransform::Direct).unwrap();
        for (lvl, c) in full.levels.iter().zip(&full.coefs) {
            let oracle = vertex_enumeration_min(&d, &y, *lvl);
            assert!((objective(&d, &y, c, *lvl) - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolation_rules() {
        let g = CoefficientGrid::from_coefs(
            vec![0.01, 0.2, 0.4],
            vec![vec![5.0], vec![0.0], vec![2.0]],
            vec!["intercept".into()],
            OutcomeTransform::Direct,
        )
        .unwrap();
        assert_eq!(g.interpolate(0.2), vec![0.0]);
        assert!((g.interpolate(0.3)[0] - 1.0).abs() < 1e-12);
        assert_eq!(g.interpolate(0.001), vec![5.0]);
        assert_eq!(g.interpolate(0.9), vec![2.0]);
    }

    #[test]
    fn prediction_scales() {
        let row = DesignRow {
            regressors: vec![1.0, 0.3],
            numeraire_coord: 1,
            numeraire_degree: 1,
            numeraire_knots: vec![],
        };
        let zero = CoefficientGrid::from_coefs(
            vec![0.5],
            vec![vec![0.0, 0.0]],
            vec!["intercept".into(), "numeraire".into()],
            OutcomeTransform::Direct,
        )
        .unwrap();
        assert_eq!(predict_quantile(&zero, 0.5, &row), 0.0);
        let neg = CoefficientGrid::from_coefs(
            vec![0.5],
            vec![vec![-0.5, 0.0]],
            vec!["intercept".into(), "numeraire".into()],
            OutcomeTransform::Direct,
        )
        .unwrap();
        assert_eq!(predict_quantile(&neg, 0.5, &row), 0.0);
        let lo = OutcomeTransform::LogOdds { winsor: 0.01 };
        let g0 = CoefficientGrid::from_coefs(
            vec![0.5],
            vec![vec![0.0, 0.0]],
            vec!["intercept".into(), "numeraire".into()],
            lo,
        )
        .unwrap();
        assert_eq!(predict_quantile(&g0, 0.5, &row), 0.5);
        let g3 = CoefficientGrid::from_coefs(
            vec![0.5],
            vec![vec![3f64.ln(), 0.0]],
            vec!["intercept".into(), "numeraire".into()],
            lo,
        )
        .unwrap();
        assert!((predict_quantile(&g3, 0.5, &row) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn individual_lad() {
        use crate::data::{Dataset, NumeraireTransform, Observation, Schema};
        let schema = Schema::new(vec!["h".into()], NumeraireTransform::Level);
        let mut obs = Vec::new();
        // Respondent a: log-odds exactly 0.8*dy - 0.4*dh.
        for (dy, dh) in [(1.0, 0.0), (-1.0, 1.0), (0.5, -2.0), (2.0, 1.5)] {
            let lo: f64 = 0.8 * dy - 0.4 * dh;
            obs.push(Observation {
                respondent_id: "a".into(),
                scenario_id: "s".into(),
                prob: 1.0 / (1.0 + (-lo).exp()),
                numeraire1: 10.0 + dy,
                numeraire0: 10.0,
                attrs1: vec![dh],
                attrs0: vec![0.0],
            });
        }
        obs.push(Observation {
            respondent_id: "b".into(),
            scenario_id: "s".into(),
            prob: 0.4,
            numeraire1: 1.0,
            numeraire0: 1.0,
            attrs1: vec![0.0],
            attrs0: vec![0.0],
        });
        let ds = Dataset::new(schema, obs).unwrap();
        let design = crate::data::build_design(&ds);
        let fits = fit_individual_lad(&ds, &design, 0.01).unwrap();
        match &fits[0].status {
            IndividualStatus::Estimated { beta, .. } => {
                assert!((beta[0]).abs() < 1e-9);
                assert!((beta[1] - 0.8).abs() < 1e-9);
                assert!((beta[2] + 0.4).abs() < 1e-9);
            }
            s => panic!("{s:?}"),
        }
        assert!(matches!(fits[1].status, IndividualStatus::InsufficientScenarios { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn no_perturbation_improves(seed in 0u64..10_000, tau in 0.05f64..0.95) {
            let (d, y) = random_problem(seed, 80, 3);
            let fit = fit_qr(&d, &y, tau).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
            for _ in 0..100 {
                let scale = 10f64.powf(rng.random_range(-6.0..0.0));
                let pert: Vec<f64> = fit.beta.iter().map(|b| b + scale * rng.random_range(-1.0..1.0)).collect();
                prop_assert!(fit.objective <= objective(&d, &y, &pert, tau) + 1e-8);
            }
        }

        #[test]
        fn scale_equivariance(seed in 0u64..10_000, c in 0.1f64..10.0) {
            let (d, y) = random_problem(seed, 50, 3);
            let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
            let a = fit_qr(&d, &y, 0.3).unwrap();
            let b = fit_qr(&d, &yc, 0.3).unwrap();
            prop_assert!((b.objective - c * a.objective).abs() < 1e-8 * (1.0 + b.objective));
            for (x, z) in a.beta.iter().zip(&b.beta) {
                prop_assert!((z - c * x).abs() < 1e-7 * (1.0 + z.abs()));
            }
        }
    }
}
