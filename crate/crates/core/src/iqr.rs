//! Interval measures `Â`, the distributions `Ĝ_τ` of normalized
//! interquantile ranges, the quantity function `F_Q`, and bootstrap bands.
//!
//! For a design row `w` and quantile level `a`, `Â(w, a)` is the length of
//! the set of numeraire shifts `s` (on the s-grid) for which the predicted
//! `a`-quantile of the stated probability at `t(s, w)` lies in the band
//! between `1 − τ` and the median. `Ĝ_τ(y)` is the share of `(w, a)` cells
//! whose `Â` is at most `y · n(τ)`, with `n` the normalization.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{block_resample, build_design_with_basis, shift_numeraire, Dataset, DesignRow};
use crate::error::{Error, Result};
use crate::quantreg::{fit_qr_grid_warm, outcomes, predict_quantile, CoefficientGrid, OutcomeTransform};
use crate::rng::{substream, Purpose};

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau = {tau} outside (0, 1)")));
    }
    if tau == 0.5 {
        return Err(Error::DegenerateNormalization(tau));
    }
    Ok(())
}

/// Logistic normalization `|log(τ / (1 − τ))|`.
pub fn ell(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok((tau / (1.0 - tau)).ln().abs())
}

/// Gaussian normalization `|Φ⁻¹(τ)|`.
pub fn ell_normal(tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(n.inverse_cdf(tau).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Logistic,
    Normal,
    None,
}

impl Normalization {
    pub fn factor(self, tau: f64) -> Result<f64> {
        match self {
            Normalization::Logistic => ell(tau),
            Normalization::Normal => ell_normal(tau),
            Normalization::None => check_tau(tau).map(|_| 1.0),
        }
    }
}

/// Levels `(τ_lo, τ_hi)` whose probability band `[1 − τ_hi, 1 − τ_lo]`
/// belongs to the interquantile range between `τ` and the median.
pub fn band_levels(tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    Ok(if tau > 0.5 { (0.5, tau) } else { (tau, 0.5) })
}

/// Evaluation grids. The s-grid is `s_lo + j·s_step`, `j = 0..k_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k_a: usize,
    pub s_lo: f64,
    pub s_step: f64,
    pub k_s: usize,
    pub y: Vec<f64>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_a == 0 {
            return Err(Error::InvalidConfig("a-grid needs at least one point".into()));
        }
        if !(self.s_step > 0.0) || self.k_s == 0 || !self.s_lo.is_finite() {
            return Err(Error::InvalidConfig("s-grid needs a positive step and at least one point".into()));
        }
        if self.y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("y-grid values must be finite and nonnegative".into()));
        }
        if self.y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("y-grid must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Symmetric s-grid over `[−s_max, s_max]` with `2·half + 1` points.
    pub fn symmetric(k_a: usize, s_max: f64, half: usize, y: Vec<f64>) -> Self {
        GridSpec {
            k_a,
            s_lo: -s_max,
            s_step: s_max / half as f64,
            k_s: 2 * half + 1,
            y,
        }
    }

    /// From `lo, hi, step`; the last point is the largest `lo + j·step ≤ hi`.
    pub fn from_range(k_a: usize, lo: f64, hi: f64, step: f64, y: Vec<f64>) -> Result<Self> {
        if !(step > 0.0) || !(hi >= lo) {
            return Err(Error::InvalidConfig(format!("bad s-grid {lo},{hi},{step}")));
        }
        let k_s = ((hi - lo) / step * (1.0 + 1e-12)).floor() as usize + 1;
        Ok(GridSpec {
            k_a,
            s_lo: lo,
            s_step: step,
            k_s,
            y,
        })
    }

    pub fn delta_a(&self) -> f64 {
        1.0 / self.k_a as f64
    }

    pub fn a_at(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.k_a as f64
    }

    pub fn a_points(&self) -> Vec<f64> {
        (0..self.k_a).map(|k| self.a_at(k)).collect()
    }

    pub fn s_at(&self, j: usize) -> f64 {
        self.s_lo + j as f64 * self.s_step
    }

    pub fn s_hi(&self) -> f64 {
        self.s_at(self.k_s - 1)
    }
}

/// An estimated distribution function on the y-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub tau: f64,
    pub normalization: Normalization,
    pub y: Vec<f64>,
    pub values: Vec<f64>,
}

impl CdfCurve {
    pub fn is_valid(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v)) && self.values.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Scenario set the curves integrate over.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CounterfactualSpec {
    /// Every observed design row, equally weighted.
    #[default]
    Observed,
    /// A fixed weighted list of design rows.
    Explicit { rows: Vec<DesignRow>, weights: Vec<f64> },
}

impl CounterfactualSpec {
    pub fn explicit(rows: Vec<DesignRow>, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("counterfactual scenario list"));
        }
        if rows.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(
                "counterfactual weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(CounterfactualSpec::Explicit { rows, weights })
    }

    fn mode(&self) -> &'static str {
        match self {
            CounterfactualSpec::Observed => "observed",
            CounterfactualSpec::Explicit { .. } => "explicit",
        }
    }

    /// Rows and weights for dataset `ds` (weights unnormalized for the
    /// observed set so that counts stay integral).
    fn resolve(&self, ds: &Dataset, degree: usize, knots: &[f64]) -> Result<(Vec<DesignRow>, Option<Vec<f64>>)> {
        match self {
            CounterfactualSpec::Observed => {
                if ds.is_empty() {
                    return Err(Error::Empty("scenario set"));
                }
                Ok((build_design_with_basis(ds, degree, knots).rows, None))
            }
            CounterfactualSpec::Explicit { rows, weights } => Ok((rows.clone(), Some(weights.clone()))),
        }
    }
}

/// Literal `Â`: sums `δ_s` over the s-grid points whose predicted quantile
/// falls in the closed band `[1 − τ_hi, 1 − τ_lo]`.
pub fn estimate_a(grid: &CoefficientGrid, row: &DesignRow, a: f64, tau_lo: f64, tau_hi: f64, gs: &GridSpec) -> f64 {
    let (lo, hi) = (1.0 - tau_hi, 1.0 - tau_lo);
    let count = (0..gs.k_s)
        .filter(|&j| {
            let p = predict_quantile(grid, a, &shift_numeraire(row, gs.s_at(j)));
            lo <= p && p <= hi
        })
        .count();
    count as f64 * gs.s_step
}

/// Linear predictor at `t(s, row)`, with the same arithmetic as
/// `shift_numeraire(row, s).dot(beta)` but without allocating.
fn linear_at(row: &DesignRow, beta: &[f64], s: f64) -> f64 {
    let c = row.numeraire_coord;
    let deg = row.numeraire_degree;
    let nk = row.numeraire_knots.len();
    let base = row.regressors[c] - s;
    let mut pow = base;
    row.regressors
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(j, (x, b))| {
            if j >= c && j < c + deg {
                let v = pow;
                pow *= base;
                v * b
            } else if j >= c + deg && j < c + deg + nk {
                (base - row.numeraire_knots[j - c - deg]).max(0.0) * b
            } else {
                x * b
            }
        })
        .sum()
}

/// First index in `[lo, hi)` where the monotone predicate holds (or `hi`),
/// galloping outward from `guess`.
fn partition_point_near(lo: usize, hi: usize, guess: usize, pred: impl Fn(usize) -> bool) -> usize {
    if lo >= hi {
        return lo;
    }
    let (mut l, mut h) = (lo, hi);
    let g = guess.clamp(lo, hi - 1);
    let mut step = 1;
    if pred(g) {
        h = g;
        while h > l {
            let probe = if h - l > step { h - step } else { l };
            if pred(probe) {
                h = probe;
                step *= 2;
            } else {
                l = probe + 1;
                break;
            }
        }
    } else {
        l = g + 1;
        while l < h {
            let probe = (l - 1 + step).min(h - 1);
            if pred(probe) {
                h = probe;
                break;
            }
            l = probe + 1;
            step *= 2;
        }
    }
    while l < h {
        let m = l + (h - l) / 2;
        if pred(m) {
            h = m;
        } else {
            l = m + 1;
        }
    }
    l
}

/// Real roots of `c0 + c1 u + c2 u²`.
fn quadratic_roots(c0: f64, c1: f64, c2: f64) -> Vec<f64> {
    if c2 == 0.0 {
        return if c1 != 0.0 { vec![-c0 / c1] } else { Vec::new() };
    }
    let disc = c1 * c1 - 4.0 * c2 * c0;
    if disc < 0.0 {
        return Vec::new();
    }
    let sign = if c1 >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (c1 + sign * disc.sqrt());
    let mut r = Vec::new();
    if q != 0.0 {
        r.push(c0 / q);
        r.push(q / c2);
    } else {
        r.push(0.0);
    }
    r
}

/// Splits the s-grid into index ranges on which the linear predictor is
/// monotone in exact arithmetic: cuts at the knots and at the stationary
/// points of the polynomial piece between them.
fn monotone_segments(row: &DesignRow, beta: &[f64], gs: &GridSpec, segs: &mut Vec<(usize, usize)>) {
    segs.clear();
    if row.numeraire_degree <= 1 && row.numeraire_knots.is_empty() {
        segs.push((0, gs.k_s));
        return;
    }
    let c = row.numeraire_coord;
    let deg = row.numeraire_degree;
    let d = row.regressors[c];
    let mut knots: Vec<(f64, f64)> = row
        .numeraire_knots
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, beta[c + deg + j]))
        .collect();
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    // In u = d − s, the piece above the m-th knot has linear coefficient
    // β₁ + Σ hinge slopes of the knots below it.
    let mut cuts_u: Vec<f64> = knots.iter().map(|k| k.0).collect();
    if deg >= 2 {
        let mut lin = beta[c];
        for m in 0..=knots.len() {
            if m > 0 {
                lin += knots[m - 1].1;
            }
            let lo = if m == 0 { f64::NEG_INFINITY } else { knots[m - 1].0 };
            let hi = knots.get(m).map_or(f64::INFINITY, |k| k.0);
            let cubic = if deg >= 3 { 3.0 * beta[c + 2] } else { 0.0 };
            cuts_u.extend(
                quadratic_roots(lin, 2.0 * beta[c + 1], cubic)
                    .into_iter()
                    .filter(|u| *u > lo && *u < hi),
            );
        }
    }
    let mut cuts: Vec<usize> = cuts_u
        .into_iter()
        .filter_map(|u| {
            let j = (d - u - gs.s_lo) / gs.s_step;
            (j.is_finite() && j > 0.0 && j < (gs.k_s - 1) as f64).then(|| j.floor() as usize + 1)
        })
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    let mut start = 0;
    for cut in cuts {
        segs.push((start, cut));
        start = cut;
    }
    segs.push((start, gs.k_s));
}

/// Band thresholds on the linear-prediction scale, shared by the fast
/// evaluator. Each band is `(index of lower edge, index of upper edge)` into
/// `edges`.
#[derive(Debug, Clone)]
struct Bands {
    edges: Vec<f64>,
    bands: Vec<(usize, usize)>,
}

impl Bands {
    fn new(taus: &[f64], transform: OutcomeTransform) -> Result<Self> {
        let mut raw = Vec::new();
        for &t in taus {
            let (tl, th) = band_levels(t)?;
            raw.push((transform.to_linear(1.0 - th), transform.to_linear(1.0 - tl)));
        }
        let mut edges: Vec<f64> = raw.iter().flat_map(|&(l, h)| [l, h]).collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let pos = |v: f64| edges.iter().position(|e| *e == v).expect("edge present");
        let bands = raw.iter().map(|&(l, h)| (pos(l), pos(h))).collect();
        Ok(Bands { edges, bands })
    }
}

/// Reusable buffers for [`cell_counts`].
#[derive(Default)]
struct Scratch {
    n_ge: Vec<usize>,
    n_gt: Vec<usize>,
}

/// Per-cell grid-point counts of every band, plus whether any band set
/// touched the ends of the s-grid.
fn cell_counts(
    row: &DesignRow,
    beta: &[f64],
    gs: &GridSpec,
    bands: &Bands,
    segs: &[(usize, usize)],
    out: &mut [u32],
    sc: &mut Scratch,
) -> bool {
    let m = bands.edges.len();
    sc.n_ge.clear();
    sc.n_ge.resize(m, 0);
    sc.n_gt.clear();
    sc.n_gt.resize(m, 0);
    let f = |j: usize| linear_at(row, beta, gs.s_at(j));
    let (mut first, mut last) = (0.0, 0.0);
    for (i, &(lo, hi)) in segs.iter().enumerate() {
        let (v0, v1) = (f(lo), f(hi - 1));
        if i == 0 {
            first = v0;
        }
        last = v1;
        let len = hi - lo;
        let guess = |t: f64| -> usize {
            if v1 == v0 || len == 1 {
                lo
            } else {
                let r = (t - v0) / (v1 - v0) * (len - 1) as f64;
                lo + r.clamp(0.0, (len - 1) as f64) as usize
            }
        };
        for (e, &t) in bands.edges.iter().enumerate() {
            if v0 <= v1 {
                // Nondecreasing: {f ≥ t} and {f > t} are suffixes.
                let p_ge = if t <= v0 {
                    lo
                } else if t > v1 {
                    hi
                } else {
                    partition_point_near(lo, hi, guess(t), |j| f(j) >= t)
                };
                let p_gt = if t < v0 {
                    lo
                } else if t >= v1 {
                    hi
                } else {
                    partition_point_near(lo, hi, p_ge, |j| f(j) > t)
                };
                sc.n_ge[e] += hi - p_ge;
                sc.n_gt[e] += hi - p_gt;
            } else {
                // Decreasing: {f ≥ t} and {f > t} are prefixes.
                let p_lt = if t <= v1 {
                    hi
                } else if t > v0 {
                    lo
                } else {
                    partition_point_near(lo, hi, guess(t), |j| f(j) < t)
                };
                let p_le = if t < v1 {
                    hi
                } else if t >= v0 {
                    lo
                } else {
                    partition_point_near(lo, hi, p_lt, |j| f(j) <= t)
                };
                sc.n_ge[e] += p_lt - lo;
                sc.n_gt[e] += p_le - lo;
            }
        }
    }
    let mut touched = false;
    for (slot, &(l, h)) in out.iter_mut().zip(&bands.bands) {
        *slot = sc.n_ge[l].saturating_sub(sc.n_gt[h]) as u32;
        let (tl, th) = (bands.edges[l], bands.edges[h]);
        touched |= *slot > 0 && ((tl <= first && first <= th) || (tl <= last && last <= th));
    }
    touched
}

/// Band counts for all `(row, a_k)` cells, laid out `[row][k][band]`.
struct CellTable {
    counts: Vec<u32>,
    n_bands: usize,
    touched: usize,
}

fn cell_table(rows: &[DesignRow], grid: &CoefficientGrid, gs: &GridSpec, bands: &Bands) -> CellTable {
    let betas: Vec<Vec<f64>> = (0..gs.k_a).map(|k| grid.interpolate(gs.a_at(k))).collect();
    let nb = bands.bands.len();
    let per_row: Vec<(Vec<u32>, usize)> = rows
        .par_iter()
        .map(|row| {
            let mut c = vec![0u32; gs.k_a * nb];
            let mut touched = 0;
            let mut sc = Scratch::default();
            let mut segs = Vec::new();
            // Without powers the cuts sit at the knots and do not depend on
            // the level.
            let fixed = row.numeraire_degree <= 1;
            if fixed {
                monotone_segments(row, &betas[0], gs, &mut segs);
            }
            for (k, beta) in betas.iter().enumerate() {
                if !fixed {
                    monotone_segments(row, beta, gs, &mut segs);
                }
                touched += cell_counts(row, beta, gs, bands, &segs, &mut c[k * nb..(k + 1) * nb], &mut sc) as usize;
            }
            (c, touched)
        })
        .collect();
    let touched = per_row.iter().map(|(_, t)| t).sum();
    CellTable {
        counts: per_row.into_iter().flat_map(|(c, _)| c).collect(),
        n_bands: nb,
        touched,
    }
}

/// Weighted histogram of counts per band: `hist[b][count]`.
fn histograms(table: &CellTable, weights: Option<&[f64]>, gs: &GridSpec) -> (Vec<Vec<f64>>, f64) {
    let nb = table.n_bands;
    let mut hist = vec![vec![0.0; gs.k_s + 1]; nb];
    let cells_per_row = gs.k_a * nb;
    let n_rows = table.counts.len() / cells_per_row.max(1);
    let mut total = 0.0;
    for r in 0..n_rows {
        let w = weights.map_or(1.0, |w| w[r]);
        total += w;
        let cells = &table.counts[r * cells_per_row..(r + 1) * cells_per_row];
        for k in 0..gs.k_a {
            for b in 0..nb {
                hist[b][cells[k * nb + b] as usize] += w;
            }
        }
    }
    (hist, total * gs.k_a as f64)
}

fn curve_from_hist(hist: &[f64], total: f64, tau: f64, norm: Normalization, gs: &GridSpec) -> Result<CdfCurve> {
    let factor = norm.factor(tau)?;
    let mut cum = Vec::with_capacity(hist.len());
    let mut acc = 0.0;
    for h in hist {
        acc += h;
        cum.push(acc);
    }
    let values = gs
        .y
        .iter()
        .map(|&y| {
            let thr = y * factor;
            // Largest count c with c·δ_s ≤ thr.
            let n = partition_point_near(0, hist.len(), (thr / gs.s_step) as usize, |c| c as f64 * gs.s_step > thr);
            if n == 0 {
                0.0
            } else {
                (cum[n - 1] / total).min(1.0)
            }
        })
        .collect();
    Ok(CdfCurve {
        tau,
        normalization: norm,
        y: gs.y.clone(),
        values,
    })
}

/// `Ĝ_τ` on the y-grid of `gs`.
pub fn estimate_g(
    ds: &Dataset,
    grid: &CoefficientGrid,
    tau: f64,
    cf: &CounterfactualSpec,
    gs: &GridSpec,
    normalization: Normalization,
) -> Result<CdfCurve> {
    let (rows, weights) = cf.resolve(ds, grid.numeraire_degree, &grid.numeraire_knots)?;
    let curves = curves_from_rows(&rows, weights.as_deref(), grid, &[tau], gs, normalization)?;
    Ok(curves.curves.into_iter().next().expect("one curve"))
}

struct RowCurves {
    curves: Vec<CdfCurve>,
    hist: Vec<Vec<f64>>,
    total: f64,
    touched: usize,
    cells: usize,
}

fn curves_from_rows(
    rows: &[DesignRow],
    weights: Option<&[f64]>,
    grid: &CoefficientGrid,
    taus: &[f64],
    gs: &GridSpec,
    norm: Normalization,
) -> Result<RowCurves> {
    gs.validate()?;
    if rows.is_empty() {
        return Err(Error::Empty("scenario set"));
    }
    if let Some(r) = rows.iter().find(|r| r.regressors.len() != grid.n_cols()) {
        return Err(Error::DimensionMismatch {
            expected: grid.n_cols(),
            got: r.regressors.len(),
        });
    }
    let bands = Bands::new(taus, grid.outcome_transform)?;
    let table = cell_table(rows, grid, gs, &bands);
    let (hist, total) = histograms(&table, weights, gs);
    let curves = taus
        .iter()
        .zip(&hist)
        .map(|(&t, h)| curve_from_hist(h, total, t, norm, gs))
        .collect::<Result<_>>()?;
    Ok(RowCurves {
        curves,
        hist,
        total,
        touched: table.touched,
        cells: rows.len() * gs.k_a,
    })
}

/// `F_Q(s; τ)`: share of `(w, a)` cells whose predicted quantile at
/// `t(s, w)` is at most `1 − τ`.
pub fn estimate_fq(
    ds: &Dataset,
    grid: &CoefficientGrid,
    tau: f64,
    s: f64,
    cf: &CounterfactualSpec,
    gs: &GridSpec,
) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau = {tau} outside (0, 1)")));
    }
    let (rows, weights) = cf.resolve(ds, grid.numeraire_degree, &grid.numeraire_knots)?;
    let betas: Vec<Vec<f64>> = (0..gs.k_a).map(|k| grid.interpolate(gs.a_at(k))).collect();
    let mut total = 0.0;
    let mut acc = 0.0;
    for (r, row) in rows.iter().enumerate() {
        let w = weights.as_ref().map_or(1.0, |w| w[r]);
        let shifted = shift_numeraire(row, s);
        let hits = betas
            .iter()
            .filter(|b| grid.outcome_transform.to_prob(shifted.dot(b)) <= 1.0 - tau)
            .count();
        acc += w * hits as f64;
        total += w * gs.k_a as f64;
    }
    Ok(acc / total)
}

/// `F_Q(·; τ)` over the given shifts, monotonized by sorting.
pub fn estimate_fq_curve(
    ds: &Dataset,
    grid: &CoefficientGrid,
    tau: f64,
    shifts: &[f64],
    cf: &CounterfactualSpec,
    gs: &GridSpec,
) -> Result<Vec<f64>> {
    let mut v = shifts
        .par_iter()
        .map(|&s| estimate_fq(ds, grid, tau, s, cf, gs))
        .collect::<Result<Vec<f64>>>()?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// How the s-grid is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SGridSpec {
    /// Symmetric, wide enough to contain the band crossings of the
    /// original sample.
    Auto { half_points: usize },
    Range { lo: f64, hi: f64, step: f64 },
}

/// How the y-grid is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum YGridSpec {
    /// Evenly spaced quantiles of the pooled normalized `Â` of the original
    /// sample (`n` points from `1/(n+1)` to `n/(n+1)`).
    Quantiles { n: usize },
    Explicit { values: Vec<f64> },
}

/// Everything needed to turn a dataset into curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveConfig {
    pub taus: Vec<f64>,
    pub levels: Vec<f64>,
    pub outcome_transform: OutcomeTransform,
    pub normalization: Normalization,
    pub numeraire_degree: usize,
    /// Hinge knots `(Δn − k)₊` added to the design.
    pub numeraire_knots: Vec<f64>,
    pub k_a: usize,
    pub s_grid: SGridSpec,
    pub y_grid: YGridSpec,
    #[serde(skip)]
    pub counterfactual: CounterfactualSpec,
}

pub const DEFAULT_TAUS: [f64; 4] = [0.1, 0.25, 0.75, 0.9];

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig {
            taus: DEFAULT_TAUS.to_vec(),
            levels: crate::quantreg::default_levels(),
            outcome_transform: OutcomeTransform::default(),
            normalization: Normalization::Logistic,
            numeraire_degree: 1,
            numeraire_knots: Vec::new(),
            k_a: 100,
            s_grid: SGridSpec::Auto { half_points: 2000 },
            y_grid: YGridSpec::Quantiles { n: 19 },
            counterfactual: CounterfactualSpec::Observed,
        }
    }
}

impl CurveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::InvalidConfig("empty tau set".into()));
        }
        for &t in &self.taus {
            check_tau(t)?;
        }
        if self.taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("taus must be strictly increasing".into()));
        }
        if !(1..=3).contains(&self.numeraire_degree) {
            return Err(Error::InvalidConfig("numeraire degree must be 1, 2 or 3".into()));
        }
        if self.numeraire_knots.iter().any(|k| !k.is_finite())
            || self.numeraire_knots.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::InvalidConfig("knots must be finite and strictly increasing".into()));
        }
        if self.k_a == 0 {
            return Err(Error::InvalidConfig("a-grid needs at least one point".into()));
        }
        match &self.s_grid {
            SGridSpec::Auto { half_points } if *half_points == 0 => {
                return Err(Error::InvalidConfig("s-grid needs points".into()))
            }
            SGridSpec::Range { lo, hi, step } if !(*step > 0.0 && hi >= lo) => {
                return Err(Error::InvalidConfig(format!("bad s-grid {lo},{hi},{step}")))
            }
            _ => {}
        }
        match &self.y_grid {
            YGridSpec::Quantiles { n } if *n == 0 => {
                return Err(Error::InvalidConfig("y-grid needs points".into()))
            }
            YGridSpec::Explicit { values } if values.is_empty() => {
                return Err(Error::InvalidConfig("y-grid needs points".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Curves from the original sample together with the frozen grids.
#[derive(Debug, Clone)]
pub struct CurveEstimate {
    pub grid: CoefficientGrid,
    pub gs: GridSpec,
    pub curves: Vec<CdfCurve>,
    pub warnings: Vec<String>,
}

/// Fits the quantile-regression grid of `ds` under `cfg`.
pub fn fit_grid(ds: &Dataset, cfg: &CurveConfig, warm: Option<&CoefficientGrid>) -> Result<CoefficientGrid> {
    let design = build_design_with_basis(ds, cfg.numeraire_degree, &cfg.numeraire_knots);
    let y = outcomes(ds, cfg.outcome_transform);
    fit_qr_grid_warm(&design, &y, &cfg.levels, cfg.outcome_transform, warm)
}

/// Symmetric s-range containing the band crossings of the original fit.
/// Closed form for a straight line in `Δn`; otherwise the range doubles
/// until no band set reaches the grid ends. Returns whether the cap bound.
fn auto_s_max(rows: &[DesignRow], grid: &CoefficientGrid, k_a: usize, taus: &[f64], half: usize) -> Result<(f64, bool)> {
    let spread = rows
        .iter()
        .map(|r| r.numeraire_diff().abs())
        .fold(0.0, f64::max)
        .max(1e-8);
    let cap = 50.0 * spread;
    let bands = Bands::new(taus, grid.outcome_transform)?;
    let straight = rows
        .first()
        .is_some_and(|r| r.numeraire_degree == 1 && r.numeraire_knots.is_empty());
    if straight {
        let mut s_max = 0.0f64;
        for k in 0..k_a {
            let beta = grid.interpolate((k as f64 + 0.5) / k_a as f64);
            let slope = beta[1];
            if slope == 0.0 {
                continue;
            }
            for r in rows {
                let l0 = r.dot(&beta);
                for &t in &bands.edges {
                    // l0 − slope·s = t
                    s_max = s_max.max(((l0 - t) / slope).abs());
                }
            }
        }
        let s_max = 1.05 * s_max.max(spread);
        return Ok(if s_max > cap { (cap, true) } else { (s_max, false) });
    }
    let stride = (rows.len() / 500).max(1);
    let sample: Vec<DesignRow> = rows.iter().step_by(stride).cloned().collect();
    let mut s_max = 2.0 * spread;
    loop {
        let gs = GridSpec::symmetric(k_a, s_max, half.min(500), Vec::new());
        if cell_table(&sample, grid, &gs, &bands).touched == 0 {
            return Ok((s_max, false));
        }
        if s_max >= cap {
            return Ok((cap, true));
        }
        s_max = (2.0 * s_max).min(cap);
    }
}

/// Weighted lower quantile of `(value, weight)` pairs sorted by value.
fn pooled_quantile(sorted: &[(f64, f64)], total: f64, q: f64) -> usize {
    let target = q * total;
    let mut acc = 0.0;
    for (i, (_, w)) in sorted.iter().enumerate() {
        acc += w;
        if acc >= target * (1.0 - 1e-12) {
            return i;
        }
    }
    sorted.len() - 1
}

/// y-grid at quantiles of the pooled normalized `Â`, each point moved to
/// the midpoint with the next distinct pooled value so it never sits on an
/// atom.
fn quantile_y_grid(hist: &[Vec<f64>], taus: &[f64], norm: Normalization, s_step: f64, n: usize) -> Result<Vec<f64>> {
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    for (h, &t) in hist.iter().zip(taus) {
        let f = norm.factor(t)?;
        pooled.extend(
            h.iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(c, w)| (c as f64 * s_step / f, *w)),
        );
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pooled.iter().map(|p| p.1).sum();
    let mut y = Vec::with_capacity(n);
    for i in 1..=n {
        let q = i as f64 / (n + 1) as f64;
        let idx = pooled_quantile(&pooled, total, q);
        let v = pooled[idx].0;
        let next = pooled[idx..].iter().map(|p| p.0).find(|&x| x > v);
        let point = match next {
            Some(nx) => 0.5 * (v + nx),
            None => v + 0.5 * s_step,
        };
        if y.last().is_none_or(|&last| point > last) {
            y.push(point);
        }
    }
    Ok(y)
}

/// Estimates the curves on the original sample and freezes the grids.
pub fn estimate_curves(ds: &Dataset, cfg: &CurveConfig) -> Result<CurveEstimate> {
    cfg.validate()?;
    let grid = fit_grid(ds, cfg, None)?;
    let (rows, weights) = cfg.counterfactual.resolve(ds, cfg.numeraire_degree, &cfg.numeraire_knots)?;
    let mut warnings = Vec::new();
    if !grid.all_converged {
        warnings.push("a quantile regression stopped at the iteration limit".to_string());
    }
    let mut gs = match cfg.s_grid {
        SGridSpec::Auto { half_points } => {
            let (s_max, capped) = auto_s_max(&rows, &grid, cfg.k_a, &cfg.taus, half_points)?;
            if capped {
                warnings.push(format!(
                    "some band crossings lie beyond the s-grid cap {s_max:.4}; Â truncated there"
                ));
            }
            GridSpec::symmetric(cfg.k_a, s_max, half_points, Vec::new())
        }
        SGridSpec::Range { lo, hi, step } => GridSpec::from_range(cfg.k_a, lo, hi, step, Vec::new())?,
    };
    let provisional = match &cfg.y_grid {
        YGridSpec::Explicit { values } => values.clone(),
        YGridSpec::Quantiles { .. } => vec![0.0],
    };
    gs.y = provisional;
    let first = curves_from_rows(&rows, weights.as_deref(), &grid, &cfg.taus, &gs, cfg.normalization)?;
    if first.touched > 0 {
        warnings.push(format!(
            "{} of {} (scenario, level) cells have band sets reaching the s-grid ends",
            first.touched, first.cells
        ));
    }
    let curves = match &cfg.y_grid {
        YGridSpec::Explicit { .. } => first.curves,
        YGridSpec::Quantiles { n } => {
            gs.y = quantile_y_grid(&first.hist, &cfg.taus, cfg.normalization, gs.s_step, *n)?;
            if gs.y.len() < *n {
                warnings.push(format!(
                    "pooled Â has few distinct values; y-grid has {} points",
                    gs.y.len()
                ));
            }
            cfg.taus
                .iter()
                .zip(&first.hist)
                .map(|(&t, h)| curve_from_hist(h, first.total, t, cfg.normalization, &gs))
                .collect::<Result<_>>()?
        }
    };
    Ok(CurveEstimate {
        grid,
        gs,
        curves,
        warnings,
    })
}

/// Re-estimates curves on a (resampled) dataset with frozen grids.
pub fn estimate_curves_frozen(
    ds: &Dataset,
    cfg: &CurveConfig,
    gs: &GridSpec,
    warm: Option<&CoefficientGrid>,
) -> Result<Vec<CdfCurve>> {
    let grid = fit_grid(ds, cfg, warm)?;
    let (rows, weights) = cfg.counterfactual.resolve(ds, cfg.numeraire_degree, &cfg.numeraire_knots)?;
    Ok(curves_from_rows(&rows, weights.as_deref(), &grid, &cfg.taus, gs, cfg.normalization)?.curves)
}

/// Runs `f` on `b` block-bootstrap resamples in parallel, in replicate
/// order. Fails when more than 10% of replicates fail.
pub fn bootstrap_replicates<T: Send>(
    ds: &Dataset,
    b: usize,
    seed: u64,
    purpose: Purpose,
    f: impl Fn(&Dataset) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, purpose, i as u64);
            let resample = block_resample(ds, &mut rng);
            f(&resample)
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed * 10 > b {
        return Err(Error::BootstrapFailure { failed, total: b });
    }
    Ok(results.into_iter().filter_map(|r| r.ok()).collect())
}

/// Pointwise percentile bands for one curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub tau: f64,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub replicates: usize,
}

/// Linear-interpolation sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bands from replicate curves, widened to contain `estimate`
/// and monotonized so each band is a CDF envelope.
pub fn bands_from_replicates(estimate: &CdfCurve, reps: &[&CdfCurve], level: f64) -> Band {
    let n = estimate.values.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        let mut col: Vec<f64> = reps.iter().map(|c| c.values[i]).collect();
        col.sort_by(f64::total_cmp);
        let est = estimate.values[i];
        lower[i] = sorted_quantile(&col, (1.0 - level) / 2.0).min(est);
        upper[i] = sorted_quantile(&col, (1.0 + level) / 2.0).max(est);
    }
    for i in 1..n {
        lower[i] = lower[i].max(lower[i - 1]);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        upper[i] = upper[i].min(upper[i + 1]);
    }
    Band {
        tau: estimate.tau,
        level,
        lower,
        upper,
        replicates: reps.len(),
    }
}

/// Bootstrap bands for every curve of `est` (full refit per replicate).
pub fn bootstrap_bands(
    ds: &Dataset,
    cfg: &CurveConfig,
    est: &CurveEstimate,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<Band>> {
    if b < 2 {
        return Err(Error::InvalidConfig("bootstrap bands need B >= 2".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("band level {level} outside (0, 1)")));
    }
    let reps = bootstrap_replicates(ds, b, seed, Purpose::Bands, |r| {
        estimate_curves_frozen(r, cfg, &est.gs, Some(&est.grid))
    })?;
    Ok(est
        .curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let col: Vec<&CdfCurve> = reps.iter().map(|r| &r[i]).collect();
            bands_from_replicates(c, &col, level)
        })
        .collect())
}

/// Writes `tau,y,value,lower,upper` rows (bands empty when absent).
pub fn write_curves_csv(path: &Path, curves: &[CdfCurve], bands: Option<&[Band]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["tau", "y", "value", "lower", "upper"])?;
    for (i, c) in curves.iter().enumerate() {
        for (j, (y, v)) in c.y.iter().zip(&c.values).enumerate() {
            let (lo, up) = match bands {
                Some(b) => (b[i].lower[j].to_string(), b[i].upper[j].to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([c.tau.to_string(), y.to_string(), v.to_string(), lo, up])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// JSON document with the curves, bands and frozen grids.
#[derive(Debug, Clone, Serialize)]
pub struct CurvesDocument<'a> {
    pub grid_spec: &'a GridSpec,
    pub counterfactual: &'static str,
    pub curves: &'a [CdfCurve],
    pub bands: Option<&'a [Band]>,
}

impl<'a> CurvesDocument<'a> {
    pub fn new(est: &'a CurveEstimate, cfg: &CurveConfig, bands: Option<&'a [Band]>) -> Self {
        CurvesDocument {
            grid_spec: &est.gs,
            counterfactual: cfg.counterfactual.mode(),
            curves: &est.curves,
            bands,
        }
    }
}
