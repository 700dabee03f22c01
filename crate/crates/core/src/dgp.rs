//! Synthetic stated-choice data from random-coefficient models, with analytic
//! oracles for the distributions the estimator targets.
//!
//! Respondent `i` has ex ante return `S = Δy + Δx·slopes_i + σ_i ν₀`, where
//! `ν₀` has a standardized distribution with median zero, and states
//! `P = Pr(S ≥ 0 | η_i)`. Scenario attributes are drawn independently of
//! `(σ_i, slopes_i)`.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, NumeraireTransform, Observation, Schema};
use crate::error::{Error, Result};
use crate::iqr::{ell, Normalization};
use crate::rng::{substream, Purpose};

/// Standardized shape of the resolvable uncertainty `ν₀` (median zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Standard logistic: differences of two EV1 shocks.
    Logistic,
    Normal,
    /// Uniform on `[-1, 1]`, so the half-width equals the scale.
    Uniform,
    /// `E − ln 2` with `E ~ Exp(1)`.
    ShiftedExponential,
}

impl Family {
    pub fn cdf(self, x: f64) -> f64 {
        match self {
            Family::Logistic => 1.0 / (1.0 + (-x).exp()),
            Family::Normal => std_normal().cdf(x),
            Family::Uniform => ((x + 1.0) / 2.0).clamp(0.0, 1.0),
            Family::ShiftedExponential => {
                let z = x + std::f64::consts::LN_2;
                if z <= 0.0 {
                    0.0
                } else {
                    1.0 - (-z).exp()
                }
            }
        }
    }

    pub fn quantile(self, tau: f64) -> f64 {
        match self {
            Family::Logistic => (tau / (1.0 - tau)).ln(),
            Family::Normal => std_normal().inverse_cdf(tau),
            Family::Uniform => 2.0 * tau - 1.0,
            Family::ShiftedExponential => -(1.0 - tau).ln() - std::f64::consts::LN_2,
        }
    }

    /// `|Q(τ) − Q(0.5)|` for the standardized shock.
    pub fn half_iqr(self, tau: f64) -> f64 {
        (self.quantile(tau) - self.quantile(0.5)).abs()
    }

    /// Stated probability `Pr(c + σ ν₀ ≥ 0)`.
    pub fn stated_prob(self, index: f64, sigma: f64) -> f64 {
        1.0 - self.cdf(-index / sigma)
    }

    fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
        match self {
            Family::Normal => rng.sample(StandardNormal),
            _ => self.quantile(u),
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// A scalar distribution for respondent-level parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarDist {
    Degenerate(f64),
    Uniform { lo: f64, hi: f64 },
    TwoPoint { c1: f64, c2: f64, p: f64 },
    Normal { mean: f64, sd: f64 },
}

impl ScalarDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ScalarDist::Degenerate(c) => c,
            ScalarDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ScalarDist::TwoPoint { c1, c2, p } => {
                if rng.random::<f64>() < p {
                    c1
                } else {
                    c2
                }
            }
            ScalarDist::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ScalarDist::Degenerate(c) => (x >= c) as u8 as f64,
            ScalarDist::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            ScalarDist::TwoPoint { c1, c2, p } => {
                p * (x >= c1) as u8 as f64 + (1.0 - p) * (x >= c2) as u8 as f64
            }
            ScalarDist::Normal { mean, sd } => std_normal().cdf((x - mean) / sd),
        }
    }

    /// A point above (nearly) all of the mass.
    fn upper(&self) -> f64 {
        match *self {
            ScalarDist::Degenerate(c) => c,
            ScalarDist::Uniform { hi, .. } => hi,
            ScalarDist::TwoPoint { c1, c2, .. } => c1.max(c2),
            ScalarDist::Normal { mean, sd } => mean + 4.0 * sd,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            ScalarDist::Degenerate(c) => vec![c],
            ScalarDist::Uniform { lo, hi } => vec![lo, hi],
            ScalarDist::TwoPoint { c1, c2, .. } => vec![c1, c2],
            ScalarDist::Normal { .. } => Vec::new(),
        }
    }

    fn validate_scale(&self) -> Result<()> {
        let ok = match *self {
            ScalarDist::Degenerate(c) => c > 0.0,
            ScalarDist::Uniform { lo, hi } => lo > 0.0 && hi > lo,
            ScalarDist::TwoPoint { c1, c2, p } => c1 > 0.0 && c2 > 0.0 && (0.0..=1.0).contains(&p),
            ScalarDist::Normal { .. } => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "scale distribution {self:?} must have strictly positive support"
            )))
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarDist::Degenerate(c) => c.is_finite(),
            ScalarDist::Uniform { lo, hi } => hi >= lo,
            ScalarDist::TwoPoint { p, .. } => (0.0..=1.0).contains(&p),
            ScalarDist::Normal { sd, .. } => sd >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid distribution {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    None,
    Nearest005,
    Nearest010,
}

impl Rounding {
    pub fn step(self) -> Option<f64> {
        match self {
            Rounding::None => None,
            Rounding::Nearest005 => Some(0.05),
            Rounding::Nearest010 => Some(0.10),
        }
    }

    pub fn apply(self, p: f64) -> f64 {
        match self.step() {
            None => p,
            Some(step) => ((p / step).round() * step).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// Range of the attribute difference `x1 − x0`.
    pub range: [f64; 2],
    /// Distribution of the respondent's slope `β_i/γ_i`.
    pub slope: ScalarDist,
}

/// Data-generating process configuration (a JSON document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_respondents: usize,
    pub scenarios_per_respondent: usize,
    pub family: Family,
    pub sigma: ScalarDist,
    #[serde(default)]
    pub attributes: Vec<AttributeSpec>,
    /// Range of the numeraire difference `y1 − y0`.
    pub numeraire_range: [f64; 2],
    #[serde(default)]
    pub rounding: Rounding,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let spec: DgpSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_respondents == 0 || self.scenarios_per_respondent == 0 {
            return Err(Error::InvalidConfig("empty panel".into()));
        }
        self.sigma.validate_scale()?;
        for a in &self.attributes {
            a.slope.validate()?;
            if a.range[1] < a.range[0] {
                return Err(Error::InvalidConfig(format!("bad range for `{}`", a.name)));
            }
        }
        if self.numeraire_range[1] <= self.numeraire_range[0] {
            return Err(Error::InvalidConfig("numeraire_range must be increasing".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        Schema::new(
            self.attributes.iter().map(|a| a.name.clone()).collect(),
            NumeraireTransform::Level,
        )
    }
}

/// Respondent-level draws, kept for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RespondentTruth {
    pub sigma: f64,
    pub slopes: Vec<f64>,
}

/// Base level of option 0's numeraire in generated files.
const NUMERAIRE_BASE: f64 = 100.0;

pub fn simulate(spec: &DgpSpec) -> Result<Dataset> {
    simulate_with_truth(spec).map(|(ds, _)| ds)
}

pub fn simulate_with_truth(spec: &DgpSpec) -> Result<(Dataset, Vec<RespondentTruth>)> {
    spec.validate()?;
    let mut observations = Vec::with_capacity(spec.n_respondents * spec.scenarios_per_respondent);
    let mut truth = Vec::with_capacity(spec.n_respondents);
    let [ylo, yhi] = spec.numeraire_range;
    for i in 0..spec.n_respondents {
        let mut rng = substream(spec.seed, Purpose::Dgp, i as u64);
        let sigma = spec.sigma.sample(&mut rng);
        let slopes: Vec<f64> = spec.attributes.iter().map(|a| a.slope.sample(&mut rng)).collect();
        for k in 0..spec.scenarios_per_respondent {
            let dy = ylo + (yhi - ylo) * rng.random::<f64>();
            let dx: Vec<f64> = spec
                .attributes
                .iter()
                .map(|a| a.range[0] + (a.range[1] - a.range[0]) * rng.random::<f64>())
                .collect();
            let index = dy + dx.iter().zip(&slopes).map(|(x, b)| x * b).sum::<f64>();
            let prob = spec.rounding.apply(spec.family.stated_prob(index, sigma));
            observations.push(Observation {
                respondent_id: format!("r{i}"),
                scenario_id: format!("{k}"),
                prob,
                numeraire1: NUMERAIRE_BASE + dy,
                numeraire0: NUMERAIRE_BASE,
                attrs1: dx,
                attrs0: vec![0.0; spec.attributes.len()],
            });
        }
        truth.push(RespondentTruth { sigma, slopes });
    }
    Ok((Dataset::new(spec.schema(), observations)?, truth))
}

/// Draws one realization of the uncertainty shock `σ ν₀`, for checks of the
/// stated-probability formula.
pub fn draw_shock<R: Rng + ?Sized>(family: Family, sigma: f64, rng: &mut R) -> f64 {
    sigma * family.sample(rng)
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) || tau == 0.5 {
        return Err(Error::InvalidConfig(format!(
            "oracle undefined at tau = {tau} (need tau in (0,1), tau != 0.5)"
        )));
    }
    Ok(())
}

/// Population CDF `G_τ(y) = Pr(IQR_i(τ, 0.5) ≤ y · n(τ))` where `n` is the
/// normalization. `IQR_i(τ, 0.5) = σ_i |Q_ν₀(τ) − Q_ν₀(0.5)|`.
pub fn oracle_g(spec: &DgpSpec, tau: f64, y: f64, normalization: Normalization) -> Result<f64> {
    check_tau(tau)?;
    let kappa = spec.family.half_iqr(tau);
    let factor = normalization.factor(tau)?;
    Ok(spec.sigma.cdf(y * factor / kappa))
}

/// `sup_y |G_τ(y) − G_{1−τ}(y)|` for `τ < 0.5`.
pub fn oracle_symmetry_gap(spec: &DgpSpec, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if tau > 0.5 {
        return Err(Error::InvalidConfig("symmetry gap needs tau < 0.5".into()));
    }
    let k_lo = spec.family.half_iqr(tau);
    let k_hi = spec.family.half_iqr(1.0 - tau);
    let g = |y: f64, k: f64| spec.sigma.cdf(y / k);
    let mut candidates = Vec::new();
    for b in spec.sigma.breakpoints() {
        candidates.push(b * k_lo);
        candidates.push(b * k_hi);
    }
    if candidates.is_empty() {
        // Smooth scale law: dense scan over the bulk of the support.
        let hi = 10.0 * k_lo.max(k_hi) * (1.0 + spec.sigma.sample(&mut substream(0, Purpose::Dgp, 0)).abs());
        candidates.extend((0..=20_000).map(|i| hi * i as f64 / 20_000.0));
    }
    let gap = candidates
        .iter()
        .flat_map(|&y| [y, y * (1.0 - 1e-12)])
        .map(|y| (g(y, k_lo) - g(y, k_hi)).abs())
        .fold(0.0, f64::max);
    Ok(if gap < 1e-12 { 0.0 } else { gap })
}

/// `n` evenly spaced y values from 0 to a little past the point where every
/// `G_τ` reaches 1.
pub fn oracle_y_grid(spec: &DgpSpec, taus: &[f64], normalization: Normalization, n: usize) -> Result<Vec<f64>> {
    let mut top: f64 = 0.0;
    for &t in taus {
        check_tau(t)?;
        top = top.max(spec.sigma.upper() * spec.family.half_iqr(t) / normalization.factor(t)?);
    }
    let top = 1.2 * top;
    let n = n.max(2);
    Ok((0..n).map(|i| top * i as f64 / (n - 1) as f64).collect())
}

/// `G_τ(y)` for every τ (rows) and y (columns).
pub fn oracle_knots(spec: &DgpSpec, taus: &[f64], ys: &[f64], normalization: Normalization) -> Result<Vec<Vec<f64>>> {
    taus.iter()
        .map(|&t| ys.iter().map(|&y| oracle_g(spec, t, y, normalization)).collect())
        .collect()
}

/// Under the logistic family, `IQR(τ, 0.5) / ℓ(τ)` equals `σ` exactly.
pub fn logistic_normalized_iqr(sigma: f64, tau: f64) -> Result<f64> {
    Ok(sigma * Family::Logistic.half_iqr(tau) / ell(tau)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: Family, sigma: ScalarDist) -> DgpSpec {
        DgpSpec {
            n_respondents: 50,
            scenarios_per_respondent: 4,
            family,
            sigma,
            attributes: vec![AttributeSpec {
                name: "h".into(),
                range: [-2.0, 2.0],
                slope: ScalarDist::Degenerate(0.5),
            }],
            numeraire_range: [-3.0, 3.0],
            rounding: Rounding::None,
            seed: 11,
        }
    }

    #[test]
    fn symmetric_families_give_half_at_zero_index() {
        for f in [Family::Logistic, Family::Normal, Family::Uniform] {
            assert!((f.stated_prob(0.0, 1.7) - 0.5).abs() < 1e-12);
        }
        assert!((Family::ShiftedExponential.stated_prob(0.0, 1.0) - 0.5).abs() < 1e-12);
        assert!((Family::Logistic.stated_prob(3f64.ln(), 1.0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn stated_prob_matches_shock_simulation() {
        let mut rng = substream(5, Purpose::Dgp, 99);
        for f in [Family::Logistic, Family::Normal, Family::Uniform, Family::ShiftedExponential] {
            let c = 0.4;
            let n = 200_000;
            let hits = (0..n).filter(|_| c + draw_shock(f, 1.3, &mut rng) >= 0.0).count();
            let mc = hits as f64 / n as f64;
            assert!((mc - f.stated_prob(c, 1.3)).abs() < 0.005, "{f:?}: {mc}");
        }
    }

    #[test]
    fn rounding_postconditions() {
        let mut s = spec(Family::Logistic, ScalarDist::Degenerate(1.0));
        s.rounding = Rounding::Nearest010;
        let ds = simulate(&s).unwrap();
        for p in ds.probs() {
            assert!(((p * 10.0) - (p * 10.0).round()).abs() < 1e-9);
        }
        for p in [0.0, 0.04, 0.26, 0.5, 0.949, 1.0] {
            for r in [Rounding::Nearest005, Rounding::Nearest010] {
                assert!((r.apply(p) - p).abs() <= r.step().unwrap() / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn panel_structure_and_ranges() {
        let s = spec(Family::Uniform, ScalarDist::Uniform { lo: 0.5, hi: 1.5 });
        let (ds, truth) = simulate_with_truth(&s).unwrap();
        assert_eq!(ds.n_respondents(), 50);
        assert_eq!(ds.len(), 200);
        assert!(ds.probs().iter().all(|p| (0.0..=1.0).contains(p)));
        for (resp, t) in ds.respondents().iter().zip(&truth) {
            for o in &ds.observations()[resp.rows.clone()] {
                let index = (o.numeraire1 - o.numeraire0) + o.attrs1[0] * t.slopes[0];
                assert!((o.prob - Family::Uniform.stated_prob(index, t.sigma)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attributes_independent_of_scale() {
        let mut s = spec(Family::Logistic, ScalarDist::Uniform { lo: 0.5, hi: 1.5 });
        s.n_respondents = 10_000;
        s.scenarios_per_respondent = 1;
        let (ds, truth) = simulate_with_truth(&s).unwrap();
        let dy: Vec<f64> = ds.observations().iter().map(|o| o.numeraire1 - o.numeraire0).collect();
        let sg: Vec<f64> = truth.iter().map(|t| t.sigma).collect();
        let n = dy.len() as f64;
        let (my, ms) = (dy.iter().sum::<f64>() / n, sg.iter().sum::<f64>() / n);
        let cov: f64 = dy.iter().zip(&sg).map(|(a, b)| (a - my) * (b - ms)).sum::<f64>() / n;
        let vy = dy.iter().map(|a| (a - my).powi(2)).sum::<f64>() / n;
        let vs = sg.iter().map(|a| (a - ms).powi(2)).sum::<f64>() / n;
        let corr = cov / (vy * vs).sqrt();
        assert!(corr.abs() <= 0.03, "{corr}");
    }

    #[test]
    fn logistic_normalized_iqr_is_sigma() {
        for k in 1..=9 {
            let tau = k as f64 / 10.0;
            if k == 5 {
                continue;
            }
            let v = logistic_normalized_iqr(1.37, tau).unwrap();
            assert!((v - 1.37).abs() < 1e-14, "{tau}: {v}");
        }
    }

    #[test]
    fn oracle_examples() {
        let s = spec(Family::Logistic, ScalarDist::Degenerate(1.0));
        for tau in [0.1, 0.25, 0.75, 0.9] {
            assert_eq!(oracle_g(&s, tau, 0.999, Normalization::Logistic).unwrap(), 0.0);
            assert_eq!(oracle_g(&s, tau, 1.0 + 1e-9, Normalization::Logistic).unwrap(), 1.0);
        }
        let two = spec(Family::Logistic, ScalarDist::TwoPoint { c1: 1.0, c2: 2.0, p: 0.5 });
        assert_eq!(oracle_g(&two, 0.75, 1.5, Normalization::Logistic).unwrap(), 0.5);

        let normal = spec(Family::Normal, ScalarDist::Degenerate(1.0));
        let step = 0.674_489_750_196_081_7 / 3f64.ln();
        assert_eq!(oracle_g(&normal, 0.75, step - 1e-6, Normalization::Logistic).unwrap(), 0.0);
        assert_eq!(oracle_g(&normal, 0.75, step + 1e-6, Normalization::Logistic).unwrap(), 1.0);
        assert!((step - 0.614).abs() < 1e-3);
        assert!(oracle_g(&s, 0.5, 1.0, Normalization::Logistic).is_err());
    }

    #[test]
    fn symmetry_gaps() {
        for f in [Family::Logistic, Family::Normal, Family::Uniform] {
            let s = spec(f, ScalarDist::Uniform { lo: 0.5, hi: 1.5 });
            assert_eq!(oracle_symmetry_gap(&s, 0.25).unwrap(), 0.0, "{f:?}");
        }
        let s = spec(Family::ShiftedExponential, ScalarDist::Degenerate(1.0));
        assert_eq!(oracle_symmetry_gap(&s, 0.25).unwrap(), 1.0);
        let s = spec(Family::ShiftedExponential, ScalarDist::Uniform { lo: 0.5, hi: 1.5 });
        assert!(oracle_symmetry_gap(&s, 0.25).unwrap() > 0.0);
    }

    #[test]
    fn shifted_exponential_iqrs_by_brute_force() {
        // Independent check: invert the CDF by bisection.
        let f = Family::ShiftedExponential;
        let q = |tau: f64| {
            let (mut lo, mut hi) = (-10.0, 50.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f.cdf(mid) < tau {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            0.5 * (lo + hi)
        };
        let upper = q(0.75) - q(0.5);
        let lower = q(0.5) - q(0.25);
        assert!((upper - 2f64.ln()).abs() < 1e-9);
        assert!((lower - 1.5f64.ln()).abs() < 1e-9);
        assert!((f.half_iqr(0.75) - upper).abs() < 1e-9);
        assert!((f.half_iqr(0.25) - lower).abs() < 1e-9);
    }
}
