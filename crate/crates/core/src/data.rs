//! Stated-choice survey data: ingestion, validation, differenced design rows,
//! the numeraire shift and respondent-level block resampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the numeraire enters the differenced design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NumeraireTransform {
    #[default]
    Level,
    Log,
}

impl NumeraireTransform {
    pub fn apply(self, value: f64) -> f64 {
        match self {
            NumeraireTransform::Level => value,
            NumeraireTransform::Log => value.ln(),
        }
    }
}

/// Column schema, read from the JSON schema document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<String>,
    #[serde(default)]
    pub numeraire_transform: NumeraireTransform,
    #[serde(default = "default_prob_scale")]
    pub prob_scale: f64,
}

fn default_prob_scale() -> f64 {
    1.0
}

impl Schema {
    pub fn new(attributes: Vec<String>, numeraire_transform: NumeraireTransform) -> Self {
        Schema {
            attributes,
            numeraire_transform,
            prob_scale: 1.0,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prob_scale != 1.0 && self.prob_scale != 100.0 {
            return Err(Error::InvalidConfig(format!(
                "prob_scale must be 1 or 100, got {}",
                self.prob_scale
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for a in &self.attributes {
            if !seen.insert(a) {
                return Err(Error::InvalidConfig(format!("duplicate attribute `{a}`")));
            }
        }
        Ok(())
    }
}

/// One answered scenario: the stated probability of choosing option 1 over
/// option 0 and both options' numeraire and attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub respondent_id: String,
    pub scenario_id: String,
    pub prob: f64,
    pub numeraire1: f64,
    pub numeraire0: f64,
    pub attrs1: Vec<f64>,
    pub attrs0: Vec<f64>,
}

/// A validated panel of observations, stored grouped by respondent.
///
/// Respondents appear in order of first appearance in the source; within a
/// respondent the source order is kept. Each respondent owns a contiguous
/// range of `observations`, so the respondent index is a partition of the
/// rows by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    schema: Schema,
    respondents: Vec<Respondent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Respondent {
    pub id: String,
    pub rows: Range<usize>,
}

impl Dataset {
    /// Groups and validates observations. Probabilities must already be on
    /// the unit scale.
    pub fn new(schema: Schema, observations: Vec<Observation>) -> Result<Self> {
        schema.validate()?;
        if observations.is_empty() {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        let k = schema.attributes.len();
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<Observation>> = HashMap::new();
        for (i, obs) in observations.into_iter().enumerate() {
            if !(0.0..=1.0).contains(&obs.prob) || obs.prob.is_nan() {
                return Err(Error::ProbabilityOutOfRange {
                    line: i as u64 + 1,
                    value: obs.prob,
                });
            }
            if obs.attrs1.len() != k || obs.attrs0.len() != k {
                return Err(Error::InvalidDataset(format!(
                    "observation {} has {}/{} attributes, schema has {k}",
                    i + 1,
                    obs.attrs1.len(),
                    obs.attrs0.len()
                )));
            }
            if schema.numeraire_transform == NumeraireTransform::Log
                && (obs.numeraire1 <= 0.0 || obs.numeraire0 <= 0.0)
            {
                return Err(Error::NonPositiveNumeraire {
                    line: i as u64 + 1,
                    value: obs.numeraire1.min(obs.numeraire0),
                });
            }
            if !obs.numeraire1.is_finite() || !obs.numeraire0.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "observation {} has a non-finite numeraire",
                    i + 1
                )));
            }
            let entry = groups.entry(obs.respondent_id.clone()).or_default();
            if entry.is_empty() {
                order.push(obs.respondent_id.clone());
            }
            entry.push(obs);
        }
        let mut grouped = Vec::new();
        let mut respondents = Vec::with_capacity(order.len());
        for id in order {
            let rows = groups.remove(&id).unwrap_or_default();
            let start = grouped.len();
            grouped.extend(rows);
            respondents.push(Respondent {
                id,
                rows: start..grouped.len(),
            });
        }
        Ok(Dataset {
            observations: grouped,
            schema,
            respondents,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn respondents(&self) -> &[Respondent] {
        &self.respondents
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.prob).collect()
    }

    /// Writes the dataset in the standard long CSV layout.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec![
            "respondent_id".to_string(),
            "scenario_id".into(),
            "prob".into(),
            "num1".into(),
            "num0".into(),
        ];
        for a in &self.schema.attributes {
            header.push(format!("x1_{a}"));
            header.push(format!("x0_{a}"));
        }
        w.write_record(&header)?;
        for o in &self.observations {
            let mut rec = vec![
                o.respondent_id.clone(),
                o.scenario_id.clone(),
                o.prob.to_string(),
                o.numeraire1.to_string(),
                o.numeraire0.to_string(),
            ];
            for (a1, a0) in o.attrs1.iter().zip(&o.attrs0) {
                rec.push(a1.to_string());
                rec.push(a0.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}

/// Loads and validates a long-format CSV. `prob_scale` (1 or 100) is taken
/// from the schema; probabilities are divided by it before range checks.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let c_resp = col("respondent_id")?;
    let c_scen = col("scenario_id")?;
    let c_prob = col("prob")?;
    let c_num1 = col("num1")?;
    let c_num0 = col("num0")?;
    let attr_cols: Vec<(usize, usize)> = schema
        .attributes
        .iter()
        .map(|a| Ok((col(&format!("x1_{a}"))?, col(&format!("x0_{a}"))?)))
        .collect::<Result<_>>()?;

    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    line,
                    column: headers.get(idx).unwrap_or("?").to_string(),
                    value: raw.to_string(),
                })
        };
        let prob = num(c_prob)? / schema.prob_scale;
        if !(0.0..=1.0).contains(&prob) {
            return Err(Error::ProbabilityOutOfRange { line, value: prob });
        }
        let numeraire1 = num(c_num1)?;
        let numeraire0 = num(c_num0)?;
        if schema.numeraire_transform == NumeraireTransform::Log {
            for v in [numeraire1, numeraire0] {
                if v <= 0.0 {
                    return Err(Error::NonPositiveNumeraire { line, value: v });
                }
            }
        }
        let mut attrs1 = Vec::with_capacity(attr_cols.len());
        let mut attrs0 = Vec::with_capacity(attr_cols.len());
        for &(c1, c0) in &attr_cols {
            attrs1.push(num(c1)?);
            attrs0.push(num(c0)?);
        }
        observations.push(Observation {
            respondent_id: record.get(c_resp).unwrap_or("").to_string(),
            scenario_id: record.get(c_scen).unwrap_or("").to_string(),
            prob,
            numeraire1,
            numeraire0,
            attrs1,
            attrs0,
        });
    }
    if observations.is_empty() {
        return Err(Error::InvalidDataset("file has no data rows".into()));
    }
    let mut schema = schema.clone();
    schema.prob_scale = 1.0;
    let mut ds = Dataset::new(schema.clone(), observations)?;
    ds.schema = schema;
    Ok(ds)
}

/// One differenced regressor vector
/// `[1, Δn, Δn^2.., (Δn − k₁)₊.., Δattrs..]` where `Δn` is the difference of
/// the (transformed) numeraire.
///
/// With `numeraire_degree = 1` and no knots (the default) the layout is
/// exactly `[1, Δn, Δattrs..]`. Powers and hinge terms follow `Δn`; the
/// shift acts on `Δn` and recomputes them.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub regressors: Vec<f64>,
    pub numeraire_coord: usize,
    pub numeraire_degree: usize,
    pub numeraire_knots: Vec<f64>,
}

impl DesignRow {
    pub fn numeraire_diff(&self) -> f64 {
        self.regressors[self.numeraire_coord]
    }

    pub fn dot(&self, beta: &[f64]) -> f64 {
        self.regressors.iter().zip(beta).map(|(x, b)| x * b).sum()
    }
}

/// Counterfactual shift `t(s, w)`: lowers option 1's (transformed) numeraire
/// by `s`, i.e. decreases the numeraire difference by `s`.
pub fn shift_numeraire(row: &DesignRow, s: f64) -> DesignRow {
    let mut out = row.clone();
    let c = row.numeraire_coord;
    let base = row.regressors[c] - s;
    let mut pow = base;
    for d in 0..row.numeraire_degree {
        out.regressors[c + d] = pow;
        pow *= base;
    }
    for (j, k) in row.numeraire_knots.iter().enumerate() {
        out.regressors[c + row.numeraire_degree + j] = (base - k).max(0.0);
    }
    out
}

/// Column names of a design built from `schema` at the given numeraire degree.
pub fn design_names(schema: &Schema, numeraire_degree: usize, knots: &[f64]) -> Vec<String> {
    let mut names = vec!["intercept".to_string(), "numeraire".to_string()];
    for d in 2..=numeraire_degree {
        names.push(format!("numeraire^{d}"));
    }
    for k in knots {
        names.push(format!("numeraire>{k}"));
    }
    names.extend(schema.attributes.iter().cloned());
    names
}

/// The regression-ready design: one [`DesignRow`] per observation plus the
/// column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub rows: Vec<DesignRow>,
}

impl Design {
    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row-major copy of the regressors.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.regressors.iter().copied()).collect()
    }

    pub fn subset(&self, rows: Range<usize>) -> Design {
        Design {
            names: self.names.clone(),
            rows: self.rows[rows].to_vec(),
        }
    }
}

pub fn build_design(ds: &Dataset) -> Design {
    build_design_with_degree(ds, 1)
}

pub fn build_design_with_degree(ds: &Dataset, numeraire_degree: usize) -> Design {
    build_design_with_basis(ds, numeraire_degree, &[])
}

/// Design with powers of the numeraire difference up to `numeraire_degree`
/// and hinge terms `(Δn − k)₊` at `knots`.
pub fn build_design_with_basis(ds: &Dataset, numeraire_degree: usize, knots: &[f64]) -> Design {
    let degree = numeraire_degree.max(1);
    let t = ds.schema.numeraire_transform;
    let rows = ds
        .observations
        .iter()
        .map(|o| {
            let dn = t.apply(o.numeraire1) - t.apply(o.numeraire0);
            let mut regressors = Vec::with_capacity(1 + degree + knots.len() + o.attrs1.len());
            regressors.push(1.0);
            let mut pow = dn;
            for _ in 0..degree {
                regressors.push(pow);
                pow *= dn;
            }
            regressors.extend(knots.iter().map(|k| (dn - k).max(0.0)));
            regressors.extend(o.attrs1.iter().zip(&o.attrs0).map(|(a, b)| a - b));
            DesignRow {
                regressors,
                numeraire_coord: 1,
                numeraire_degree: degree,
                numeraire_knots: knots.to_vec(),
            }
        })
        .collect();
    Design {
        names: design_names(&ds.schema, degree, knots),
        rows,
    }
}

/// Respondent-level block bootstrap: draws as many respondents as the input
/// has, with replacement, copying all their rows. Drawn respondents are
/// relabelled `<id>#<draw>` so that duplicates stay distinct.
pub fn block_resample<R: Rng + ?Sized>(ds: &Dataset, rng: &mut R) -> Dataset {
    let n = ds.respondents.len();
    let mut observations = Vec::with_capacity(ds.observations.len());
    let mut respondents = Vec::with_capacity(n);
    for draw in 0..n {
        let pick = &ds.respondents[rng.random_range(0..n)];
        let id = format!("{}#{}", pick.id, draw);
        let start = observations.len();
        for obs in &ds.observations[pick.rows.clone()] {
            let mut o = obs.clone();
            o.respondent_id = id.clone();
            observations.push(o);
        }
        respondents.push(Respondent {
            id,
            rows: start..observations.len(),
        });
    }
    Dataset {
        observations,
        schema: ds.schema.clone(),
        respondents,
    }
}

/// Summary diagnostics used by the `validate` command.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub n_observations: usize,
    pub n_respondents: usize,
    pub scenarios_min: usize,
    pub scenarios_max: usize,
    pub scenarios_mean: f64,
    /// Counts of probabilities in the bins [0,0.1), [0.1,0.2), ..., [0.9,1].
    pub prob_histogram: Vec<usize>,
    pub share_multiple_of_5pct: f64,
    pub share_multiple_of_10pct: f64,
    pub n_prob_zero: usize,
    pub n_prob_one: usize,
    pub warnings: Vec<String>,
}

pub fn diagnostics(ds: &Dataset) -> Diagnostics {
    let counts: Vec<usize> = ds.respondents.iter().map(|r| r.rows.len()).collect();
    let n = ds.len();
    let mut hist = vec![0usize; 10];
    let mut m5 = 0;
    let mut m10 = 0;
    let mut zero = 0;
    let mut one = 0;
    for o in &ds.observations {
        let bin = ((o.prob * 10.0).floor() as usize).min(9);
        hist[bin] += 1;
        let pct = o.prob * 100.0;
        if (pct - (pct / 5.0).round() * 5.0).abs() < 1e-6 {
            m5 += 1;
        }
        if (pct - (pct / 10.0).round() * 10.0).abs() < 1e-6 {
            m10 += 1;
        }
        if o.prob == 0.0 {
            zero += 1;
        }
        if o.prob == 1.0 {
            one += 1;
        }
    }
    let mut warnings = Vec::new();
    if ds.n_respondents() < 2 {
        warnings.push("fewer than 2 respondents; bootstrap inference is degenerate".to_string());
    }
    let design = build_design(ds);
    let first = design.rows[0].numeraire_diff();
    if design.rows.iter().all(|r| r.numeraire_diff() == first) {
        warnings.push("numeraire has no variation; Â undefined".to_string());
    }
    for (j, name) in ds.schema.attributes.iter().enumerate() {
        let col = |r: &DesignRow| r.regressors[2 + j];
        let v0 = col(&design.rows[0]);
        if design.rows.iter().all(|r| col(r) == v0) {
            warnings.push(format!("attribute `{name}` has no variation across scenarios"));
        }
    }
    let p = design.n_cols();
    let thin = counts.iter().filter(|&&c| c < p).count();
    if thin > 0 {
        warnings.push(format!(
            "{thin} respondent(s) have fewer than {p} scenarios; individual LAD fits will skip them"
        ));
    }
    Diagnostics {
        n_observations: n,
        n_respondents: ds.n_respondents(),
        scenarios_min: counts.iter().copied().min().unwrap_or(0),
        scenarios_max: counts.iter().copied().max().unwrap_or(0),
        scenarios_mean: n as f64 / ds.n_respondents().max(1) as f64,
        prob_histogram: hist,
        share_multiple_of_5pct: m5 as f64 / n as f64,
        share_multiple_of_10pct: m10 as f64 / n as f64,
        n_prob_zero: zero,
        n_prob_one: one,
        warnings,
    }
}

/// Writes a schema document next to generated data.
pub fn write_schema(schema: &Schema, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let text = serde_json::to_string_pretty(schema)?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}
