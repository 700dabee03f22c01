//! Command-line front end: `validate`, `estimate-iqr`, `test` and
//! `simulate`.
//!
//! Every JSON document written here embeds the resolved configuration and
//! the tool version, and contains nothing that varies between runs with the
//! same flags (no timestamps, no thread counts).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{diagnostics, load_dataset, write_schema, Dataset, Schema};
use crate::dgp::{oracle_knots, oracle_symmetry_gap, oracle_y_grid, simulate, DgpSpec};
use crate::error::{Error, Result};
use crate::iqr::{
    bootstrap_bands, estimate_curves, write_curves_csv, CurveConfig, CurvesDocument, Normalization, SGridSpec,
    YGridSpec, DEFAULT_TAUS,
};
use crate::mtest::{run_test, NullKind, TestConfig, DEFAULT_ALPHAS};
use crate::quantreg::OutcomeTransform;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "evtest", version, about = "Distributions of resolvable uncertainty from stated choice probabilities")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset and print diagnostics.
    Validate(DataArgs),
    /// Estimate the normalized-IQR distributions.
    EstimateIqr(EstimateArgs),
    /// Run the EV1 or symmetry test.
    Test(TestArgs),
    /// Generate a synthetic dataset and its analytic oracle.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Scale of the prob column (1 or 100); overrides the schema.
    #[arg(long)]
    pub prob_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Logistic,
    Normal,
    None,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Logistic => Normalization::Logistic,
            NormArg::Normal => Normalization::Normal,
            NormArg::None => Normalization::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullArg {
    Ev1,
    Symmetry,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Comma-separated τ set.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Either a point count (quantiles of the pooled normalized Â) or a
    /// comma-separated list of y values.
    #[arg(long)]
    pub ygrid: Option<String>,
    /// Number of a-grid points.
    #[arg(long)]
    pub agrid: Option<usize>,
    /// Explicit s-grid `lo,hi,step`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sgrid: Option<Vec<f64>>,
    /// Points on each side of zero for the automatic s-grid.
    #[arg(long)]
    pub s_half_points: Option<usize>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormArg>,
    /// Regress the stated probability itself instead of its log-odds.
    #[arg(long)]
    pub direct: bool,
    /// Winsorization of probabilities before the log-odds transform.
    #[arg(long)]
    pub winsor: Option<f64>,
    /// Comma-separated quantile-regression levels.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Highest power of the numeraire difference in the design (1 to 3).
    #[arg(long)]
    pub numeraire_degree: Option<usize>,
    /// Comma-separated hinge knots on the numeraire difference.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub knots: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub curves: CurveArgs,
    /// Bootstrap replicates for pointwise bands (0 = no bands).
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0.9)]
    pub band_level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub curves: CurveArgs,
    #[arg(long, value_enum)]
    pub null: NullArg,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 10_000)]
    pub sims: usize,
    /// Comma-separated significance levels.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-6)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// DGP specification (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed in the specification.
    #[arg(long)]
    pub seed: Option<u64>,
    /// τ set for the oracle sidecar.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Comma-separated y values for the oracle sidecar.
    #[arg(long, value_delimiter = ',')]
    pub ygrid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormArg>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Builds the curve configuration from flags, starting at the defaults.
pub fn curve_config(a: &CurveArgs) -> Result<CurveConfig> {
    let mut cfg = CurveConfig::default();
    if let Some(t) = &a.taus {
        let mut t = t.clone();
        t.sort_by(f64::total_cmp);
        cfg.taus = t;
    }
    if let Some(g) = &a.ygrid {
        cfg.y_grid = parse_ygrid(g)?;
    }
    if let Some(k) = a.agrid {
        cfg.k_a = k;
    }
    if let Some(h) = a.s_half_points {
        cfg.s_grid = SGridSpec::Auto { half_points: h };
    }
    if let Some(s) = &a.sgrid {
        let [lo, hi, step] = s[..] else {
            return Err(Error::InvalidConfig("--sgrid takes lo,hi,step".into()));
        };
        cfg.s_grid = SGridSpec::Range { lo, hi, step };
    }
    if let Some(n) = a.normalization {
        cfg.normalization = n.into();
    }
    if a.direct {
        if a.winsor.is_some() {
            return Err(Error::InvalidConfig("--winsor has no effect with --direct".into()));
        }
        cfg.outcome_transform = OutcomeTransform::Direct;
    } else if let Some(w) = a.winsor {
        if !(w > 0.0 && w < 0.5) {
            return Err(Error::InvalidConfig(format!("--winsor must lie in (0, 0.5) (got {w})")));
        }
        cfg.outcome_transform = OutcomeTransform::LogOdds { winsor: w };
    }
    if let Some(l) = &a.levels {
        cfg.levels = l.clone();
    }
    if let Some(d) = a.numeraire_degree {
        cfg.numeraire_degree = d;
    }
    if let Some(k) = &a.knots {
        cfg.numeraire_knots = k.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_ygrid(text: &str) -> Result<YGridSpec> {
    let text = text.trim();
    if !text.contains(',') {
        if let Ok(n) = text.parse::<usize>() {
            return Ok(YGridSpec::Quantiles { n });
        }
    }
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::InvalidConfig(format!("bad y-grid value `{v}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("explicit y-grid must be strictly increasing".into()));
    }
    Ok(YGridSpec::Explicit { values })
}

fn load(a: &DataArgs) -> Result<Dataset> {
    let mut schema = Schema::from_json_file(&a.schema)?;
    if let Some(p) = a.prob_scale {
        schema.prob_scale = p;
    }
    load_dataset(&a.data, &schema)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn make_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

pub fn cmd_validate(a: &DataArgs) -> Result<String> {
    let ds = load(a)?;
    let d = diagnostics(&ds);
    let mut out = String::new();
    out.push_str(&format!("respondents: {}\n", d.n_respondents));
    out.push_str(&format!("observations: {}\n", d.n_observations));
    out.push_str(&format!(
        "scenarios per respondent: min {} max {} mean {:.2}\n",
        d.scenarios_min, d.scenarios_max, d.scenarios_mean
    ));
    out.push_str(&format!(
        "probability histogram (tenths): {}\n",
        d.prob_histogram.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
    ));
    out.push_str(&format!(
        "multiples of 5%: {:.3}, of 10%: {:.3}; zeros {}, ones {}\n",
        d.share_multiple_of_5pct, d.share_multiple_of_10pct, d.n_prob_zero, d.n_prob_one
    ));
    for w in &d.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunEcho<'a> {
    tool_version: &'static str,
    command: &'static str,
    data: &'a Path,
    schema: &'a Schema,
    curves: &'a CurveConfig,
    bootstrap: usize,
    band_level: Option<f64>,
    seed: u64,
    grid_spec: &'a crate::iqr::GridSpec,
    warnings: &'a [String],
}

pub fn cmd_estimate_iqr(a: &EstimateArgs) -> Result<String> {
    let cfg = curve_config(&a.curves)?;
    let ds = load(&a.data)?;
    let est = estimate_curves(&ds, &cfg).map_err(Error::at_stage("estimation"))?;
    let bands = if a.bootstrap > 0 {
        Some(bootstrap_bands(&ds, &cfg, &est, a.bootstrap, a.band_level, a.seed).map_err(Error::at_stage("bands"))?)
    } else {
        None
    };
    make_out(&a.out)?;
    write_curves_csv(&a.out.join("curves.csv"), &est.curves, bands.as_deref())?;
    write_json(&a.out.join("curves.json"), &CurvesDocument::new(&est, &cfg, bands.as_deref()))?;
    est.grid.write_csv(&a.out.join("coefs.csv"))?;
    write_json(
        &a.out.join("run.json"),
        &RunEcho {
            tool_version: TOOL_VERSION,
            command: "estimate-iqr",
            data: &a.data.data,
            schema: ds.schema(),
            curves: &cfg,
            bootstrap: a.bootstrap,
            band_level: bands.as_ref().map(|_| a.band_level),
            seed: a.seed,
            grid_spec: &est.gs,
            warnings: &est.warnings,
        },
    )?;
    let mut msg = format!("wrote {} curves to {}\n", est.curves.len(), a.out.display());
    for w in &est.warnings {
        msg.push_str(&format!("warning: {w}\n"));
    }
    Ok(msg)
}

pub fn test_config(a: &TestArgs) -> Result<TestConfig> {
    let kind = match a.null {
        NullArg::Ev1 => NullKind::Ev1,
        NullArg::Symmetry => NullKind::Symmetry,
    };
    let mut cfg = TestConfig::new(kind);
    cfg.curves = curve_config(&a.curves)?;
    cfg.bootstrap = a.bootstrap;
    cfg.sims = a.sims;
    cfg.alphas = a.alpha.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
    cfg.ridge = a.ridge;
    cfg.seed = a.seed;
    Ok(cfg)
}

pub fn cmd_test(a: &TestArgs) -> Result<String> {
    let cfg = test_config(a)?;
    let ds = load(&a.data)?;
    let mut out = run_test(&ds, &cfg)?;
    make_out(&a.out)?;
    write_curves_csv(&a.out.join("curves.csv"), &out.estimate.curves, None)?;
    out.report.curve_files = vec!["curves.csv".to_string()];
    write_json(&a.out.join("report.json"), &out.report)?;
    let table = out.report.to_table();
    write_text(&a.out.join("report.txt"), &table)?;
    let mut msg = table;
    for w in &out.report.warnings {
        msg.push_str(&format!("warning: {w}\n"));
    }
    Ok(msg)
}

#[derive(Serialize)]
struct OracleDoc<'a> {
    tool_version: &'static str,
    spec: &'a DgpSpec,
    normalization: Normalization,
    taus: &'a [f64],
    y: &'a [f64],
    /// `g[i][j] = G_{taus[i]}(y[j])`.
    g: Vec<Vec<f64>>,
    symmetry_gaps: Vec<SymmetryGap>,
}

#[derive(Serialize)]
struct SymmetryGap {
    tau: f64,
    gap: f64,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let mut spec = DgpSpec::from_json_file(&a.spec)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let mut taus = a.taus.clone().unwrap_or_else(|| DEFAULT_TAUS.to_vec());
    taus.sort_by(f64::total_cmp);
    let norm: Normalization = a.normalization.map(Into::into).unwrap_or_default();
    let ys = match &a.ygrid {
        Some(v) => v.clone(),
        None => oracle_y_grid(&spec, &taus, norm, 61)?,
    };
    let g = oracle_knots(&spec, &taus, &ys, norm)?;
    let symmetry_gaps = taus
        .iter()
        .filter(|&&t| t < 0.5)
        .map(|&t| Ok(SymmetryGap { tau: t, gap: oracle_symmetry_gap(&spec, t)? }))
        .collect::<Result<Vec<_>>>()?;
    let ds = simulate(&spec)?;
    make_out(&a.out)?;
    ds.write_csv(&a.out.join("data.csv"))?;
    write_schema(ds.schema(), &a.out.join("schema.json"))?;
    // The oracle depends on the specification only, not on the seed.
    let mut oracle_spec = spec.clone();
    oracle_spec.seed = 0;
    write_json(
        &a.out.join("oracle.json"),
        &OracleDoc {
            tool_version: TOOL_VERSION,
            spec: &oracle_spec,
            normalization: norm,
            taus: &taus,
            y: &ys,
            g,
            symmetry_gaps,
        },
    )?;
    Ok(format!(
        "wrote {} observations from {} respondents to {}\n",
        ds.len(),
        ds.n_respondents(),
        a.out.display()
    ))
}

/// Runs a parsed command line and returns the text for stdout.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidConfig("--threads must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::EstimateIqr(a) => cmd_estimate_iqr(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Process exit code for an error: 2 for bad input or configuration, 1 for
/// internal failures.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve_args(extra: &[&str]) -> CurveArgs {
        let mut argv = vec!["evtest", "estimate-iqr", "--data", "d.csv", "--schema", "s.json"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::EstimateIqr(a) => a.curves,
            _ => unreachable!(),
        }
    }

    #[test]
    fn defaults_resolve() {
        let cfg = curve_config(&curve_args(&[])).unwrap();
        assert_eq!(cfg, CurveConfig::default());
    }

    #[test]
    fn flags_map_onto_config() {
        let cfg = curve_config(&curve_args(&[
            "--taus",
            "0.9,0.1",
            "--ygrid",
            "0.5,1,1.5",
            "--agrid",
            "40",
            "--sgrid",
            "-2,2,0.01",
            "--normalization",
            "normal",
            "--knots",
            "-1,0,1",
        ]))
        .unwrap();
        assert_eq!(cfg.taus, vec![0.1, 0.9]);
        assert_eq!(cfg.y_grid, YGridSpec::Explicit { values: vec![0.5, 1.0, 1.5] });
        assert_eq!(cfg.k_a, 40);
        assert_eq!(cfg.s_grid, SGridSpec::Range { lo: -2.0, hi: 2.0, step: 0.01 });
        assert_eq!(cfg.normalization, Normalization::Normal);
        assert_eq!(cfg.numeraire_knots, vec![-1.0, 0.0, 1.0]);
        let cfg = curve_config(&curve_args(&["--ygrid", "7", "--direct"])).unwrap();
        assert_eq!(cfg.y_grid, YGridSpec::Quantiles { n: 7 });
        assert_eq!(cfg.outcome_transform, OutcomeTransform::Direct);
    }

    #[test]
    fn bad_flags_are_input_errors() {
        for extra in [
            &["--sgrid", "1,2"][..],
            &["--taus", "0.5"],
            &["--ygrid", "1,0.5"],
            &["--numeraire-degree", "4"],
            &["--winsor", "0.7"],
        ] {
            let e = curve_config(&curve_args(extra)).unwrap_err();
            assert_eq!(exit_code(&e), 2, "{extra:?}: {e}");
        }
    }
}
