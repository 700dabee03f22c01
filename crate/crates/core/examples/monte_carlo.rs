//! Rejection rates of the EV1 and symmetry tests on simulated panels.
//!
//! cargo run --release --example monte_carlo -- <family> <respondents> <replications>
//!
//! family: logistic | normal | uniform | shifted_exponential. Scale draws are
//! uniform on [0.5, 1.5]; the attribute has slope 0. Fits use hinge knots at
//! -1, 0, 1 with B = 100 and L = 2000 and a 5-point y-grid.

use evtest::dgp::{simulate, AttributeSpec, DgpSpec, Family, Rounding, ScalarDist};
use evtest::iqr::{SGridSpec, YGridSpec};
use evtest::mtest::{run_tests, NullKind, TestConfig};
use evtest::rng::{child_seed, Purpose};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 3 {
        eprintln!("usage: monte_carlo <family> <respondents> <replications>");
        std::process::exit(2);
    }
    let family: Family = serde_json::from_value(serde_json::Value::String(args[0].clone())).expect("family");
    let n: usize = args[1].parse().expect("respondents");
    let reps: usize = args[2].parse().expect("replications");
    let nulls = [NullKind::Ev1, NullKind::Symmetry];
    let mut hits = [0usize; 2];
    for r in 0..reps {
        let spec = DgpSpec {
            n_respondents: n,
            scenarios_per_respondent: 5,
            family,
            sigma: ScalarDist::Uniform { lo: 0.5, hi: 1.5 },
            attributes: vec![AttributeSpec {
                name: "x".into(),
                range: [-2.0, 2.0],
                slope: ScalarDist::Degenerate(0.0),
            }],
            numeraire_range: [-3.0, 3.0],
            rounding: Rounding::None,
            seed: child_seed(family as u64 + 1, Purpose::MonteCarlo, r as u64),
        };
        let ds = simulate(&spec).expect("valid spec");
        let mut cfg = TestConfig::new(NullKind::Ev1);
        cfg.bootstrap = 100;
        cfg.sims = 2000;
        cfg.seed = r as u64;
        cfg.curves.numeraire_knots = vec![-1.0, 0.0, 1.0];
        cfg.curves.y_grid = YGridSpec::Quantiles { n: 5 };
        cfg.curves.k_a = 50;
        cfg.curves.s_grid = SGridSpec::Auto { half_points: 1000 };
        let outs = run_tests(&ds, &cfg, &nulls).expect("test runs");
        for (h, o) in hits.iter_mut().zip(&outs) {
            *h += o.report.decision.reject_at.is_some_and(|a| a <= 0.05) as usize;
            eprintln!(
                "rep {r} {}: {:.2} vs c(5%) {:.2}",
                o.report.null_kind.label(),
                o.report.statistic,
                o.report.critical_values[1].value
            );
        }
    }
    println!("EV1 {}/{reps}  Symmetry {}/{reps}", hits[0], hits[1]);
}
