//! Validation suites run by `spiked validate`.

use clap::ValueEnum;
use serde::Serialize;
use serde_json::json;
use spiked_landscape::kac_rice::{expected_det_goe, expected_det_rank1, expected_euler_char, CountWindow};
use spiked_landscape::landscape_sim::{census_mc, covariance_mc, CensusOptions};
use spiked_landscape::rmt_mc::{char_integral_det, mc_expected_det_grid, pr_error_curve, pr_shifted_error_curve, GoeSpec};
use spiked_landscape::ModelParams;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Cell, Report, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Hermite,
    Rank1,
    Charint,
    Pr,
    Covariance,
    Census,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Self::Hermite, Self::Rank1, Self::Charint, Self::Pr, Self::Covariance, Self::Census];

    fn name(self) -> &'static str {
        match self {
            Self::Hermite => "hermite",
            Self::Rank1 => "rank1",
            Self::Charint => "charint",
            Self::Pr => "pr",
            Self::Covariance => "covariance",
            Self::Census => "census",
        }
    }
}

const YS: [f64; 3] = [1.6, 2.2, 4.0];
const PR_NS: [u32; 4] = [50, 100, 200, 400];
const PR_RATIO: (f64, f64) = (0.3, 0.8);
const CHAR_TOL: f64 = 1e-8;

struct Case {
    case: String,
    value: f64,
    reference: f64,
    deviation: f64,
    tolerance: String,
    pass: bool,
}

fn mc_cases(cfg: &RunConfig, thetas: &[f64], exact: impl Fn(u32, f64, f64) -> f64) -> Result<Vec<Case>, CliError> {
    let samples = cfg.samples.unwrap_or(200_000);
    let pairs: Vec<(f64, f64)> = thetas.iter().flat_map(|&t| YS.iter().map(move |&y| (t, y))).collect();
    let mut out = Vec::new();
    for n in 1..=10u32 {
        let spec = GoeSpec::new(n as usize, cfg.seed.wrapping_add(u64::from(n)), samples);
        for (e, &(t, y)) in mc_expected_det_grid(spec, &pairs)?.iter().zip(&pairs) {
            let x = exact(n, t, y);
            out.push(Case {
                case: format!("n={n} theta={t} y={y}"),
                value: e.mean,
                reference: x,
                deviation: if e.stderr > 0.0 { (e.mean - x) / e.stderr } else { 0.0 },
                tolerance: format!("{} se", cfg.sigmas),
                pass: e.agrees(x, cfg.sigmas),
            });
        }
    }
    Ok(out)
}

fn charint_cases() -> Result<Vec<Case>, CliError> {
    let mut out = Vec::new();
    for n in 1..=10u32 {
        for t in [0.0, 0.5, 2.0] {
            for y in YS {
                let x = expected_det_rank1(n, t, y).value();
                let c = char_integral_det(n, t, -y)?.value;
                let dev = (c - x).abs() / x.abs().max(1.0);
                out.push(Case {
                    case: format!("n={n} theta={t} y={y}"),
                    value: c,
                    reference: x,
                    deviation: dev,
                    tolerance: format!("{CHAR_TOL:e}"),
                    pass: dev <= CHAR_TOL,
                });
            }
        }
    }
    Ok(out)
}

/// Error-halving table: each row compares the error at `n` with the one at `n/2`.
fn pr_cases() -> Result<Vec<Case>, CliError> {
    let mut out = Vec::new();
    for (label, curve) in [("direct", pr_error_curve(-2.0, &PR_NS)?), ("shifted", pr_shifted_error_curve(-2.0, &PR_NS)?)] {
        for w in curve.windows(2) {
            let ratio = w[1].1 / w[0].1;
            out.push(Case {
                case: format!("{label} x=-2 n={}", w[1].0),
                value: w[1].1,
                reference: w[0].1,
                deviation: ratio,
                tolerance: format!("ratio in [{}, {}]", PR_RATIO.0, PR_RATIO.1),
                pass: (PR_RATIO.0..=PR_RATIO.1).contains(&ratio),
            });
        }
    }
    Ok(out)
}

/// One row per configuration; passes when the number of moments beyond
/// `sigmas` standard errors is consistent with chance and none is extreme.
fn covariance_cases(cfg: &RunConfig) -> Result<Vec<Case>, CliError> {
    let models = match cfg.model() {
        Some(m) => vec![m?],
        None => [(3, 1), (3, 2), (4, 3)]
            .iter()
            .map(|&(p, k)| ModelParams::new(p, k, 2.0))
            .collect::<Result<_, _>>()?,
    };
    let n = cfg.n.unwrap_or(6) as usize;
    let samples = cfg.samples.unwrap_or(20_000);
    let tail = normal_tail(cfg.sigmas);
    let mut out = Vec::new();
    for (i, params) in models.iter().enumerate() {
        for (j, m) in [0.3, 0.7].into_iter().enumerate() {
            let seed = cfg.seed.wrapping_add((10 * i + j) as u64);
            let r = covariance_mc(n, params, m, samples, seed)?;
            let exceed = r.exceedances(cfg.sigmas);
            let expected = r.checks.len() as f64 * tail;
            let worst = r.worst().z();
            let allowed = expected + 3.0 * (expected * (1.0 - tail)).sqrt();
            out.push(Case {
                case: format!("({},{},{}) N={n} m={m}", params.p(), params.k(), params.lambda()),
                value: exceed as f64,
                reference: expected,
                deviation: worst,
                tolerance: format!("exceedances <= {allowed:.1}, worst z < {}", cfg.sigmas + 2.0),
                pass: exceed as f64 <= allowed && worst < cfg.sigmas + 2.0,
            });
        }
    }
    Ok(out)
}

// two-sided normal tail beyond `k`, from the error function
fn normal_tail(k: f64) -> f64 {
    statrs::function::erf::erfc(k / std::f64::consts::SQRT_2)
}

fn census_cases(cfg: &RunConfig) -> Result<Vec<Case>, CliError> {
    let params = match cfg.model() {
        Some(m) => m?,
        None => ModelParams::new(3, 2, 6.0)?,
    };
    let w = cfg.window.unwrap_or([0.3, 0.99, -4.0, -2.7]);
    let window = CountWindow::new((w[0], w[1]), (w[2], w[3]), &params)?;
    let exact = expected_euler_char(&window, 2, &params)?;
    let instances = cfg.instances.unwrap_or(10_000);
    let est = census_mc(&params, window, instances, cfg.seed, &CensusOptions::default())?;
    Ok(vec![Case {
        case: format!("({},{},{}) N=2 instances={instances}", params.p(), params.k(), params.lambda()),
        value: est.mean,
        reference: exact,
        deviation: (est.mean - exact) / est.stderr,
        tolerance: format!("{} se", cfg.sigmas),
        pass: est.agrees(exact, cfg.sigmas),
    }])
}

/// Runs the suites; the boolean is false if any case failed.
pub fn run(cfg: &RunConfig, suites: &[Suite]) -> Result<(Report, bool), CliError> {
    let mut table = Table::new(&["suite", "case", "value", "reference", "deviation", "tolerance", "pass"]);
    let mut summary = Vec::new();
    let mut all = true;
    for &suite in suites {
        let cases = match suite {
            Suite::Hermite => mc_cases(cfg, &[0.0], |n, _, y| expected_det_goe(n, y).value())?,
            Suite::Rank1 => mc_cases(cfg, &[0.5, 2.0], |n, t, y| expected_det_rank1(n, t, y).value())?,
            Suite::Charint => charint_cases()?,
            Suite::Pr => pr_cases()?,
            Suite::Covariance => covariance_cases(cfg)?,
            Suite::Census => census_cases(cfg)?,
        };
        let failed = cases.iter().filter(|c| !c.pass).count();
        all &= failed == 0;
        summary.push(json!({ "suite": suite.name(), "cases": cases.len(), "failed": failed, "pass": failed == 0 }));
        for c in cases {
            table.push(vec![
                suite.name().into(),
                c.case.into(),
                c.value.into(),
                c.reference.into(),
                c.deviation.into(),
                Cell::S(c.tolerance),
                c.pass.into(),
            ]);
        }
    }
    let rows = table.to_json();
    let report = Report::new("validate", json!({ "pass": all, "suites": summary, "cases": rows }), table)?;
    Ok((report, all))
}
