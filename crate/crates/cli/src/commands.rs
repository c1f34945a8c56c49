use serde::Serialize;
use serde_json::json;
use spiked_landscape::kac_rice::{constant_c, count, CountWindow};
use spiked_landscape::landscape_sim::estimate_gse_batch;
use spiked_landscape::scalar_core::{m_lambda, s};
use spiked_landscape::thresholds_gse::{gse_predict, lambda2, thresholds};
use spiked_landscape::ModelParams;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Report, Table};

pub fn surface(cfg: &RunConfig) -> Result<Report, CliError> {
    let (p, k) = cfg.p_k()?;
    let grid = cfg.grid;
    let mut table = Table::new(&["lambda", "m", "S", "in_low_latitude"]);
    let mut curves = Vec::new();
    for lam in cfg.lambdas()? {
        let params = ModelParams::new(p, k, lam)?;
        let x = gse_predict(&params)?.x_star;
        let ml = m_lambda(&params);
        let mut band_max = f64::NEG_INFINITY;
        for i in 0..grid {
            // m = 1 is excluded: S has a log singularity there
            let m = i as f64 / grid as f64;
            let v = s(m, x, &params)?;
            let low = m <= ml;
            if low {
                band_max = band_max.max(v);
            }
            table.push(vec![lam.into(), m.into(), v.into(), low.into()]);
        }
        curves.push(json!({ "lambda": lam, "x_star": x, "m_lambda": ml, "band_max": band_max }));
    }
    let rows = table.to_json();
    Report::new("surface", json!({ "curves": curves, "rows": rows }), table)
}

pub fn thresholds_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let (p, k) = cfg.p_k()?;
    let r = thresholds(p, k)?;
    let mut table = Table::new(&["p", "k", "lambda1", "lambda2", "lambda_tr", "monotonicity_verified"]);
    table.push(vec![p.into(), k.into(), r.lambda1.into(), r.lambda2.into(), r.lambda_tr.into(), r.monotonicity_verified.into()]);
    Report::new("thresholds", &r, table)
}

pub fn count_cmd(cfg: &RunConfig) -> Result<Report, CliError> {
    let params = cfg.single()?;
    let n = cfg.n.ok_or_else(|| CliError::Usage("count needs --n".into()))?;
    let w = cfg.window.ok_or_else(|| CliError::Usage("count needs --window".into()))?;
    let window = CountWindow::new((w[0], w[1]), (w[2], w[3]), &params)?;
    let r = count(&window, n, &params, true)?;
    let mut table = Table::new(&[
        "term_i", "term_ii", "euler_char_exact", "sharp_value", "saddle_m", "saddle_y", "rate", "constant_c",
    ]);
    table.push(vec![
        r.term_i.into(),
        r.term_ii.into(),
        r.euler_char_exact.into(),
        r.sharp_value.into(),
        r.saddle_m.into(),
        r.saddle_y.into(),
        r.rate.into(),
        r.constant_c.into(),
    ]);
    Report::new("count", json!({ "window": window, "n": n, "count": r }), table)
}

#[derive(Debug, Serialize)]
struct Simulation {
    n: u32,
    instances: usize,
    restarts: usize,
    energy_mean: f64,
    energy_stderr: f64,
    overlap_mean: f64,
    discarded: usize,
    energy_discrepancy: f64,
    overlap_discrepancy: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn gse(cfg: &RunConfig, simulate: bool) -> Result<Report, CliError> {
    let params = cfg.single()?;
    let g = gse_predict(&params)?;
    let sim = if simulate {
        let n = cfg.n.unwrap_or(64);
        let instances = cfg.instances.unwrap_or(5);
        let restarts = cfg.restarts.unwrap_or(50);
        let est = estimate_gse_batch(n as usize, &params, instances, restarts, cfg.seed)?;
        let (e, se) = mean_se(&est.iter().map(|x| x.energy_per_site).collect::<Vec<_>>());
        let (m, _) = mean_se(&est.iter().map(|x| x.overlap).collect::<Vec<_>>());
        Some(Simulation {
            n,
            instances,
            restarts,
            energy_mean: e,
            energy_stderr: se,
            overlap_mean: m,
            discarded: est.iter().map(|x| x.discarded).sum(),
            energy_discrepancy: e - g.x_star,
            overlap_discrepancy: m - g.m_star,
        })
    } else {
        None
    };
    let mut table = Table::new(&[
        "m_star", "gse", "gse_alt_form", "y_star", "sim_n", "sim_energy", "sim_energy_stderr", "sim_overlap",
    ]);
    table.push(vec![
        g.m_star.into(),
        g.x_star.into(),
        g.gse_alt_form.into(),
        g.y_star.into(),
        sim.as_ref().map_or(crate::output::Cell::Empty, |s| s.n.into()),
        sim.as_ref().map(|s| s.energy_mean).into(),
        sim.as_ref().map(|s| s.energy_stderr).into(),
        sim.as_ref().map(|s| s.overlap_mean).into(),
    ]);
    Report::new("gse", json!({ "prediction": g, "simulation": sim }), table)
}

pub fn sweep_c(cfg: &RunConfig) -> Result<Report, CliError> {
    let (p, k) = cfg.p_k()?;
    let l2 = lambda2::<f64>(p, k)?;
    // at lambda2 itself y* can sit on the bulk edge, where C is undefined
    let floor = l2 * (1.0 + 1e-6);
    let mut lams = cfg.lambdas()?;
    if let Some(crate::config::LambdaSpec::Sweep { lo, hi, count }) = &cfg.lambda {
        if *lo < floor {
            eprintln!("warning: sweep floor {lo} is below lambda2 = {l2}; clipped to {floor}");
            lams = crate::config::log_space(floor, hi.max(floor), *count);
        }
    } else {
        let before = lams.len();
        lams.retain(|&l| l >= floor);
        if lams.len() < before {
            eprintln!("warning: dropped {} lambda values below lambda2 = {l2}", before - lams.len());
        }
    }
    let mut table = Table::new(&["lambda", "c", "abs_dev", "j_residual"]);
    let mut devs = Vec::new();
    for lam in lams {
        let c = constant_c(&ModelParams::new(p, k, lam)?)?;
        devs.push((c.c - 1.0).abs());
        table.push(vec![lam.into(), c.c.into(), (c.c - 1.0).abs().into(), c.j_residual.into()]);
    }
    // recorded only; above lambda2 the deviations are at rounding level
    let tail = &devs[devs.len() / 2..];
    let tail_monotone = tail.windows(2).all(|w| w[1] <= w[0]);
    let rows = table.to_json();
    Report::new("sweep-c", json!({ "lambda2": l2, "tail_monotone": tail_monotone, "rows": rows }), table)
}
