//! Command implementations and report emission.

use std::path::Path;

use serde::Serialize;

use zimed_core::comparators::{delta_ci, npb_ci, ComparatorIntervals};
use zimed_core::data::pack_theta;
use zimed_core::estimation::{
    fit_exposure_model, fit_mediator_model, goodness_of_fit, FitOptions, MediatorFit,
};
use zimed_core::family::CountFamily;
use zimed_core::fiducial::{
    equivalence_number, fiducial_nie_samples, summarize_fiducial, EigenNorm, FiducialOptions,
    IntervalSummary, DEFAULT_EQUIV_GRID, DEFAULT_EQUIV_TOL,
};
use zimed_core::rng::derive_seed;
use zimed_core::sim::{run_scenario, scenario_grid, GridAxis, ScenarioConfig};

use crate::error::AppError;
use crate::input::{fmt, write_summary_stats, LoadedData};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every log line carries the run seed so interleaved runs stay attributable.
pub fn log(seed: &str, msg: &str) {
    eprintln!("[seed={seed}] {msg}");
}

// ---------------------------------------------------------------- fit

#[derive(Serialize)]
struct ParamEstimate {
    name: String,
    estimate: f64,
    se: f64,
}

#[derive(Serialize)]
struct ThetaJson {
    beta_z0: Vec<f64>,
    beta_l0: Vec<f64>,
    beta_0: Vec<f64>,
    beta_1: Vec<f64>,
    /// Row per taxon, column per C2 covariate.
    beta_2: Vec<Vec<f64>>,
    sigma_delta: f64,
}

#[derive(Serialize)]
struct FitReport {
    version: &'static str,
    family: String,
    n_subjects: usize,
    p_taxa: usize,
    taxa: Vec<String>,
    converged: bool,
    iterations: usize,
    log_lik: f64,
    aic: f64,
    warnings: Vec<String>,
    exposure_alpha: Vec<f64>,
    theta: ThetaJson,
    free_parameters: Vec<ParamEstimate>,
}

fn packed_name(idx: usize, p: usize, r2: usize, taxa: &[String]) -> String {
    if idx == (4 + r2) * p {
        return "sigma_delta".into();
    }
    let block = idx / p;
    let taxon = &taxa[idx % p];
    match block {
        0 => format!("beta_z0[{taxon}]"),
        1 => format!("beta_l0[{taxon}]"),
        2 => format!("beta_0[{taxon}]"),
        3 => format!("beta_1[{taxon}]"),
        k => format!("beta_2[{taxon},{}]", k - 4),
    }
}

pub fn cmd_fit(
    data: &LoadedData,
    family: CountFamily,
    out: &Path,
    seed_label: &str,
) -> Result<(), AppError> {
    let ds = &data.dataset;
    log(
        seed_label,
        &format!(
            "fitting {} model: n={}, p={}, offsets in [{}, {}]",
            family.name(),
            ds.n(),
            ds.p(),
            data.summary.offset_min,
            data.summary.offset_max
        ),
    );
    let exp_fit = fit_exposure_model(ds)?;
    let fit = fit_mediator_model(ds, family, &FitOptions::default())?;
    let p = ds.p();
    let r2 = ds.c2.ncols();
    let theta = &fit.theta_hat;
    let report = FitReport {
        version: VERSION,
        family: family.name().into(),
        n_subjects: ds.n(),
        p_taxa: p,
        taxa: data.taxa.clone(),
        converged: fit.converged,
        iterations: fit.iterations,
        log_lik: fit.log_lik,
        aic: fit.aic,
        warnings: fit.warnings.clone(),
        exposure_alpha: exp_fit.alpha.clone(),
        theta: ThetaJson {
            beta_z0: theta.beta_z0.clone(),
            beta_l0: theta.beta_l0.clone(),
            beta_0: theta.beta_0.clone(),
            beta_1: theta.beta_1.clone(),
            beta_2: (0..p).map(|j| theta.beta_2.row(j).iter().cloned().collect()).collect(),
            sigma_delta: theta.sigma_delta,
        },
        free_parameters: {
            let packed = pack_theta(theta);
            fit.free_idx
                .iter()
                .enumerate()
                .map(|(k, &idx)| ParamEstimate {
                    name: packed_name(idx, p, r2, &data.taxa),
                    estimate: packed[idx],
                    se: fit.cov_star[(k, k)].max(0.0).sqrt(),
                })
                .collect()
        },
    };
    write_json(&out.join("fit.json"), &report)?;
    write_summary_stats(out, data)?;
    log(seed_label, &format!("wrote fit.json, summary.csv, depth.csv to {}", out.display()));
    Ok(())
}

// ---------------------------------------------------------------- mediate

pub struct MediateOpts {
    pub family: CountFamily,
    pub k: usize,
    /// None = calibrate the Wishart degrees of freedom automatically.
    pub n_equiv: Option<usize>,
    pub alpha: f64,
    pub with_delta: bool,
    pub with_npb: bool,
    pub npb_reps: usize,
    pub conditional: bool,
    pub seed: u64,
}

#[derive(Serialize)]
struct ReportMetadata {
    version: &'static str,
    seed: u64,
    input: String,
    family: String,
    alpha: f64,
    k_requested: usize,
    k_effective: usize,
    dropped_draws: usize,
    n_equiv: usize,
    n_equiv_auto: bool,
    conditional: bool,
    n_subjects: usize,
    p_taxa: usize,
    parallelism: usize,
}

#[derive(Serialize)]
struct ReportRow {
    name: String,
    effect: &'static str,
    estimate: f64,
    lower: f64,
    upper: f64,
    width: f64,
    gen_p_value: Option<f64>,
    delta: Option<IntervalSummary>,
    npb: Option<IntervalSummary>,
}

#[derive(Serialize)]
struct MediationReport {
    metadata: ReportMetadata,
    rows: Vec<ReportRow>,
}

pub fn cmd_mediate(
    data: &LoadedData,
    opts: &MediateOpts,
    input_label: &str,
    out: &Path,
) -> Result<(), AppError> {
    let ds = &data.dataset;
    let seed_label = opts.seed.to_string();
    log(&seed_label, &format!("fitting {} model: n={}, p={}", opts.family.name(), ds.n(), ds.p()));
    let exp_fit = fit_exposure_model(ds)?;
    let med_fit = fit_mediator_model(ds, opts.family, &FitOptions::default())?;
    if !med_fit.converged {
        return Err(AppError::Convergence("mediator model did not converge".into()));
    }

    let n_equiv = match opts.n_equiv {
        Some(n) => n,
        None => {
            log(&seed_label, "calibrating Wishart degrees of freedom (--n auto)");
            let cal = equivalence_number(
                ds,
                &med_fit,
                &DEFAULT_EQUIV_GRID,
                DEFAULT_EQUIV_TOL,
                EigenNorm::L2,
                derive_seed(opts.seed, 0xca11),
            )?;
            for w in &cal.warnings {
                log(&seed_label, &format!("calibration warning: {w}"));
            }
            cal.n_equiv
        }
    };
    log(&seed_label, &format!("drawing {} fiducial samples (N={n_equiv})", opts.k));
    let fid_opts = FiducialOptions {
        k: opts.k,
        n_equiv,
        seed: derive_seed(opts.seed, 0xf1d0),
        conditional: opts.conditional,
    };
    let draws = fiducial_nie_samples(ds, &med_fit, &exp_fit, &fid_opts)?;

    let delta = if opts.with_delta {
        log(&seed_label, "computing delta-method intervals");
        Some(delta_ci(ds, &med_fit, &exp_fit, opts.alpha)?)
    } else {
        None
    };
    let npb = if opts.with_npb {
        log(&seed_label, &format!("running {} bootstrap resamples", opts.npb_reps));
        let ci = npb_ci(
            ds,
            opts.family,
            &exp_fit,
            &med_fit,
            opts.alpha,
            opts.npb_reps,
            derive_seed(opts.seed, 0xb007),
        )?;
        if ci.dropped > 0 {
            log(&seed_label, &format!("bootstrap dropped {} resamples", ci.dropped));
        }
        Some(ci)
    } else {
        None
    };

    let mut rows = Vec::with_capacity(ds.p() + 1);
    let pick = |c: &Option<ComparatorIntervals>, eff: usize| -> Option<IntervalSummary> {
        c.as_ref().map(|c| if eff == 0 { c.nde.clone() } else { c.nie[eff - 1].clone() })
    };
    let nde = summarize_fiducial(&draws.nde_draws, opts.alpha);
    rows.push(ReportRow {
        name: "nde".into(),
        effect: "nde",
        estimate: nde.estimate,
        lower: nde.lower,
        upper: nde.upper,
        width: nde.width,
        gen_p_value: nde.gen_p_value,
        delta: pick(&delta, 0),
        npb: pick(&npb, 0),
    });
    for (j, taxon) in data.taxa.iter().enumerate() {
        let col: Vec<f64> = draws.nie_draws.column(j).iter().cloned().collect();
        let s = summarize_fiducial(&col, opts.alpha);
        rows.push(ReportRow {
            name: taxon.clone(),
            effect: "nie",
            estimate: s.estimate,
            lower: s.lower,
            upper: s.upper,
            width: s.width,
            gen_p_value: s.gen_p_value,
            delta: pick(&delta, j + 1),
            npb: pick(&npb, j + 1),
        });
    }

    for row in &rows {
        let mut vals = vec![row.estimate, row.lower, row.upper, row.width];
        vals.extend(row.gen_p_value);
        for c in [&row.delta, &row.npb].into_iter().flatten() {
            vals.extend([c.estimate, c.lower, c.upper, c.width]);
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(AppError::Convergence(format!(
                "non-finite value in report row '{}'",
                row.name
            )));
        }
    }

    let report = MediationReport {
        metadata: ReportMetadata {
            version: VERSION,
            seed: opts.seed,
            input: input_label.into(),
            family: opts.family.name().into(),
            alpha: opts.alpha,
            k_requested: opts.k,
            k_effective: draws.k,
            dropped_draws: draws.dropped,
            n_equiv,
            n_equiv_auto: opts.n_equiv.is_none(),
            conditional: draws.conditional,
            n_subjects: ds.n(),
            p_taxa: ds.p(),
            parallelism: rayon::current_num_threads(),
        },
        rows,
    };
    write_json(&out.join("report.json"), &report)?;
    write_report_csv(&out.join("report.csv"), &report.rows)?;
    write_draws_csv(&out.join("draws.csv"), &draws, &data.taxa)?;
    log(&seed_label, &format!("wrote report.json, report.csv, draws.csv to {}", out.display()));
    Ok(())
}

fn opt_fmt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "name",
        "effect",
        "estimate",
        "lower",
        "upper",
        "width",
        "gen_p_value",
        "delta_estimate",
        "delta_lower",
        "delta_upper",
        "delta_width",
        "npb_estimate",
        "npb_lower",
        "npb_upper",
        "npb_width",
    ])?;
    for r in rows {
        let mut rec = vec![
            r.name.clone(),
            r.effect.to_string(),
            fmt(r.estimate),
            fmt(r.lower),
            fmt(r.upper),
            fmt(r.width),
            opt_fmt(r.gen_p_value),
        ];
        for c in [&r.delta, &r.npb] {
            match c {
                Some(c) => rec.extend([fmt(c.estimate), fmt(c.lower), fmt(c.upper), fmt(c.width)]),
                None => rec.extend([String::new(), String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_draws_csv(
    path: &Path,
    draws: &zimed_core::fiducial::FiducialDraws,
    taxa: &[String],
) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["draw".to_string(), "nde".to_string()];
    header.extend(taxa.iter().map(|t| format!("nie_{t}")));
    header.push("sigma_delta".into());
    w.write_record(&header)?;
    for k in 0..draws.k {
        let mut rec = vec![k.to_string(), fmt(draws.nde_draws[k])];
        rec.extend(draws.nie_draws.row(k).iter().map(|&v| fmt(v)));
        rec.push(fmt(draws.sigma_delta_draws[k]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

pub struct SimulateOpts {
    pub preset: Option<String>,
    pub base: ScenarioConfig,
}

pub fn cmd_simulate(opts: &SimulateOpts, out: &Path) -> Result<(), AppError> {
    let seed_label = opts.base.seed.to_string();
    let cells = match opts.preset.as_deref() {
        None => vec![opts.base.clone()],
        Some("fig5") => scenario_grid(
            &opts.base,
            &[
                GridAxis::Pi(vec![0.2, 0.4, 0.6]),
                GridAxis::SampleSize(vec![20, 40, 80, 200, 300]),
            ],
        ),
        Some(other) => {
            return Err(AppError::Usage(format!(
                "unknown preset '{other}' (available: fig5)"
            )))
        }
    };

    let mut w = csv::Writer::from_path(out.join("scenario_results.csv"))?;
    w.write_record([
        "cell",
        "n",
        "p",
        "pi",
        "phi",
        "beta1",
        "family",
        "seed",
        "n_equiv",
        "failures",
        "method",
        "effect",
        "gsv",
        "coverage",
        "mean_width",
        "sensitivity",
        "bias",
        "effective_reps",
    ])?;
    for (idx, cell) in cells.iter().enumerate() {
        log(
            &seed_label,
            &format!(
                "scenario {}/{}: n={}, pi={}, phi={}, reps={}",
                idx + 1,
                cells.len(),
                cell.n,
                cell.pi[0],
                cell.phi[0],
                cell.replications
            ),
        );
        // In multi-cell presets a degenerate cell (e.g. tiny n where refits
        // rarely converge) is reported and skipped so the rest of the grid
        // still produces its table; a single-cell run fails loudly.
        let result = match run_scenario(cell) {
            Ok(r) => r,
            Err(e) if cells.len() > 1 => {
                log(&seed_label, &format!("scenario {} skipped: {e}", idx + 1));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for row in &result.rows {
            w.write_record([
                idx.to_string(),
                cell.n.to_string(),
                cell.p.to_string(),
                fmt(cell.pi[0]),
                fmt(cell.phi[0]),
                fmt(cell.beta[0].1),
                cell.fit_family.name().to_string(),
                cell.seed.to_string(),
                result.n_equiv.to_string(),
                result.failures.to_string(),
                row.method.name().to_string(),
                row.effect.clone(),
                fmt(row.gsv),
                fmt(row.coverage),
                fmt(row.mean_width),
                fmt(row.sensitivity),
                fmt(row.bias),
                row.effective_reps.to_string(),
            ])?;
        }
    }
    w.flush()?;
    log(&seed_label, &format!("wrote scenario_results.csv to {}", out.display()));
    Ok(())
}

// ---------------------------------------------------------------- calibrate-n

#[derive(Serialize)]
struct CalibrationReport {
    version: &'static str,
    seed: u64,
    family: String,
    grid: Vec<usize>,
    tol: f64,
    n_equiv: usize,
    distance: f64,
    bootstrap_reps: usize,
    search_trace: Vec<(usize, f64)>,
    warnings: Vec<String>,
}

pub struct CalibrateOpts {
    pub family: CountFamily,
    pub grid: Vec<usize>,
    pub tol: f64,
    pub norm: EigenNorm,
    pub seed: u64,
}

pub fn cmd_calibrate(
    data: &LoadedData,
    opts: &CalibrateOpts,
    out: &Path,
) -> Result<(), AppError> {
    let seed_label = opts.seed.to_string();
    let ds = &data.dataset;
    log(&seed_label, &format!("fitting {} model: n={}, p={}", opts.family.name(), ds.n(), ds.p()));
    let fit = fit_mediator_model(ds, opts.family, &FitOptions::default())?;
    log(&seed_label, &format!("searching grid {:?} (tol {})", opts.grid, opts.tol));
    let cal = equivalence_number(ds, &fit, &opts.grid, opts.tol, opts.norm, opts.seed)?;
    for warn in &cal.warnings {
        log(&seed_label, &format!("warning: {warn}"));
    }
    let report = CalibrationReport {
        version: VERSION,
        seed: opts.seed,
        family: opts.family.name().into(),
        grid: opts.grid.clone(),
        tol: opts.tol,
        n_equiv: cal.n_equiv,
        distance: cal.distance,
        bootstrap_reps: cal.bootstrap_reps,
        search_trace: cal.search_trace,
        warnings: cal.warnings,
    };
    write_json(&out.join("calibration.json"), &report)?;
    log(&seed_label, &format!("wrote calibration.json to {}", out.display()));
    Ok(())
}

// ---------------------------------------------------------------- gof

pub fn cmd_gof(
    data: &LoadedData,
    family: CountFamily,
    out: &Path,
    seed_label: &str,
) -> Result<(), AppError> {
    let ds = &data.dataset;
    log(seed_label, &format!("fitting {} model: n={}, p={}", family.name(), ds.n(), ds.p()));
    let fit: MediatorFit = fit_mediator_model(ds, family, &FitOptions::default())?;
    let report = goodness_of_fit(&fit, ds)?;
    let mut w = csv::Writer::from_path(out.join("gof.csv"))?;
    w.write_record(["taxon", "statistic", "df", "p_value", "pass", "cells"])?;
    for t in &report.taxa {
        let cells = t
            .observed
            .iter()
            .zip(&t.expected)
            .map(|(o, e)| format!("{o}:{e:.3}"))
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            data.taxa[t.taxon].clone(),
            fmt(t.statistic),
            t.df.to_string(),
            fmt(t.p_value),
            t.pass.to_string(),
            cells,
        ])?;
    }
    w.flush()?;
    log(seed_label, &format!("wrote gof.csv to {}", out.display()));
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
