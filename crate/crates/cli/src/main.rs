//! Command-line front end for mediation analysis with zero-inflated count
//! mediators: model fitting, fiducial/delta/bootstrap intervals, simulation
//! studies, Wishart degrees-of-freedom calibration, and goodness of fit.

mod commands;
mod config;
mod error;
mod input;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use zimed_core::family::CountFamily;
use zimed_core::fiducial::{EigenNorm, DEFAULT_EQUIV_GRID, DEFAULT_EQUIV_TOL};
use zimed_core::sim::{MethodKind, ScenarioConfig};

use commands::{CalibrateOpts, MediateOpts, SimulateOpts};
use config::{pick, pick_opt, FileConfig, MediatorSel, SchemaSpec};
use error::AppError;
use input::{load_dataset, LoadedData};

#[derive(Parser)]
#[command(
    name = "zimed",
    version,
    about = "Causal mediation analysis with zero-inflated count mediators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the exposure and mediator models; write fit.json plus descriptive
    /// summaries (summary.csv, depth.csv).
    Fit(FitArgs),
    /// Full mediation pipeline: fiducial intervals for NDE/NIE plus optional
    /// delta and bootstrap comparators (report.json, report.csv, draws.csv).
    Mediate(MediateArgs),
    /// Run a simulation scenario or preset grid (scenario_results.csv).
    Simulate(SimulateArgs),
    /// Calibrate the Wishart degrees of freedom (calibration.json).
    #[command(name = "calibrate-n")]
    CalibrateN(CalibrateArgs),
    /// Per-taxon chi-square goodness of fit of the mediator model (gof.csv).
    Gof(GofArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file; command-line flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Count family: poisson, zip, nb, zinb.
    #[arg(long)]
    family: Option<String>,
    /// Output directory (default: $ZIMED_OUT, else current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; required for stochastic commands, never defaulted from the clock.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Subject-id column name (default "id"; omitted silently if absent).
    #[arg(long)]
    id_col: Option<String>,
    /// Exposure column name (default "exposure").
    #[arg(long)]
    exposure_col: Option<String>,
    /// Exposure-model confounder columns (default: the --c2-cols).
    #[arg(long, value_delimiter = ',')]
    c1_cols: Option<Vec<String>>,
    /// Mediator-model confounder columns (default "confounder").
    #[arg(long, value_delimiter = ',')]
    c2_cols: Option<Vec<String>>,
    /// Outcome covariate columns (default "covariate"; omitted silently if absent).
    #[arg(long, value_delimiter = ',')]
    c3_cols: Option<Vec<String>>,
    /// Explicit mediator columns (overrides --mediator-prefix).
    #[arg(long, value_delimiter = ',')]
    mediator_cols: Option<Vec<String>>,
    /// Prefix selecting mediator columns (default "taxon").
    #[arg(long)]
    mediator_prefix: Option<String>,
    /// Sequencing-depth offset column (default "offset").
    #[arg(long)]
    offset_col: Option<String>,
    /// Outcome column (default "outcome").
    #[arg(long)]
    outcome_col: Option<String>,
    /// Unassigned-read counts added to per-subject depth in summaries.
    #[arg(long)]
    unassigned_col: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct MediateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of fiducial draws (minimum 500).
    #[arg(long)]
    k: Option<usize>,
    /// Wishart degrees of freedom, or "auto" to calibrate.
    #[arg(long)]
    n: Option<String>,
    /// Two-sided interval level complement.
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated interval methods: fiducial,delta,npb.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Bootstrap resamples when npb is requested.
    #[arg(long)]
    npb_reps: Option<usize>,
    /// Condition the fiducial draws on the empirical Bayes random effects
    /// instead of marginalizing over the fitted random-effect law.
    #[arg(long)]
    conditional: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Named scenario grid (available: fig5).
    #[arg(long)]
    preset: Option<String>,
    /// Monte Carlo replications per scenario cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Fiducial draws per replication.
    #[arg(long)]
    k: Option<usize>,
    /// Bootstrap resamples per replication when npb is requested.
    #[arg(long)]
    npb_reps: Option<usize>,
    /// Pin the Wishart degrees of freedom (default: calibrate per cell).
    #[arg(long)]
    n_equiv: Option<usize>,
    /// Comma-separated methods to score: fiducial,delta,npb.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Two-sided interval level complement.
    #[arg(long)]
    alpha: Option<f64>,
    /// Sample size for a single (non-preset) scenario.
    #[arg(long)]
    n: Option<usize>,
    /// Number of mediators for a single scenario.
    #[arg(long)]
    p: Option<usize>,
    /// Zero-inflation probability for a single scenario.
    #[arg(long)]
    pi: Option<f64>,
    /// Dispersion for a single scenario.
    #[arg(long)]
    phi: Option<f64>,
    /// Exposure effect on the mediator mean for a single scenario.
    #[arg(long)]
    beta1: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Candidate degrees-of-freedom grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Eigenvalue-distance tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Eigenvalue norm: l1 or l2.
    #[arg(long)]
    norm: Option<String>,
}

#[derive(Args)]
struct GofArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("{e}");
        std::process::exit(e.code());
    }
}

struct Resolved {
    file: FileConfig,
    family: CountFamily,
    out: PathBuf,
    seed: Option<u64>,
    schema: SchemaSpec,
    input: Option<PathBuf>,
}

fn resolve_common(common: &CommonArgs) -> Result<Resolved, AppError> {
    let file = FileConfig::load(common.config.as_deref())?;

    if let Some(threads) = pick_opt(common.threads, file.threads) {
        // idempotent across tests in one process; later calls are no-ops
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }

    let family_str = pick(common.family.clone(), file.family.clone(), "zinb".into());
    let family = CountFamily::from_str(&family_str).map_err(AppError::Usage)?;

    let out = pick_opt(common.out.clone(), file.out.clone())
        .or_else(|| std::env::var_os("ZIMED_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)
        .map_err(|e| AppError::Io(format!("cannot create output dir {}: {e}", out.display())))?;

    let fs = file.schema.clone().unwrap_or_default();
    let c2 = pick(common.c2_cols.clone(), fs.c2_cols, vec!["confounder".into()]);
    let c3_given = common.c3_cols.is_some() || fs.c3_cols.is_some();
    let id_given = common.id_col.is_some() || fs.id_col.is_some();
    let mediators = match pick_opt(common.mediator_cols.clone(), fs.mediator_cols) {
        Some(cols) => MediatorSel::Cols(cols),
        None => MediatorSel::Prefix(pick(
            common.mediator_prefix.clone(),
            fs.mediator_prefix,
            "taxon".into(),
        )),
    };
    let schema = SchemaSpec {
        id: Some(pick(common.id_col.clone(), fs.id_col, "id".into())),
        exposure: pick(common.exposure_col.clone(), fs.exposure_col, "exposure".into()),
        c1: pick(common.c1_cols.clone(), fs.c1_cols, c2.clone()),
        c2,
        c3: pick(common.c3_cols.clone(), fs.c3_cols, vec!["covariate".into()]),
        mediators,
        offset: pick(common.offset_col.clone(), fs.offset_col, "offset".into()),
        outcome: pick(common.outcome_col.clone(), fs.outcome_col, "outcome".into()),
        unassigned: pick_opt(common.unassigned_col.clone(), fs.unassigned_col),
        c3_optional: !c3_given,
        id_optional: !id_given,
    };

    Ok(Resolved {
        seed: pick_opt(common.seed, file.seed),
        input: pick_opt(common.input.clone(), file.input.clone()),
        file,
        family,
        out,
        schema,
    })
}

fn require_input(r: &Resolved) -> Result<LoadedData, AppError> {
    let path = r
        .input
        .as_deref()
        .ok_or_else(|| AppError::Usage("--input is required for this command".into()))?;
    load_dataset(path, &r.schema)
}

fn require_seed(r: &Resolved) -> Result<u64, AppError> {
    r.seed.ok_or_else(|| {
        AppError::Usage("--seed is required for stochastic commands (no clock default)".into())
    })
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Fit(args) => {
            let r = resolve_common(&args.common)?;
            let data = require_input(&r)?;
            let label = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
            commands::cmd_fit(&data, r.family, &r.out, &label)
        }
        Command::Gof(args) => {
            let r = resolve_common(&args.common)?;
            let data = require_input(&r)?;
            let label = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
            commands::cmd_gof(&data, r.family, &r.out, &label)
        }
        Command::Mediate(args) => {
            let r = resolve_common(&args.common)?;
            let seed = require_seed(&r)?;
            let data = require_input(&r)?;
            let n_str = pick(args.n.clone(), r.file.n.clone(), "auto".into());
            let n_equiv = match n_str.as_str() {
                "auto" => None,
                s => Some(s.parse::<usize>().map_err(|_| {
                    AppError::Usage(format!("--n must be a positive integer or 'auto', got '{s}'"))
                })?),
            };
            let methods = pick(
                args.methods.clone(),
                r.file.methods.clone(),
                vec!["fiducial".into(), "delta".into(), "npb".into()],
            );
            for m in &methods {
                if !matches!(m.as_str(), "fiducial" | "delta" | "npb") {
                    return Err(AppError::Usage(format!("unknown method '{m}'")));
                }
            }
            let opts = MediateOpts {
                family: r.family,
                k: pick(args.k, r.file.k, 2000),
                n_equiv,
                alpha: pick(args.alpha, r.file.alpha, 0.05),
                with_delta: methods.iter().any(|m| m == "delta"),
                with_npb: methods.iter().any(|m| m == "npb"),
                npb_reps: pick(args.npb_reps, r.file.npb_reps, 1000),
                conditional: args.conditional || r.file.conditional.unwrap_or(false),
                seed,
            };
            let input_label = r.input.as_deref().unwrap().display().to_string();
            commands::cmd_mediate(&data, &opts, &input_label, &r.out)
        }
        Command::Simulate(args) => {
            let r = resolve_common(&args.common)?;
            let seed = require_seed(&r)?;
            let methods_str = pick(
                args.methods.clone(),
                r.file.methods.clone(),
                vec!["fiducial".into(), "delta".into(), "npb".into()],
            );
            let methods: Vec<MethodKind> = methods_str
                .iter()
                .map(|m| match m.as_str() {
                    "fiducial" => Ok(MethodKind::Fiducial),
                    "delta" => Ok(MethodKind::Delta),
                    "npb" => Ok(MethodKind::Npb),
                    other => Err(AppError::Usage(format!("unknown method '{other}'"))),
                })
                .collect::<Result<_, _>>()?;
            let mut base = ScenarioConfig {
                fit_family: r.family,
                replications: pick(args.reps, r.file.reps, 1000),
                methods,
                seed,
                alpha: pick(args.alpha, r.file.alpha, 0.05),
                k_fiducial: pick(args.k, r.file.k, 1000),
                n_equiv: args.n_equiv,
                npb_reps: pick(args.npb_reps, r.file.npb_reps, 200),
                ..ScenarioConfig::default()
            };
            if let Some(n) = args.n {
                base.n = n;
            }
            if let Some(p) = args.p {
                base.p = p;
                base.pi = vec![base.pi[0]; p];
                base.phi = vec![base.phi[0]; p];
                base.beta = vec![base.beta[0]; p];
            }
            if let Some(pi) = args.pi {
                base.pi = vec![pi; base.p];
            }
            if let Some(phi) = args.phi {
                base.phi = vec![phi; base.p];
            }
            if let Some(b1) = args.beta1 {
                for b in &mut base.beta {
                    b.1 = b1;
                }
            }
            let opts = SimulateOpts {
                preset: pick_opt(args.preset.clone(), r.file.preset.clone()),
                base,
            };
            commands::cmd_simulate(&opts, &r.out)
        }
        Command::CalibrateN(args) => {
            let r = resolve_common(&args.common)?;
            let seed = require_seed(&r)?;
            let data = require_input(&r)?;
            let norm = match args.norm.as_deref().unwrap_or("l2") {
                "l1" => EigenNorm::L1,
                "l2" => EigenNorm::L2,
                other => return Err(AppError::Usage(format!("unknown norm '{other}'"))),
            };
            let opts = CalibrateOpts {
                family: r.family,
                grid: args.grid.clone().unwrap_or_else(|| DEFAULT_EQUIV_GRID.to_vec()),
                tol: args.tol.unwrap_or(DEFAULT_EQUIV_TOL),
                norm,
                seed,
            };
            commands::cmd_calibrate(&data, &opts, &r.out)
        }
    }
}
