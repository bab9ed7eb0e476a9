//! The `hbspline` command-line interface.
//!
//! Every command writes into `--out` (default `$HBSPLINE_RUN_ROOT/<command>`,
//! with `runs` as the root) and echoes its resolved settings to
//! `config.json` there. Settings resolve as flag, then `--config` file, then
//! default. Exit codes: 0 success, 1 error, 2 diagnostics failed under
//! `--strict-diagnostics`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::FleetRecords;
use crate::datagen::{generate, FleetScenario};
use crate::error::{Error, Result};
use crate::eval::{
    holdout_cv, knot_sweep, loo_ship_cv, new_type_eval, score_artifact, scored_csv, CvConfig,
};
use crate::forecast::{
    curve_for_new_ship, curve_for_new_type, curve_for_ship, curve_with_qualitative_prior,
    distances_csv, type_distance_table, ForecastOptions, NewShipVariant, Scale,
};
use crate::workflow::{fit, posterior_predictive_check, FitArtifact, FitConfig, DEFAULT_PPC_REPLICATES};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_DIAGNOSTICS: u8 = 2;

const RUN_ROOT_ENV: &str = "HBSPLINE_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(name = "hbspline", version, about = "Hierarchical B-spline failure-rate forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic fleet with ground truth.
    Simulate(SimulateArgs),
    /// Fit the hierarchical model and save the artifact.
    Fit(FitArgs),
    /// Convergence diagnostics and posterior predictive checks of an artifact.
    Diagnose(DiagnoseArgs),
    /// Forecast a curve from a fitted artifact.
    Forecast(ForecastArgs),
    /// RMSE of the fitted ship curves against observations.
    Evaluate(EvaluateArgs),
    /// Cross-validation against pooling baselines.
    Cv(CvArgs),
    /// Pairwise distances between fitted type curves.
    Distances(DistancesArgs),
    /// Cross-validated choice of the number of interior knots.
    SweepKnots(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SamplerFlags {
    /// Number of interior knots.
    #[arg(long)]
    knots: Option<usize>,
    /// Length of the age grid.
    #[arg(long)]
    lifecycle: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

impl SamplerFlags {
    fn apply(&self, cfg: &mut FitConfig, seed: Option<u64>) {
        if let Some(v) = self.knots {
            cfg.n_interior_knots = v;
        }
        if let Some(v) = self.lifecycle {
            cfg.lifecycle = Some(v);
        }
        if let Some(v) = self.chains {
            cfg.sampler.n_chains = v;
        }
        if let Some(v) = self.warmup {
            cfg.sampler.n_warmup = v;
        }
        if let Some(v) = self.samples {
            cfg.sampler.n_samples = v;
        }
        if let Some(v) = seed {
            cfg.sampler.seed = v;
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Fleet CSV with columns ship_id,engine_type,age,failure_rate.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: SamplerFlags,
    /// Exit with code 2 when diagnostics fail.
    #[arg(long)]
    strict_diagnostics: bool,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Posterior predictive replicates; 0 skips the check.
    #[arg(long, default_value_t = DEFAULT_PPC_REPLICATES)]
    ppc_replicates: usize,
    #[arg(long)]
    strict_diagnostics: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Ship,
    NewShip,
    NewType,
    Qualitative,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    PlugIn,
    Hierarchical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Transformed,
    Original,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long, value_enum)]
    mode: Mode,
    /// Ship id (mode ship).
    #[arg(long)]
    ship: Option<String>,
    /// Engine type (mode new-ship), or the donor type (mode qualitative).
    #[arg(long = "type")]
    engine_type: Option<String>,
    #[arg(long, value_enum, default_value = "plug-in")]
    variant: VariantArg,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, value_enum, default_value = "transformed")]
    scale: ScaleArg,
    /// Include observation noise.
    #[arg(long)]
    predictive: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Records to score; defaults to the training data.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Protocol {
    Loo,
    Holdout,
    NewType,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "holdout")]
    protocol: Protocol,
    /// Comma-separated engine types held out (protocol new-type).
    #[arg(long, value_delimiter = ',')]
    holdout_types: Vec<String>,
    #[arg(long)]
    folds: Option<usize>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: SamplerFlags,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated interior knot counts.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5, 6, 7, 8])]
    candidates: Vec<usize>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sampler: SamplerFlags,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Forecast(a) => forecast(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Cv(a) => cv(a),
        Command::Distances(a) => distances(a),
        Command::SweepKnots(a) => sweep(a),
    }
}

fn out_dir(common: &Common, command: &str) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    });
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Validation(format!("cannot read {}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<u8> {
    let scenario: FleetScenario = load_config(a.common.config.as_deref())?;
    let seed = a.common.seed.unwrap_or(0);
    let dir = out_dir(&a.common, "simulate")?;
    let fleet = generate(&scenario, seed)?;
    write_json(&dir, "config.json", &scenario)?;
    fleet.records.write_csv(dir.join("fleet.csv"))?;
    write_json(&dir, "truth.json", &fleet.truth)?;
    println!(
        "{} observations for {} ships written to {}",
        fleet.records.len(),
        fleet.records.ship_ids().len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn fit_cmd(a: FitArgs) -> Result<u8> {
    let mut cfg: FitConfig = load_config(a.common.config.as_deref())?;
    a.sampler.apply(&mut cfg, a.common.seed);
    let records = FleetRecords::read_csv(&a.data)?;
    let dir = out_dir(&a.common, "fit")?;
    write_json(&dir, "config.json", &cfg)?;
    let art = fit(&records, &cfg)?;
    art.save(&dir)?;
    print!("{}", summary_text(&art));
    println!("artifact written to {}", dir.display());
    Ok(diagnostics_code(&art, a.strict_diagnostics))
}

fn summary_text(art: &FitArtifact) -> String {
    let d = &art.meta.diagnostics;
    let fmt = |v: Option<f64>| v.map_or_else(|| "nan".into(), |x| format!("{x:.4}"));
    let mut out = format!(
        "converged: {}\nmax R-hat: {}\nmin n_eff: {}\n",
        art.meta.converged,
        fmt(d.max_rhat),
        fmt(d.min_n_eff)
    );
    for (c, (b, n)) in d.e_bfmi.iter().zip(&d.n_divergent).enumerate() {
        out += &format!("chain {}: E-BFMI {}, divergent {n}\n", c + 1, fmt(*b));
    }
    for w in &art.meta.warnings {
        out += &format!("warning: {w}\n");
    }
    out
}

fn diagnostics_code(art: &FitArtifact, strict: bool) -> u8 {
    if strict && !art.meta.converged {
        eprintln!("diagnostics failed");
        EXIT_DIAGNOSTICS
    } else {
        EXIT_OK
    }
}

#[derive(Serialize)]
struct DiagnoseSettings {
    artifact: PathBuf,
    ppc_replicates: usize,
    seed: u64,
}

fn diagnose(a: DiagnoseArgs) -> Result<u8> {
    let art = FitArtifact::load(&a.artifact)?;
    let dir = out_dir(&a.common, "diagnose")?;
    let settings = DiagnoseSettings {
        artifact: a.artifact.clone(),
        ppc_replicates: a.ppc_replicates,
        seed: a.common.seed.unwrap_or(art.meta.seed),
    };
    write_json(&dir, "config.json", &settings)?;
    let report = art.diagnostics().report(&art.meta.parameter_names);
    std::fs::write(dir.join("diagnostics.txt"), &report)?;
    print!("{}", summary_text(&art));
    if a.ppc_replicates > 0 {
        let ppc = posterior_predictive_check(&art, &art.training_data()?, a.ppc_replicates, settings.seed)?;
        write_json(&dir, "ppc.json", &ppc)?;
        for s in &ppc.statistics {
            println!("ppc {}: observed {:.4}, p = {:.3}", s.name, s.observed, s.p_value);
        }
    }
    Ok(diagnostics_code(&art, a.strict_diagnostics))
}

#[derive(Serialize)]
struct ForecastSettings {
    artifact: PathBuf,
    mode: String,
    ship: Option<String>,
    engine_type: Option<String>,
    variant: NewShipVariant,
    options: ForecastOptions,
}

fn forecast(a: ForecastArgs) -> Result<u8> {
    let art = FitArtifact::load(&a.artifact)?;
    let dir = out_dir(&a.common, "forecast")?;
    let mut opts: ForecastOptions = load_config(a.common.config.as_deref())?;
    if let Some(l) = a.level {
        opts.level = l;
    }
    if let Some(s) = a.common.seed {
        opts.seed = s;
    }
    opts.scale = match a.scale {
        ScaleArg::Transformed => Scale::Transformed,
        ScaleArg::Original => Scale::Original,
    };
    opts.predictive |= a.predictive;
    let variant = match a.variant {
        VariantArg::PlugIn => NewShipVariant::PlugIn,
        VariantArg::Hierarchical => NewShipVariant::Hierarchical,
    };
    let need = |v: &Option<String>, flag: &str| {
        v.clone()
            .ok_or_else(|| Error::Validation(format!("this mode requires --{flag}")))
    };
    let curve = match a.mode {
        Mode::Ship => curve_for_ship(&art, art.ship_index(&need(&a.ship, "ship")?)?, &opts)?,
        Mode::NewShip => {
            let e = art.type_index(&need(&a.engine_type, "type")?)?;
            curve_for_new_ship(&art, e, variant, &opts)?
        }
        Mode::NewType => curve_for_new_type(&art, &opts)?,
        Mode::Qualitative => {
            let e = art.type_index(&need(&a.engine_type, "type")?)?;
            curve_with_qualitative_prior(&art, e, &opts)?
        }
    };
    let settings = ForecastSettings {
        artifact: a.artifact.clone(),
        mode: format!("{:?}", a.mode).to_lowercase(),
        ship: a.ship.clone(),
        engine_type: a.engine_type.clone(),
        variant,
        options: opts,
    };
    write_json(&dir, "config.json", &settings)?;
    curve.write(&dir, "forecast")?;
    println!("{:>4} {:>10} {:>10} {:>10}", "age", "mean", "lower", "upper");
    for t in 0..curve.ages.len() {
        println!(
            "{:>4} {:>10.4} {:>10.4} {:>10.4}",
            curve.ages[t], curve.mean[t], curve.lower[t], curve.upper[t]
        );
    }
    Ok(EXIT_OK)
}

fn evaluate(a: EvaluateArgs) -> Result<u8> {
    let art = FitArtifact::load(&a.artifact)?;
    let dir = out_dir(&a.common, "evaluate")?;
    let records = match &a.data {
        Some(p) => FleetRecords::read_csv(p)?,
        None => art.records.clone(),
    };
    write_json(
        &dir,
        "config.json",
        &serde_json::json!({ "artifact": a.artifact, "data": a.data }),
    )?;
    let report = score_artifact(&art, &records)?;
    std::fs::write(dir.join("eval.csv"), report.to_csv_string())?;
    print!("{}", report.to_table());
    Ok(EXIT_OK)
}

fn cv_config(path: Option<&Path>, flags: &SamplerFlags, seed: Option<u64>) -> Result<CvConfig> {
    let mut cfg: CvConfig = load_config(path)?;
    flags.apply(&mut cfg.fit, seed);
    Ok(cfg)
}

fn cv(a: CvArgs) -> Result<u8> {
    let mut cfg = cv_config(a.common.config.as_deref(), &a.sampler, a.common.seed)?;
    if let Some(f) = a.folds {
        cfg.n_folds = f;
    }
    let records = FleetRecords::read_csv(&a.data)?;
    let dir = out_dir(&a.common, "cv")?;
    write_json(
        &dir,
        "config.json",
        &serde_json::json!({
            "protocol": format!("{:?}", a.protocol).to_lowercase(),
            "holdout_types": a.holdout_types,
            "cv": cfg,
        }),
    )?;
    let report = match a.protocol {
        Protocol::Loo | Protocol::Holdout => {
            let res = match a.protocol {
                Protocol::Loo => loo_ship_cv(&records, &cfg)?,
                _ => holdout_cv(&records, &cfg)?,
            };
            std::fs::write(dir.join("scored.csv"), scored_csv(&res.scored))?;
            write_json(&dir, "folds.json", &res.folds)?;
            res.report()
        }
        Protocol::NewType => {
            if a.holdout_types.is_empty() {
                return Err(Error::Validation(
                    "protocol new-type requires --holdout-types".into(),
                ));
            }
            for t in &a.holdout_types {
                if !records.type_ids().contains(t) {
                    return Err(Error::Index(format!("unknown engine type '{t}'")));
                }
            }
            let train = records.filter(|r| !a.holdout_types.contains(&r.engine_type));
            let test = records.filter(|r| a.holdout_types.contains(&r.engine_type));
            new_type_eval(&train, &test, &cfg.fit)?
        }
    };
    std::fs::write(dir.join("report.csv"), report.to_csv_string())?;
    print!("{}", report.to_table());
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(EXIT_OK)
}

fn distances(a: DistancesArgs) -> Result<u8> {
    let art = FitArtifact::load(&a.artifact)?;
    let dir = out_dir(&a.common, "distances")?;
    write_json(&dir, "config.json", &serde_json::json!({ "artifact": a.artifact }))?;
    let table = type_distance_table(&art)?;
    let csv = distances_csv(&table);
    std::fs::write(dir.join("distances.csv"), &csv)?;
    print!("{csv}");
    Ok(EXIT_OK)
}

fn sweep(a: SweepArgs) -> Result<u8> {
    let cfg = cv_config(a.common.config.as_deref(), &a.sampler, a.common.seed)?;
    let records = FleetRecords::read_csv(&a.data)?;
    let dir = out_dir(&a.common, "sweep-knots")?;
    write_json(
        &dir,
        "config.json",
        &serde_json::json!({ "candidates": a.candidates, "cv": cfg }),
    )?;
    let sweep = knot_sweep(&records, &a.candidates, &cfg)?;
    let csv = sweep.to_csv_string();
    std::fs::write(dir.join("sweep.csv"), &csv)?;
    print!("{csv}");
    match sweep.best {
        Some(k) => println!("best: {k} interior knots"),
        None => println!("no feasible candidate"),
    }
    Ok(EXIT_OK)
}
