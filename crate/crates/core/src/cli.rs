//! Command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::basis::{make_grid, make_spline_basis, TimeGrid};
use crate::error::{Error, Result};
use crate::evaluate::{
    baseline_pmean, baseline_rmean, cross_validate, make_holdout_splits, make_splits, mse, principal_components,
    run_sweep, SplitSpec, SweepConfig,
};
use crate::io;
use crate::masked::{grid_observations, CollisionPolicy, GriddedData, Mask, MaskedMatrix, ObservationSet, TreatmentMatrix};
use crate::simulate::{generate_dataset, generate_gdi_like, GdiLikeConfig, SimConfig};
use crate::solver::{predict, FitResult, Method, Problem, SolverConfig};

pub const OUT_DIR_ENV: &str = "CSIMPUTE_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "csimpute", version, about = "Coordinatewise soft-impute for sparse longitudinal data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit CSI or SLI to long-format observations.
    Fit(FitArgs),
    /// Run the simulation sweep over (mu, rho) cells.
    Sweep(SweepArgs),
    /// Score predictions on held-out entries.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cohort {
    /// Gridded low-rank mixture model.
    Grid,
    /// Irregular visits resembling a gait-index clinic cohort.
    GdiLike,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = Cohort::Grid)]
    pub cohort: Cohort,
    /// Patients.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Grid points.
    #[arg(long, default_value_t = 51)]
    pub t: usize,
    /// Basis dimension.
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    /// Additive treatment effect.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Observation rate.
    #[arg(long, default_value_t = 0.3)]
    pub rho: f64,
    /// Noise standard deviation (grid cohort).
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Collisions {
    Error,
    Average,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Observations CSV (`patient_id,time,value`).
    #[arg(long)]
    pub obs: PathBuf,
    /// Treatments CSV (`patient_id,treatment_time`).
    #[arg(long)]
    pub treatments: Option<PathBuf>,
    /// Number of grid points.
    #[arg(long = "t-grid", default_value_t = 51)]
    pub t_grid: usize,
    /// Grid start; defaults to the earliest observation time.
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Grid end; defaults to the latest observation time.
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, value_enum, default_value_t = Collisions::Error)]
    pub collisions: Collisions,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Fraction of observed entries held out as a test set.
    #[arg(long, default_value_t = 0.0)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Draw validation and test entries only from patients with at least
    /// this many observed cells.
    #[arg(long)]
    pub holdout_min_visits: Option<usize>,
    /// Size of each validation fold as a fraction of all observed entries
    /// (with `--holdout-min-visits`).
    #[arg(long, default_value_t = 0.05)]
    pub fold_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "csi")]
    pub method: Method,
    /// Basis dimension.
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    #[arg(long, conflicts_with = "cv")]
    pub lambda: Option<f64>,
    /// Select lambda by cross-validation over `--lambda-grid`.
    #[arg(long)]
    pub cv: bool,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub lambda_grid: Vec<f64>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Subtract the mean of the training entries before fitting and add it
    /// back to the predictions.
    #[arg(long)]
    pub center: bool,
    /// Number of principal curves to export.
    #[arg(long, default_value_t = 0)]
    pub top_pc: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,5")]
    pub mu: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub rho: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub replications: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.1)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 51)]
    pub t: usize,
    #[arg(long, default_value_t = 7)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Predictions as `name=path` to a headerless N x T CSV; repeatable.
    #[arg(long = "pred", value_parser = parse_named)]
    pub predictions: Vec<(String, PathBuf)>,
    /// Zero-one N x T CSV of evaluation entries.
    #[arg(long, conflicts_with = "test_frac")]
    pub mask: Option<PathBuf>,
    /// Draw the evaluation entries at random instead of reading `--mask`.
    #[arg(long)]
    pub test_frac: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add pMean and rMean rows.
    #[arg(long)]
    pub baselines: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

fn parse_named(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Ok((
            Path::new(s).file_stem().map_or("pred".into(), |f| f.to_string_lossy().into_owned()),
            PathBuf::from(s),
        )),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// Collects written files and emits the manifest at the end.
struct Run {
    dir: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(self, command: &str, config: impl Serialize, seed: u64, inputs: &[PathBuf]) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs: digests(inputs)?,
            outputs: digests(&self.outputs)?,
        };
        let mut w = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        io::write_json(&mut w, &manifest)?;
        w.flush()?;
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::SvdFailure => EXIT_FAILURE,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let mut run = Run::new(&a.out.out)?;
    match a.cohort {
        Cohort::Grid => {
            if !(a.rho > 0.0 && a.rho <= 1.0) {
                return Err(Error::InvalidConfig(format!("--rho must be in (0, 1], got {}", a.rho)));
            }
            let config = SimConfig {
                mu: a.mu,
                rho: a.rho,
                noise_sd: a.noise_sd,
                seed: a.seed,
                ..SimConfig::with_dims(a.n, a.t, a.k)
            };
            let sim = generate_dataset(&config)?;
            let ids: Vec<String> = (0..a.n).map(|i| format!("P{i:05}")).collect();
            let records = io::gridded_to_records(&sim.observed, &sim.treatments, sim.basis.grid(), &ids)?;
            run.write("observations.csv", |w| io::write_observations(w, &records))?;
            run.write("treatments.csv", |w| io::write_treatments(w, &records))?;
            run.write("truth.json", |w| io::write_json(w, &io::SimSidecar::from_output(&sim, &ids)))?;
            eprintln!(
                "simulated {} x {} grid, {} observed entries ({:.3} of cells)",
                a.n,
                a.t,
                sim.observed.mask().count(),
                sim.observed.mask().count() as f64 / (a.n * a.t) as f64
            );
            run.finish("simulate", &config, a.seed, &[])?;
        }
        Cohort::GdiLike => {
            let config = GdiLikeConfig {
                patients: a.n,
                mu: a.mu,
                seed: a.seed,
                ..GdiLikeConfig::default()
            };
            let out = generate_gdi_like(&config)?;
            run.write("observations.csv", |w| io::write_observations(w, &out.observations))?;
            run.write("treatments.csv", |w| io::write_treatments(w, &out.observations))?;
            run.write("truth.json", |w| io::write_json(w, &config))?;
            let visits: usize = out.observations.patients.iter().map(|p| p.times.len()).sum();
            eprintln!("simulated {} patients, {visits} visits", a.n);
            run.finish("simulate", &config, a.seed, &[])?;
        }
    }
    Ok(EXIT_OK)
}

fn load(data: &DataArgs) -> Result<(ObservationSet, TimeGrid, GriddedData, Vec<PathBuf>)> {
    let treatments = data.treatments.as_deref().map(open).transpose()?;
    let obs = io::read_observations(open(&data.obs)?, treatments)?;
    if obs.is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let times = obs.patients.iter().flat_map(|p| p.times.iter().copied());
    let (lo, hi) = times.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let grid = make_grid(data.t_min.unwrap_or(lo), data.t_max.unwrap_or(hi), data.t_grid)?;
    let policy = match data.collisions {
        Collisions::Error => CollisionPolicy::Error,
        Collisions::Average => CollisionPolicy::Average,
    };
    let gridded = grid_observations(&obs, &grid, policy)?;
    if gridded.collisions > 0 {
        eprintln!("warning: {} observations merged into occupied grid cells", gridded.collisions);
    }
    let mut inputs = vec![data.obs.clone()];
    inputs.extend(data.treatments.clone());
    Ok((obs, grid, gridded, inputs))
}

fn splits_for(g: &GriddedData, s: &SplitArgs) -> Result<SplitSpec> {
    match s.holdout_min_visits {
        Some(min) => {
            let mask = g.y.mask();
            let rows: Vec<bool> = (0..mask.nrows()).map(|i| mask.row_count(i) >= min).collect();
            let eligible = Mask::from_fn(mask.nrows(), mask.ncols(), |i, _| rows[i]);
            make_holdout_splits(&g.y, &eligible, s.folds, s.fold_frac, s.test_frac, s.seed)
        }
        None => make_splits(&g.y, s.folds, s.test_frac, s.seed),
    }
}

#[derive(Serialize)]
struct FitManifestConfig<'a> {
    method: Method,
    k: usize,
    t_grid: usize,
    t_min: f64,
    t_max: f64,
    lambda: Option<f64>,
    cv: bool,
    lambda_grid: &'a [f64],
    folds: usize,
    test_frac: f64,
    holdout_min_visits: Option<usize>,
    fold_frac: f64,
    center: bool,
    top_pc: usize,
    solver: &'a SolverConfig,
}

pub fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let (_, grid, g, inputs) = load(&a.data)?;
    let basis = make_spline_basis(&grid, a.k)?;
    let solver = SolverConfig {
        lambda: a.lambda.unwrap_or(1.0),
        tolerance: a.tol,
        max_iter: a.max_iter,
        ..SolverConfig::default()
    };
    solver.validate()?;
    let untreated = TreatmentMatrix::untreated(g.y.nrows(), g.y.ncols());
    let treatments = match a.method {
        Method::Csi => &g.treatments,
        Method::Sli => &untreated,
    };
    let mut run = Run::new(&a.out.out)?;

    let needs_split = a.cv || a.split.test_frac > 0.0;
    let splits = if needs_split { Some(splits_for(&g, &a.split)?) } else { None };
    let offset = if a.center {
        let train = splits.as_ref().map_or_else(|| g.y.mask().clone(), |s| s.train.clone());
        let (sum, n) = g.y.observed().filter(|&(i, j, _)| train.get(i, j)).fold((0.0, 0usize), |(s, n), (_, _, v)| (s + v, n + 1));
        sum / n.max(1) as f64
    } else {
        0.0
    };
    let y_fit = MaskedMatrix::new(g.y.raw_values().map(|v| v - offset), g.y.mask().clone())?;
    let fit: FitResult = if a.cv {
        let splits = splits.as_ref().expect("split computed");
        let cv = cross_validate(&y_fit, treatments, &basis, &a.lambda_grid, splits, a.method, &solver)?;
        run.write("cv.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["lambda", "fold", "mse"])?;
            for row in &cv.table {
                for (f, m) in row.fold_mse.iter().enumerate() {
                    c.write_record([io::fmt_num(row.lambda), f.to_string(), io::fmt_num(*m)])?;
                }
            }
            c.flush()?;
            Ok(())
        })?;
        eprintln!("cross-validation selected lambda = {}", cv.lambda_star);
        cv.fit
    } else {
        let lambda = a.lambda.ok_or_else(|| Error::InvalidConfig("give --lambda or --cv".into()))?;
        let y = match &splits {
            Some(s) => y_fit.restrict(&s.train)?,
            None => y_fit,
        };
        Problem::new(&y, treatments, &basis)?.fit(a.method, &SolverConfig { lambda, ..solver.clone() })?
    };

    let y_hat = predict(&fit.w, fit.mu, treatments, &basis)?.add_scalar(offset);
    let test_mse = match &splits {
        Some(s) if !s.test.is_empty() => Some(mse(&g.y, &y_hat, &s.test)?),
        _ => None,
    };
    let doc = io::FitDocument {
        patient_ids: g.patient_ids.clone(),
        test_mse,
        offset,
        ..io::FitDocument::from_fit(&fit)
    };
    run.write("fit.json", |w| io::write_json(w, &doc))?;
    run.write("predictions.csv", |w| io::write_matrix(w, &y_hat))?;
    run.write("basis.csv", |w| io::write_basis(w, &basis))?;
    if let Some(s) = splits.as_ref().filter(|s| !s.test.is_empty()) {
        run.write("test_mask.csv", |w| io::write_mask(w, &s.test))?;
    }
    if a.top_pc > 0 {
        let pcs = principal_components(&fit.w, &basis, a.top_pc)?;
        run.write("pcs.csv", |w| io::write_curves(w, &grid, &pcs))?;
    }
    eprintln!(
        "{}: lambda = {}, mu = {}, iterations = {}, converged = {}{}",
        fit.method,
        fit.lambda,
        fit.mu,
        fit.iterations,
        fit.converged,
        test_mse.map(|m| format!(", test MSE = {m}")).unwrap_or_default()
    );
    let config = FitManifestConfig {
        method: a.method,
        k: a.k,
        t_grid: a.data.t_grid,
        t_min: grid.t_min(),
        t_max: grid.t_max(),
        lambda: a.lambda,
        cv: a.cv,
        lambda_grid: &a.lambda_grid,
        folds: a.split.folds,
        test_frac: a.split.test_frac,
        holdout_min_visits: a.split.holdout_min_visits,
        fold_frac: a.split.fold_frac,
        center: a.center,
        top_pc: a.top_pc,
        solver: &solver,
    };
    run.finish("fit", &config, a.split.seed, &inputs)?;
    if !fit.converged {
        eprintln!("warning: solver stopped at max_iter without converging");
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<i32> {
    let config = SweepConfig {
        mu_values: a.mu.clone(),
        rho_values: a.rho.clone(),
        lambda_grid: a.lambda_grid.clone(),
        replications: a.replications,
        folds: a.folds,
        test_frac: a.test_frac,
        seed: a.seed,
        sim: SimConfig::with_dims(a.n, a.t, a.k),
        solver: SolverConfig {
            max_iter: a.max_iter,
            ..SolverConfig::default()
        },
    };
    if let Some(bad) = config.rho_values.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidConfig(format!("--rho values must be in (0, 1], got {bad}")));
    }
    let result = run_sweep(&config)?;
    let summary = result.summary();
    let mut run = Run::new(&a.out.out)?;
    run.write("sweep.csv", |w| io::write_sweep(w, &result))?;
    run.write("table.csv", |w| io::write_table(w, &summary))?;
    run.write("plot.csv", |w| io::write_plot_data(w, &summary))?;
    for c in &summary {
        eprintln!(
            "{} rho={} mu={}: MSE {:.4} (sd {:.4}), RSE {:.3e}",
            c.method, c.rho, c.mu, c.mse_mean, c.mse_sd, c.rse_mean
        );
    }
    run.finish("sweep", &config, a.seed, &[])?;
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let (_, _, g, mut inputs) = load(&a.data)?;
    let shape = g.y.shape();
    let eval_mask = match (&a.mask, a.test_frac) {
        (Some(path), _) => {
            inputs.push(path.clone());
            let m = io::read_mask(open(path)?)?;
            if m.shape() != shape {
                return Err(Error::ShapeMismatch { expected: shape, got: m.shape() });
            }
            m
        }
        (None, Some(frac)) => make_splits(&g.y, 2, frac, a.seed)?.test,
        (None, None) => return Err(Error::InvalidConfig("give --mask or --test-frac".into())),
    };
    if !eval_mask.is_subset_of(g.y.mask()) {
        return Err(Error::MaskNotSubset);
    }
    let mut rows: Vec<(String, f64)> = Vec::new();
    for (name, path) in &a.predictions {
        inputs.push(path.clone());
        let y_hat = io::read_matrix(open(path)?)?;
        rows.push((name.clone(), mse(&g.y, &y_hat, &eval_mask)?));
    }
    if a.baselines {
        rows.push(("pmean".into(), mse(&g.y, &baseline_pmean(&g.y, &eval_mask)?, &eval_mask)?));
        rows.push(("rmean".into(), mse(&g.y, &baseline_rmean(&g.y, &eval_mask)?, &eval_mask)?));
    }
    if rows.is_empty() {
        return Err(Error::InvalidConfig("nothing to evaluate: give --pred or --baselines".into()));
    }
    let n = eval_mask.count();
    let mut run = Run::new(&a.out.out)?;
    run.write("metrics.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["method", "mse", "entries"])?;
        for (name, m) in &rows {
            c.write_record([name.clone(), io::fmt_num(*m), n.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    for (name, m) in &rows {
        eprintln!("{name}: MSE {m:.6} over {n} entries");
    }
    let config = serde_json::json!({
        "predictions": a.predictions.iter().map(|(n, p)| (n.clone(), p.display().to_string())).collect::<Vec<_>>(),
        "test_frac": a.test_frac,
        "baselines": a.baselines,
        "t_grid": a.data.t_grid,
    });
    run.finish("eval", &config, a.seed, &inputs)?;
    Ok(EXIT_OK)
}
