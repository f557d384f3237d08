//! The `dynident` command line.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::excitation::{
    check_constraints, eval_trajectory, log_to_csv, optimize_trajectory, FourierTrajectory, OptimizeConfig,
};
use crate::identification::{
    relative_prediction_error, relative_prediction_error_base, solve_feasible, solve_ols_base, stack_problem,
    ParameterFile, PredictionError,
};
use crate::model::{load_model, validate_coupling, RobotModel};
use crate::regressor::reduction::{base_reduction, sample_states};
use crate::regressor::{stack_regressor, BaseReduction};
use crate::signals::{process_log, JointLog, ProcessOptions, ProcessedLog, DEFAULT_ORDER, DEFAULT_RAMP, DEFAULT_TAIL};
use crate::synthbench::{sample_feasible_parameters, simulate_log_with, GroundTruth};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERIC: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Random states used for the structural base-parameter reduction.
pub const REDUCTION_SAMPLES: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "dynident", version, about = "Dynamic model identification for dVRK-style manipulators")]
pub struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = "DYNIDENT_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Excitation trajectories.
    #[command(subcommand)]
    Traj(TrajCommand),
    /// Synthetic measurements.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Identify dynamic parameters from logs.
    Identify(IdentifyArgs),
    /// Score parameters on an independent log.
    Validate(ValidateArgs),
    /// Model inspection.
    #[command(subcommand)]
    Model(ModelCommand),
}

#[derive(Subcommand, Debug)]
pub enum TrajCommand {
    /// Optimize a Fourier excitation trajectory.
    Optimize(OptimizeArgs),
    /// Sample a trajectory file as a timestamped q/dq/ddq CSV.
    Export(ExportArgs),
}

#[derive(Subcommand, Debug)]
pub enum SimCommand {
    /// Simulate a log of a trajectory under random or given parameters.
    Generate(GenerateArgs),
}

#[derive(Subcommand, Debug)]
pub enum ModelCommand {
    /// Validate a model and report its parameter structure.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Fundamental frequency, Hz.
    #[arg(long)]
    pub ff: f64,
    /// Number of harmonics.
    #[arg(long)]
    pub nh: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 2)]
    pub periods: usize,
    /// Ramp-in duration, s.
    #[arg(long, default_value_t = DEFAULT_RAMP)]
    pub ramp: f64,
    /// L-BFGS iterations per penalty stage.
    #[arg(long, default_value_t = 80)]
    pub iterations: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub traj: PathBuf,
    /// Sampling rate, Hz.
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    /// Defaults to the trajectory's own duration.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub traj: PathBuf,
    /// Sampling rate, Hz.
    #[arg(long, default_value_t = 200.0)]
    pub rate: f64,
    /// Torque noise standard deviation as a fraction of each channel's range.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Position noise standard deviation, rad or m.
    #[arg(long, default_value_t = 0.0)]
    pub position_noise: f64,
    /// Seeds the parameters (unless `--truth` is given) and the noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reuse the parameters of an existing truth file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Defaults to the trajectory duration plus the default filter tail.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ProcessArgs {
    /// Low-pass cutoff, Hz; unfiltered when omitted.
    #[arg(long)]
    pub cutoff: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    /// Seconds dropped at the start of each log.
    #[arg(long, default_value_t = DEFAULT_RAMP)]
    pub ramp: f64,
    /// Seconds dropped at the end of each filtered log.
    #[arg(long, default_value_t = DEFAULT_TAIL)]
    pub tail: f64,
}

impl ProcessArgs {
    fn options(&self) -> ProcessOptions {
        ProcessOptions {
            cutoff: self.cutoff,
            order: self.order,
            ramp_duration: self.ramp,
            tail_duration: self.tail,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Physically consistent solve over all standard parameters.
    Feasible,
    /// Unconstrained least squares on the base parameters.
    OlsBase,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Log CSV; repeat to stack several logs.
    #[arg(long = "log", required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Feasible)]
    pub method: Method,
    #[command(flatten)]
    pub process: ProcessArgs,
    /// Seeds the base-parameter reduction.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Parameter file written by `identify`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    /// Ground-truth file, adds a parameter-recovery report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub process: ProcessArgs,
    /// Seeds the base-parameter reduction.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Write the stacked regressor and its reduction as CSV here.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

/// Everything needed to rerun a command.
#[derive(Serialize)]
pub struct RunManifest {
    command: String,
    tool_version: String,
    arguments: Vec<String>,
    seed: Option<u64>,
    model: Option<String>,
    inputs: Vec<FileHash>,
    outputs: Vec<String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>, model: Option<&Path>, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileHash {
                    path: p.display().to_string(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            arguments: std::env::args().skip(1).collect(),
            seed,
            model: model.map(|p| p.display().to_string()),
            inputs,
            outputs: Vec::new(),
        })
    }

    fn write(mut self, dir: &Path, outputs: &[&str]) -> Result<()> {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &(text + "\n"))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Exit status for an error: 1 for numeric and solver failures, 2 for bad
/// input.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::RankDeficient { .. } | Error::Infeasible(_) | Error::NoConvergence(_) | Error::NonFinite(_) => {
            EXIT_NUMERIC
        }
        _ => EXIT_USAGE,
    }
}

fn optimize(a: &OptimizeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let objective_model = model.for_trajectory_objective()?;
    let mut config = OptimizeConfig::new(a.ff, a.nh);
    config.seed = a.seed;
    config.restarts = a.restarts;
    config.periods = a.periods;
    config.ramp_duration = a.ramp;
    config.iterations_per_stage = a.iterations;
    let reduction = base_reduction(&objective_model, REDUCTION_SAMPLES, a.seed)?;
    let result = optimize_trajectory(&objective_model, &reduction, &config)?;
    let full_report = check_constraints(&model, &result.trajectory, config.check_grid)?;
    if !full_report.is_feasible() {
        let worst = full_report.worst().map(|w| w.name.clone()).unwrap_or_default();
        return Err(Error::Infeasible(format!("optimized trajectory violates `{worst}`")));
    }
    prepare_dir(&a.out)?;
    result.trajectory.save(a.out.join("trajectory.json"))?;
    write_file(&a.out.join("optimization_log.csv"), &log_to_csv(&result.log))?;
    RunManifest::new("traj optimize", Some(a.seed), Some(&a.model), &[&a.model])?
        .write(&a.out, &["trajectory.json", "optimization_log.csv"])?;
    println!("cond(W_b) = {:.3}", result.condition);
    println!("minimum constraint margin = {:.6}", full_report.min_margin());
    Ok(())
}

/// `t, q1..n, dq1..n, ddq1..n` sampled at `rate` over `[0, duration]`.
pub fn reference_csv(traj: &FourierTrajectory, rate: f64, duration: f64) -> Result<String> {
    if !(rate > 0.0 && rate.is_finite()) || !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument("rate and duration must be positive".into()));
    }
    let n_m = traj.motor_count();
    let mut out = String::from("t");
    for prefix in ["q", "dq", "ddq"] {
        for k in 1..=n_m {
            out.push_str(&format!(",{prefix}{k}"));
        }
    }
    out.push('\n');
    let n = (duration * rate).round() as usize + 1;
    for i in 0..n {
        let t = i as f64 / rate;
        let s = eval_trajectory(traj, t);
        out.push_str(&t.to_string());
        for v in s.q.iter().chain(s.dq.iter()).chain(s.ddq.iter()) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn export(a: &ExportArgs) -> Result<()> {
    let traj = FourierTrajectory::load(&a.traj)?;
    let csv = reference_csv(&traj, a.rate, a.duration.unwrap_or(traj.duration))?;
    prepare_dir(&a.out)?;
    write_file(&a.out.join("reference.csv"), &csv)?;
    RunManifest::new("traj export", None, None, &[&a.traj])?.write(&a.out, &["reference.csv"])
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let traj = FourierTrajectory::load(&a.traj)?;
    traj.check_model(&model)?;
    let report = check_constraints(&model, &traj, (traj.n_h * 20).max(1000))?;
    if !report.is_feasible() {
        let worst = report.worst().map(|w| w.name.clone()).unwrap_or_default();
        return Err(Error::Infeasible(format!("trajectory violates `{worst}` on this model")));
    }
    let mut truth = match &a.truth {
        Some(path) => GroundTruth::load(&model, path)?,
        None => sample_feasible_parameters(&model, a.seed)?,
    };
    truth.seed = a.seed;
    let truth = truth.with_noise(a.noise);
    let duration = a.duration.unwrap_or(traj.duration + DEFAULT_TAIL);
    let log = simulate_log_with(&model, &truth, &traj, a.rate, duration, a.position_noise)?;
    prepare_dir(&a.out)?;
    log.write_csv(a.out.join("log.csv"))?;
    truth.save(a.out.join("truth.json"))?;
    let mut inputs: Vec<&Path> = vec![&a.model, &a.traj];
    if let Some(t) = &a.truth {
        inputs.push(t);
    }
    RunManifest::new("sim generate", Some(a.seed), Some(&a.model), &inputs)?.write(&a.out, &["log.csv", "truth.json"])?;
    println!("{} samples at {} Hz over {:.3} s", log.len(), a.rate, duration);
    Ok(())
}

fn process(path: &Path, args: &ProcessArgs) -> Result<ProcessedLog> {
    process_log(&JointLog::read_csv(path)?, &args.options())
}

fn metrics_csv(model: &RobotModel, fit: &PredictionError, weights: &DVector<f64>) -> String {
    let mut s = String::from("motor,weight,rms_residual,relative_error_percent\n");
    for (k, name) in model.motor_names().iter().enumerate() {
        let e = fit.measured.column(k) - fit.predicted.column(k);
        let rms = (e.norm_squared() / e.len() as f64).sqrt();
        s.push_str(&format!("{name},{},{rms},{}\n", weights[k], fit.per_joint[k]));
    }
    s.push_str(&format!("overall,,,{}\n", fit.overall));
    s
}

fn identify(a: &IdentifyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let logs: Vec<ProcessedLog> = a.logs.iter().map(|p| process(p, &a.process)).collect::<Result<_>>()?;
    let problem = stack_problem(&model, &logs)?;
    let samples = problem.sample_count();
    let (file, fit) = match a.method {
        Method::Feasible => {
            let p = solve_feasible(&problem, &model)?;
            let fit = relative_prediction_error(&model, &p.delta, &logs[0])?;
            println!(
                "weighted residual {:.6e}, duality gap {:.3e}, {} Newton steps, minimum margin {:.3e}",
                p.residual,
                p.duality_gap,
                p.newton_iterations,
                p.min_margin()
            );
            (ParameterFile::from_feasible(&model, &p, samples), fit)
        }
        Method::OlsBase => {
            let reduction = base_reduction(&model, REDUCTION_SAMPLES, a.seed)?;
            let est = solve_ols_base(&problem, &reduction)?;
            let fit = relative_prediction_error_base(&model, &reduction.independent, &est.delta_b, &logs[0])?;
            println!("weighted residual {:.6e}, {} base parameters", est.residual, reduction.b());
            (ParameterFile::from_base(&model, &reduction, &est, samples), fit)
        }
    };
    prepare_dir(&a.out)?;
    file.save(a.out.join("parameters.json"))?;
    write_file(&a.out.join("metrics.csv"), &metrics_csv(&model, &fit, &problem.weights))?;
    let mut inputs: Vec<&Path> = vec![&a.model];
    inputs.extend(a.logs.iter().map(|p| p.as_path()));
    RunManifest::new("identify", Some(a.seed), Some(&a.model), &inputs)?
        .write(&a.out, &["parameters.json", "metrics.csv"])?;
    Ok(())
}

/// Base-parameter comparison of an estimate against the truth.
pub fn recovery_csv(reduction: &BaseReduction, labels: &[String], truth: &DVector<f64>, estimate: &DVector<f64>) -> String {
    let mut s = String::from("base_parameter,truth,estimate,abs_error\n");
    for (k, &i) in reduction.independent.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            labels[i],
            truth[k],
            estimate[k],
            (truth[k] - estimate[k]).abs()
        ));
    }
    s
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let file = ParameterFile::load(&a.params)?;
    if file.model != model.name() {
        return Err(Error::validation(
            "model",
            format!("parameter file is for `{}`, not `{}`", file.model, model.name()),
        ));
    }
    let log = process(&a.log, &a.process)?;
    let delta = file.delta(&model)?;
    let base = file.base(&model)?;
    let fit = match (&delta, &base) {
        (Some(d), _) => relative_prediction_error(&model, d, &log)?,
        (None, Some((idx, db))) => relative_prediction_error_base(&model, idx, db, &log)?,
        (None, None) => return Err(Error::validation("parameters", "file holds no parameters")),
    };
    prepare_dir(&a.out)?;
    let mut table = String::from("motor,relative_error_percent\n");
    println!("{:<12} {:>10}", "motor", "error %");
    for (name, e) in model.motor_names().iter().zip(&fit.per_joint) {
        table.push_str(&format!("{name},{e}\n"));
        println!("{name:<12} {e:>10.4}");
    }
    table.push_str(&format!("overall,{}\n", fit.overall));
    println!("{:<12} {:>10.4}", "overall", fit.overall);
    write_file(&a.out.join("errors.csv"), &table)?;
    write_file(&a.out.join("prediction.csv"), &fit.to_csv())?;
    let mut outputs = vec!["errors.csv", "prediction.csv"];
    let mut inputs: Vec<&Path> = vec![&a.model, &a.params, &a.log];
    if let Some(truth_path) = &a.truth {
        let truth = GroundTruth::load(&model, truth_path)?;
        let reduction = base_reduction(&model, REDUCTION_SAMPLES, a.seed)?;
        let estimate = match (&delta, &base) {
            (Some(d), _) => reduction.base_parameters(&d.values),
            (_, Some((idx, db))) => {
                if *idx != reduction.independent {
                    return Err(Error::validation(
                        "base_parameters",
                        "base parameters were selected with a different reduction",
                    ));
                }
                db.clone()
            }
            _ => unreachable!("checked above"),
        };
        let layout = model.layout();
        let labels: Vec<String> = (0..layout.len()).map(|i| layout.label(i)).collect();
        let csv = recovery_csv(
            &reduction,
            &labels,
            &reduction.base_parameters(&truth.delta_star.values),
            &estimate,
        );
        write_file(&a.out.join("recovery.csv"), &csv)?;
        outputs.push("recovery.csv");
        inputs.push(truth_path);
    }
    RunManifest::new("validate", Some(a.seed), Some(&a.model), &inputs)?.write(&a.out, &outputs)
}

fn check(a: &CheckArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let report = validate_coupling(&model)?;
    println!("model {}", model.name());
    println!("motors: {}", model.motor_names().join(", "));
    println!("joints: {}", model.joints().len());
    for (name, cond) in &report.blocks {
        println!("coupling block {name}: cond {cond:.4}");
    }
    println!("cond(A_dm) = {:.4}", report.dvrk_condition);
    let states = sample_states(&model, REDUCTION_SAMPLES, a.seed);
    let w = stack_regressor(&model, &states)?;
    let reduction = BaseReduction::from_stacked(&w);
    println!("standard parameters: {}", model.parameter_count());
    println!("base parameters: {}", reduction.b());
    if let Some(dir) = &a.export {
        prepare_dir(dir)?;
        let layout = model.layout();
        let labels: Vec<String> = (0..layout.len()).map(|i| layout.label(i)).collect();
        let mut csv = labels.join(",") + "\n";
        for r in 0..w.nrows() {
            let row: Vec<String> = w.row(r).iter().map(|v| v.to_string()).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&dir.join("regressor.csv"), &csv)?;
        write_file(&dir.join("reduction.csv"), &reduction.to_csv(&labels))?;
        RunManifest::new("model check", Some(a.seed), Some(&a.model), &[&a.model])?
            .write(dir, &["regressor.csv", "reduction.csv"])?;
    }
    Ok(())
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidArgument("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Traj(TrajCommand::Optimize(a)) => optimize(a),
        Command::Traj(TrajCommand::Export(a)) => export(a),
        Command::Sim(SimCommand::Generate(a)) => generate(a),
        Command::Identify(a) => identify(a),
        Command::Validate(a) => validate(a),
        Command::Model(ModelCommand::Check(a)) => check(a),
    }
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
