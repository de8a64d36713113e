//! `hcnet`: solve the heat equation, run the verification suites, and
//! train or evaluate heat-conduction networks.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use hcnet::config::KvMap;
use hcnet::model::{count_macs, count_params, reference_budget};
use hcnet::pde::io::{read_csv, write_csv, write_pgm};
use hcnet::pde::{eval_fourier, fdm_solve, fit_fourier, FdmConfig, TemperatureField};
use hcnet::train::{
    evaluate, metrics_row, optimizer_config, train, write_metrics_csv, Checkpoint, OptimizerConfig, Precision,
    RunConfig, TrainState, METRICS_HEADER,
};
use hcnet::verify::{self, GradTarget, Suite};
use hcnet::{Error, ErrorCategory, PaddingMode, Real};

#[derive(Parser)]
#[command(name = "hcnet", version, about = "Heat-conduction networks and their PDE oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a grid with the explicit finite-difference scheme.
    SolveFdm(SolveFdmArgs),
    /// Fit a sine series to a Dirichlet grid and evaluate it at a later time.
    SolveFourier(SolveFourierArgs),
    /// Run property suites and print a pass/fail table.
    Verify {
        #[arg(long, default_value = "all", value_parser = parse_lib::<Suite>)]
        suite: Suite,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, value_parser = parse_lib::<GradTarget>)]
        target: GradTarget,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model from a run file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Render a CSV grid as an 8-bit PGM image.
    ExportHeatmap {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print parameter and MAC counts of a model config.
    Params {
        #[arg(long)]
        config: PathBuf,
        /// Input side for the MAC count; defaults to the config's resolution,
        /// or the reference one for named variants.
        #[arg(long)]
        resolution: Option<usize>,
    },
}

#[derive(Args)]
struct SolveFdmArgs {
    #[arg(long)]
    grid: PathBuf,
    /// Directional diffusivities `ax1,ax2,ay1,ay2`.
    #[arg(long, value_parser = parse_alphas)]
    alpha: [f64; 4],
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value = "replicate", value_parser = parse_lib::<PaddingMode>)]
    boundary: PaddingMode,
    #[arg(long, default_value_t = 1.0)]
    dx: f64,
    #[arg(long, default_value_t = 1.0)]
    dy: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Run even when the stability bound is violated.
    #[arg(long = "unsafe")]
    allow_unstable: bool,
}

#[derive(Args)]
struct SolveFourierArgs {
    /// Initial condition on interior nodes of the square `[0, L]^2`.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, default_value_t = std::f64::consts::PI)]
    length: f64,
    /// Retained modes `M,N`.
    #[arg(long, value_parser = parse_modes)]
    modes: (usize, usize),
    #[arg(long, default_value_t = 1.0)]
    diffusivity: f64,
    #[arg(long)]
    time: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Also write the fitted coefficients as an `M x N` CSV.
    #[arg(long)]
    coeffs: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    train_limit: Option<usize>,
    #[arg(long)]
    eval_limit: Option<usize>,
    #[arg(long)]
    precision: Option<String>,
    /// Write the metrics log here as CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Save the final training state here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a saved training state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Run file whose data keys select the evaluation set.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    eval_limit: Option<usize>,
    #[arg(long, default_value_t = 250)]
    batch_size: usize,
}

enum Failure {
    Lib(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<(), Failure>;

fn parse_lib<T: FromStr<Err = Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_list<T: FromStr>(s: &str, n: usize, what: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != n {
        return Err(format!("expected {n} comma-separated {what}, got {s:?}"));
    }
    parts.iter().map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

fn parse_alphas(s: &str) -> Result<[f64; 4], String> {
    let v = parse_list::<f64>(s, 4, "diffusivities")?;
    Ok([v[0], v[1], v[2], v[3]])
}

fn parse_modes(s: &str) -> Result<(usize, usize), String> {
    let v = parse_list::<usize>(s, 2, "mode counts")?;
    Ok((v[0], v[1]))
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Lib(e) => match e.category() {
            ErrorCategory::Usage => 2,
            ErrorCategory::Config => 3,
            ErrorCategory::Io => 4,
            ErrorCategory::Numeric => 5,
        },
        Failure::Verification(_) => 6,
    }
}

fn read_field(path: &Path, dx: f64, dy: f64) -> hcnet::Result<TemperatureField> {
    let g = read_csv(path)?;
    TemperatureField::new(g.rows, g.cols, dx, dy, g.values)
}

fn write_field(out: &Path, pgm: Option<&Path>, field: &TemperatureField) -> hcnet::Result<()> {
    write_csv(out, field.ny(), field.values())?;
    if let Some(p) = pgm {
        write_pgm(p, field.nx(), field.ny(), field.values())?;
    }
    Ok(())
}

fn solve_fdm(a: SolveFdmArgs) -> CliResult {
    let field = read_field(&a.grid, a.dx, a.dy)?;
    let cfg = FdmConfig {
        alpha_x1: a.alpha[0],
        alpha_x2: a.alpha[1],
        alpha_y1: a.alpha[2],
        alpha_y2: a.alpha[3],
        dt: a.dt,
        steps: a.steps,
        boundary: a.boundary,
        allow_unstable: a.allow_unstable,
    };
    let out = fdm_solve(&field, &cfg)?;
    write_field(&a.out, a.pgm.as_deref(), &out)?;
    println!("grid={}x{}", out.nx(), out.ny());
    println!("steps={}", cfg.steps);
    println!("stability_ratio={}", cfg.stability_ratio(field.dx(), field.dy()));
    println!("sum_before={}", field.sum());
    println!("sum_after={}", out.sum());
    println!("min={}", out.min());
    println!("max={}", out.max());
    Ok(())
}

fn solve_fourier(a: SolveFourierArgs) -> CliResult {
    let g = read_csv(&a.grid)?;
    let (dx, dy) = (a.length / (g.rows + 1) as f64, a.length / (g.cols + 1) as f64);
    let field = TemperatureField::new(g.rows, g.cols, dx, dy, g.values)?;
    let (m, n) = a.modes;
    let sol = fit_fourier(&field, a.length, m, n, a.diffusivity)?;
    let out = eval_fourier(&sol, a.time, field.nx(), field.ny())?;
    write_field(&a.out, a.pgm.as_deref(), &out)?;
    if let Some(p) = &a.coeffs {
        write_csv(p, n, sol.coeffs())?;
    }
    let (mut best, mut bm, mut bn) = (0.0f64, 1, 1);
    for i in 1..=m {
        for j in 1..=n {
            if sol.coefficient(i, j).abs() > best.abs() {
                (best, bm, bn) = (sol.coefficient(i, j), i, j);
            }
        }
    }
    println!("grid={}x{}", out.nx(), out.ny());
    println!("modes={m},{n}");
    println!("time={}", a.time);
    println!("dominant_mode={bm},{bn}");
    println!("dominant_coefficient={best}");
    println!("dominant_amplitude_at_time={}", best * sol.decay(bm, bn, a.time));
    Ok(())
}

fn run_verify(suite: Suite) -> CliResult {
    let checks = verify::run(suite)?;
    print!("{}", verify::format_table(&checks));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!("failed checks: {}", failed.join(", "))))
    }
}

fn run_gradcheck(target: GradTarget, seed: u64) -> CliResult {
    let r = verify::gradcheck_target(target, seed)?;
    let pass = r.passed();
    println!("target={}", target.as_str());
    println!("seed={seed}");
    println!("checked={}", r.checked);
    println!("failures={}", r.failures);
    println!("max_rel_err={:e}", r.max_rel_err);
    println!("max_abs_err={:e}", r.max_abs_err);
    println!("tolerance={:e}", target.tolerance());
    println!("status={}", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{} gradient check failed", target.as_str())))
    }
}

fn load_kv(path: Option<&Path>) -> hcnet::Result<KvMap> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            KvMap::parse(&text)
        }
        None => Ok(KvMap::default()),
    }
}

fn run_train(a: TrainArgs) -> CliResult {
    let mut kv = load_kv(a.config.as_deref())?;
    kv.set("seed", a.seed.to_string());
    let overrides = [
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("base_lr", a.lr.map(|v| v.to_string())),
        ("max_steps", a.max_steps.map(|v| v.to_string())),
        ("threads", a.threads.map(|v| v.to_string())),
        ("data_dir", a.data_dir.as_ref().map(|p| p.display().to_string())),
        ("train_limit", a.train_limit.map(|v| v.to_string())),
        ("eval_limit", a.eval_limit.map(|v| v.to_string())),
        ("precision", a.precision.clone()),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    let run = RunConfig::from_kv(kv)?;
    match run.precision {
        Precision::F32 => train_with::<f32>(&run, &a),
        Precision::F64 => train_with::<f64>(&run, &a),
    }
}

fn train_with<T: Real>(run: &RunConfig, a: &TrainArgs) -> CliResult {
    let data = run.data.load(run.model.input_resolution)?;
    let mut state = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.config != run.model {
                return Err(Error::Config(format!("{} was saved for a different model config", p.display())).into());
            }
            ckpt.restore::<T>(optimizer_config(&run.train))?
        }
        None => TrainState::<T>::new(&run.model, &run.train)?,
    };
    println!("{METRICS_HEADER}");
    let mut rows = Vec::new();
    let result = train(&mut state, &data.train, Some(&data.test), &run.train, &mut |m| {
        println!("{}", metrics_row(m));
        rows.push(*m);
    });
    if let Some(p) = &a.metrics {
        write_metrics_csv(p, &rows)?;
    }
    let report = result?;
    if let Some(p) = &a.checkpoint {
        Checkpoint::capture(&state).save(p)?;
    }
    if let Some(loss) = report.final_train_loss() {
        eprintln!(
            "trained {} epochs, {} steps, final train loss {loss:.6}",
            state.epoch,
            state.optimizer.steps_taken()
        );
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> CliResult {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let state = ckpt.restore::<f32>(OptimizerConfig::new(ckpt.optimizer_kind, 0.0))?;
    let mut kv = load_kv(a.config.as_deref())?;
    if let Some(d) = &a.data_dir {
        kv.set("data_dir", d.display().to_string());
    }
    if let Some(n) = a.eval_limit {
        kv.set("eval_limit", n.to_string());
    }
    let run = RunConfig::from_kv(kv)?;
    let data = run.data.load(ckpt.config.input_resolution)?;
    let r = evaluate(&state.model, &data.test, a.batch_size)?;
    println!("epoch={}", ckpt.epoch);
    println!("count={}", r.count);
    println!("accuracy={}", r.accuracy);
    println!("mean_loss={}", r.mean_loss);
    Ok(())
}

fn export_heatmap(grid: &Path, out: &Path) -> CliResult {
    let g = read_csv(grid)?;
    write_pgm(out, g.rows, g.cols, &g.values)?;
    let (lo, hi) = g
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    println!("rows={}", g.rows);
    println!("cols={}", g.cols);
    println!("min={lo}");
    println!("max={hi}");
    Ok(())
}

fn run_params(config: &Path, resolution: Option<usize>) -> CliResult {
    let run = RunConfig::from_kv(load_kv(Some(config))?)?;
    let cfg = &run.model;
    let budget = reference_budget(cfg);
    let res = resolution.or(budget.map(|b| b.resolution)).unwrap_or(cfg.input_resolution);
    let params = count_params(cfg);
    let macs = count_macs(cfg, res)?;
    println!("params={params}");
    println!("macs={macs}");
    println!("resolution={res}");
    if let Some(b) = budget {
        let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
        println!("variant={}", b.name);
        println!("params_target={}", b.params);
        println!("params_rel_err={:+.4}", params as f64 / b.params - 1.0);
        println!("params_tolerance={}", b.params_tol);
        println!("params_status={}", status(b.params_ok(params)));
        if res == b.resolution {
            println!("macs_target={}", b.macs);
            println!("macs_rel_err={:+.4}", macs as f64 / b.macs - 1.0);
            println!("macs_tolerance={}", b.macs_tol);
            println!("macs_status={}", status(b.macs_ok(macs)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveFdm(a) => solve_fdm(a),
        Command::SolveFourier(a) => solve_fourier(a),
        Command::Verify { suite } => run_verify(suite),
        Command::Gradcheck { target, seed } => run_gradcheck(target, seed),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::ExportHeatmap { grid, out } => export_heatmap(&grid, &out),
        Command::Params { config, resolution } => run_params(&config, resolution),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Lib(e) => eprintln!("error: {e}"),
                Failure::Verification(msg) => eprintln!("verification failed: {msg}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
