use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use gridfm_core::case_io::{load_grid, parse_case, CaseError};
use gridfm_core::grid::Grid;
use gridfm_core::nn::{load_checkpoint, save_checkpoint, Model, ModelConfig, NnError};
use gridfm_core::pf::{solve_ac, solve_dc, PfError, PfOptions};
use gridfm_core::scenario::{generate_dataset, read_dataset, ContingencySpec, ElementKind, GenerateConfig, ScenarioError};
use gridfm_core::train_eval::{
    benchmark, evaluate, screen_contingencies, screening_candidates, split_samples, train, Engine,
    EvalReport, Masking, OperatingLimits, SplitConfig, SplitKind, TrainConfig, TrainError,
};

#[derive(Parser)]
#[command(name = "gridfm", version, about = "Power-flow solver and masked graph autoencoder workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve AC (or DC) power flow for one case.
    Solve {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        dc: bool,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long)]
        json: bool,
    },
    /// Generate solved scenarios as JSONL shards.
    Generate {
        #[arg(long = "case", required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: usize,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh initialisation.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Write a checkpoint after every epoch into this directory.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        /// Write the training history here instead of stdout.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under a masking scheme.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// `random:ALPHA` or `pf`.
        #[arg(long)]
        mask: Masking,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen all N-k contingencies of a case.
    Screen {
        #[arg(long)]
        case: PathBuf,
        #[arg(long)]
        k: usize,
        /// `numeric` or `neural:CKPT`.
        #[arg(long)]
        engine: String,
        #[arg(long)]
        limits: Option<PathBuf>,
        /// Also drop generators, not only branches.
        #[arg(long)]
        generators: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time numeric against neural power flow.
    Bench {
        #[arg(long = "cases", required = true, num_args = 1..)]
        cases: Vec<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Topology,
    Scenario,
}

/// Exit status 2 for bad input, 3 for numerical failure.
enum Failure {
    Validation(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<PfError> for Failure {
    fn from(e: PfError) -> Self {
        match e {
            PfError::SingularJacobian { .. } | PfError::SingularSystem => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::EmptyOutput => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => Failure::Numeric(e.to_string()),
            TrainError::Nn(e) => e.into(),
            TrainError::Pf(e) => e.into(),
            TrainError::Scenario(e) => e.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn read_grid(path: &Path) -> Result<Grid, Failure> {
    let (_, mut grid) = load_grid(&read_text(path)?)?;
    if grid.name.is_empty() {
        grid.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    Ok(grid)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => print_out(&(text + "\n")),
    }
    Ok(())
}

/// A closed pipe (`| head`) is not an error worth reporting.
fn print_out(text: &str) {
    let mut so = std::io::stdout().lock();
    let _ = so.write_all(text.as_bytes()).and_then(|_| so.flush());
}

#[derive(Serialize)]
struct DcReport<'a> {
    case: &'a str,
    state: Vec<gridfm_core::grid::NodeState>,
}

fn solve(case: &Path, dc: bool, tol: f64, max_iter: usize, json: bool) -> Result<(), Failure> {
    let grid = read_grid(case)?;
    if dc {
        let state = solve_dc(&grid)?;
        if json {
            return emit(&DcReport { case: &grid.name, state }, None);
        }
        let mut text = format!("{:>6} {:>12} {:>12}\n", "bus", "p", "delta");
        for (id, s) in grid.bus_ids.iter().zip(&state) {
            let _ = writeln!(text, "{id:>6} {:>12.6} {:>12.6}", s.p, s.delta);
        }
        print_out(&text);
        return Ok(());
    }
    let opts = PfOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    let sol = solve_ac(&grid, &opts)?;
    if json {
        emit(&sol, None)?;
    } else {
        let mut text = format!(
            "{}: {} after {} iterations, residual {:.3e}\n",
            grid.name,
            if sol.converged { "converged" } else { "not converged" },
            sol.iterations,
            sol.residual_inf_norm
        );
        let _ = writeln!(text, "{:>6} {:>12} {:>12} {:>10} {:>12}", "bus", "p", "q", "v", "delta");
        for (id, s) in grid.bus_ids.iter().zip(&sol.state) {
            let _ = writeln!(text, "{id:>6} {:>12.6} {:>12.6} {:>10.6} {:>12.6}", s.p, s.q, s.v, s.delta);
        }
        print_out(&text);
    }
    if !sol.converged {
        return Err(Failure::Numeric(format!(
            "no convergence within {max_iter} iterations (residual {:.3e})",
            sol.residual_inf_norm
        )));
    }
    Ok(())
}

fn generate(cases: &[PathBuf], config: &Path, out: &Path, samples: usize) -> Result<(), Failure> {
    let cfg: GenerateConfig = read_json(config)?;
    let mut raws = Vec::with_capacity(cases.len());
    for c in cases {
        let mut raw = parse_case(&read_text(c)?)?;
        if raw.name.is_empty() {
            raw.name = c.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        raws.push(raw);
    }
    let report = generate_dataset(&raws, &cfg, samples, out)?;
    emit(&report, None)
}

fn train_cmd(
    data: &Path,
    model_config: &Path,
    train_config: &Path,
    out: &Path,
    warm_start: Option<&Path>,
    checkpoint_dir: Option<&Path>,
    history: Option<&Path>,
) -> Result<(), Failure> {
    let model_cfg: ModelConfig = read_json(model_config)?;
    let train_cfg: TrainConfig = read_json(train_config)?;
    let ds = read_dataset(data)?;
    let warm = warm_start.map(load_checkpoint).transpose()?;
    let start = std::time::Instant::now();
    match train(&ds.samples, &model_cfg, &train_cfg, warm, checkpoint_dir) {
        Ok(outcome) => {
            info!("trained in {:.1} s", start.elapsed().as_secs_f64());
            save_checkpoint(&outcome.model, Some(train_cfg.epochs), out)?;
            emit(&outcome.history, history)
        }
        Err(TrainError::NonFiniteLoss { epoch, batch, last_good }) => {
            save_checkpoint(&last_good, Some(epoch), out)?;
            Err(Failure::Numeric(format!(
                "non-finite loss at epoch {epoch}, batch {batch}; last good model written to {}",
                out.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_cmd(
    data: &Path,
    ckpt: &Path,
    mask: Masking,
    split: Option<SplitArg>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let ds = read_dataset(data)?;
    let model: Model = load_checkpoint(ckpt)?;
    let report = match split {
        None => {
            let all: Vec<usize> = (0..ds.samples.len()).collect();
            EvalReport {
                masking: mask,
                split: None,
                train: None,
                holdout: evaluate(&model, &ds.samples, &all, mask, seed)?,
                overfitting_gap: None,
            }
        }
        Some(kind) => {
            let cfg = SplitConfig {
                kind: match kind {
                    SplitArg::Topology => SplitKind::Topology,
                    SplitArg::Scenario => SplitKind::Scenario,
                },
                ..Default::default()
            };
            let sp = split_samples(&ds.samples, &cfg)?;
            let train_m = evaluate(&model, &ds.samples, &sp.train, mask, seed)?;
            let hold_m = evaluate(&model, &ds.samples, &sp.holdout, mask, seed)?;
            let gap = hold_m.masked_mse - train_m.masked_mse;
            info!("overfitting gap (holdout - train masked MSE): {gap:.3e}");
            EvalReport {
                masking: mask,
                split: Some(cfg),
                train: Some(train_m),
                holdout: hold_m,
                overfitting_gap: Some(gap),
            }
        }
    };
    emit(&report, out)
}

fn screen_cmd(
    case: &Path,
    k: usize,
    engine: &str,
    limits: Option<&Path>,
    generators: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let grid = read_grid(case)?;
    let limits: OperatingLimits = match limits {
        Some(p) => read_json(p)?,
        None => OperatingLimits::default(),
    };
    let mut kinds = vec![ElementKind::Branch];
    if generators {
        kinds.push(ElementKind::Generator);
    }
    let spec = ContingencySpec::new(k, screening_candidates(&grid, &kinds))?;
    let model;
    let engine = match engine {
        "numeric" => Engine::Numeric,
        other => match other.strip_prefix("neural:") {
            Some(path) => {
                model = load_checkpoint(Path::new(path))?;
                Engine::Neural(&model)
            }
            None => {
                return Err(Failure::Validation(format!(
                    "engine must be `numeric` or `neural:CKPT`, got `{other}`"
                )))
            }
        },
    };
    let report = screen_contingencies(engine, &grid, &spec, &limits)?;
    emit(&report, out)
}

fn bench_cmd(cases: &[PathBuf], ckpt: &Path, repeats: usize, out: Option<&Path>) -> Result<(), Failure> {
    let model = load_checkpoint(ckpt)?;
    let grids = cases.iter().map(|c| read_grid(c)).collect::<Result<Vec<_>, _>>()?;
    let report = benchmark(&model, &grids, repeats)?;
    emit(&report, out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve {
            case,
            dc,
            tol,
            max_iter,
            json,
        } => solve(&case, dc, tol, max_iter, json),
        Command::Generate {
            cases,
            config,
            out,
            samples,
        } => generate(&cases, &config, &out, samples),
        Command::Train {
            data,
            model_config,
            train_config,
            out,
            warm_start,
            checkpoint_dir,
            history,
        } => train_cmd(
            &data,
            &model_config,
            &train_config,
            &out,
            warm_start.as_deref(),
            checkpoint_dir.as_deref(),
            history.as_deref(),
        ),
        Command::Eval {
            data,
            ckpt,
            mask,
            split,
            seed,
            out,
        } => eval_cmd(&data, &ckpt, mask, split, seed, out.as_deref()),
        Command::Screen {
            case,
            k,
            engine,
            limits,
            generators,
            out,
        } => screen_cmd(&case, k, &engine, limits.as_deref(), generators, out.as_deref()),
        Command::Bench {
            cases,
            ckpt,
            repeats,
            out,
        } => bench_cmd(&cases, &ckpt, repeats, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
