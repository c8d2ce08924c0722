use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use compclass::analysis::KernelAnalysis;
use compclass::config::{build_kernel, DesignSpec, ExperimentConfig, ModelSource};
use compclass::design::DesignTag;
use compclass::io::{self, Provenance};
use compclass::ip::solve_measurement_ip;
use compclass::model::{fit_ml, SourceModel};
use compclass::numerics::{EigenSpectrum, RankTolerance};
use compclass::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "compclass", version, about = "Compressive classification of low-rank Gaussian sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic low-rank Gaussian mixture and write it as a model file.
    SynthGen(SynthGenArgs),
    /// Build a measurement kernel for a model and report its diversity order.
    Design(DesignArgs),
    /// Estimate the error probability along a noise or measurement grid.
    Sweep(SweepArgs),
    /// Fit class covariances on a stratified training split of a dataset.
    Fit(FitArgs),
    /// Solve the per-class measurement allocation program.
    SolveIp(SolveIpArgs),
}

#[derive(Args)]
struct SynthGenArgs {
    /// JSON experiment config whose model source is `synthetic`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Nonzero eigenvalues all equal to this value instead of uniform on [0.5, 1.5].
    #[arg(long)]
    eig_fixed: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
}

#[derive(Args, Clone)]
struct DesignFlags {
    #[arg(long, value_parser = parse_design)]
    design: Option<DesignTag>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    d0: Option<f64>,
    /// Kernel file, used as-is (design `custom`).
    #[arg(long)]
    kernel: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    design: DesignFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kernel output file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model file (when no config is given).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset CSV (when no config is given); requires --l and --split.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[command(flatten)]
    design: DesignFlags,
    #[arg(long)]
    design_seed: Option<u64>,
    /// Comma-separated measurement counts; turns the run into a measurement sweep.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    /// Comma-separated noise levels in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    noise_db: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<u64>,
    /// Monte Carlo master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output; a JSON sidecar is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    l: usize,
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Model output file.
    #[arg(long)]
    out: PathBuf,
    /// Held-out rows; defaults to `<out>.test.csv`.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
}

#[derive(Args)]
struct SolveIpArgs {
    #[arg(long)]
    l: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    d0: f64,
}

fn parse_design(s: &str) -> std::result::Result<DesignTag, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::SynthGen(a) => synth_gen(a),
        Command::Design(a) => design(a),
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::SolveIp(a) => solve_ip(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infeasible() { EXIT_INFEASIBLE } else { EXIT_INPUT })
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn provenance<T: Serialize>(params: &T, seed: u64) -> Result<Provenance> {
    Ok(Provenance {
        config_hash: io::config_hash(params)?,
        seed,
    })
}

fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let from_config = match &a.config {
        Some(path) => match ExperimentConfig::load(path)?.model {
            ModelSource::Synthetic { n, l, r, eig_spec, seed } => Some((n, l, r, eig_spec, seed)),
            _ => return Err(Error::Validation("config model source is not synthetic".into())),
        },
        None => None,
    };
    let missing = |name: &str| Error::Validation(format!("--{name} is required without --config"));
    let (n, l, r, spectrum, seed) = match from_config {
        Some((n, l, r, spec, seed)) => (
            a.n.unwrap_or(n),
            a.l.unwrap_or(l),
            a.r.unwrap_or(r),
            a.eig_fixed.map_or(spec, |value| EigenSpectrum::Fixed { value }),
            a.seed.unwrap_or(seed),
        ),
        None => (
            a.n.ok_or_else(|| missing("n"))?,
            a.l.ok_or_else(|| missing("l"))?,
            a.r.ok_or_else(|| missing("r"))?,
            a.eig_fixed.map_or_else(EigenSpectrum::default, |value| EigenSpectrum::Fixed { value }),
            a.seed.ok_or_else(|| missing("seed"))?,
        ),
    };
    let tol = RankTolerance::new(a.rank_tol)?;
    let source = ModelSource::Synthetic {
        n,
        l,
        r,
        eig_spec: spectrum,
        seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SourceModel::synthetic(n, l, r, spectrum, tol, &mut rng)?;
    let prov = provenance(&source, seed)?;
    io::write_model(&a.out, &model, &prov)?;
    let pairs = model.geometry_summary(tol)?;
    print_json(&json!({
        "model": a.out,
        "config_hash": prov.config_hash,
        "seed": seed,
        "classes": l,
        "dim": n,
        "class_rank": model.class_rank(),
        "rank_gap": model.rank_gap(),
        "pairs": pairs.iter().map(|p| json!({
            "i": p.i + 1,
            "j": p.j + 1,
            "dim_i": p.dim_i,
            "dim_j": p.dim_j,
            "dim_intersection": p.dim_intersection,
            "rank_gap": p.rank_gap,
        })).collect::<Vec<_>>(),
    }))
}

fn design_spec(flags: &DesignFlags, seed: u64) -> Result<DesignSpec> {
    let kind = match (flags.design, &flags.kernel) {
        (Some(tag), _) => tag,
        (None, Some(_)) => DesignTag::Custom,
        (None, None) => return Err(Error::Validation("--design or --kernel is required".into())),
    };
    Ok(DesignSpec {
        kind,
        m: flags.m,
        d0: flags.d0,
        seed,
        kernel_path: flags.kernel.clone(),
    })
}

fn design(a: DesignArgs) -> Result<()> {
    let tol = RankTolerance::new(a.rank_tol)?;
    let (model, model_prov) = io::read_model(&a.model, tol)?;
    let spec = design_spec(&a.design, a.seed)?;
    let kernel = build_kernel(&spec, &model, tol)?;
    let analysis = KernelAnalysis::new(&model, &kernel, tol)?;
    let report = analysis.exponent_report()?;
    let verdict = analysis.corollary1();
    let prov = provenance(&json!({ "model": model_prov.config_hash, "design": spec }), a.seed)?;
    if let Some(out) = &a.out {
        io::write_kernel(out, &kernel, &prov)?;
    }
    print_json(&json!({
        "kernel": a.out,
        "config_hash": prov.config_hash,
        "seed": a.seed,
        "design": kernel.design_tag(),
        "rows": kernel.rows(),
        "d": report.d,
        "g": report.g,
        "verdict": verdict,
        "minimizing_pairs": report.minimizing_pairs.iter().map(|&(i, j)| [i + 1, j + 1]).collect::<Vec<_>>(),
        "pairs": report.pairs.iter().map(|p| json!({
            "i": p.i + 1,
            "j": p.j + 1,
            "r_i": p.r_i,
            "r_j": p.r_j,
            "r_ij": p.r_ij,
            "d": p.exponent(),
        })).collect::<Vec<_>>(),
    }))
}

fn config_from_flags(a: &SweepArgs) -> Result<ExperimentConfig> {
    let model = match (&a.model, &a.dataset) {
        (Some(path), None) => ModelSource::ModelFile { path: path.clone() },
        (None, Some(path)) => ModelSource::Dataset {
            path: path.clone(),
            l: a.l.ok_or_else(|| Error::Validation("--l is required with --dataset".into()))?,
            split: a.split.ok_or_else(|| Error::Validation("--split is required with --dataset".into()))?,
            split_seed: a.split_seed,
            ridge: 0.0,
        },
        _ => {
            return Err(Error::Validation(
                "exactly one of --config, --model or --dataset is required".into(),
            ))
        }
    };
    Ok(ExperimentConfig {
        model,
        design: design_spec(&a.design, a.design_seed.unwrap_or(0))?,
        noise_db: a.noise_db.clone().unwrap_or_default(),
        m_grid: a.m_grid.clone(),
        trials: a.trials.unwrap_or(10_000),
        seed: a.seed.unwrap_or(0),
        output: a.out.clone(),
        rank_tolerance: RankTolerance::default().relative_threshold(),
    })
}

fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(v) = &a.noise_db {
                cfg.noise_db = v.clone();
            }
            if let Some(v) = &a.m_grid {
                cfg.m_grid = Some(v.clone());
            }
            if let Some(v) = a.trials {
                cfg.trials = v;
            }
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            if let Some(v) = &a.out {
                cfg.output = Some(v.clone());
            }
            cfg
        }
        None => config_from_flags(&a)?,
    };
    cfg.validate()?;
    let out = cfg.output.take();
    let prov = Provenance {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
    };
    let resolved = cfg.resolve_model()?;
    let result = cfg.run_sweep(&resolved)?;
    let csv = io::sweep_to_csv(&result, &prov);
    match &out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            let sidecar = json!({
                "config": cfg,
                "config_hash": prov.config_hash,
                "seed": cfg.seed,
                "trials": cfg.trials,
                "test_rows": resolved.test.as_ref().map(|t| t.len()),
                "result": result,
            });
            std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn fit(a: FitArgs) -> Result<()> {
    let tol = RankTolerance::new(a.rank_tol)?;
    let ds = io::read_dataset(&a.dataset, Some(a.l))?;
    let (train, test) = io::stratified_split(&ds, a.l, a.split, a.seed)?;
    let model = fit_ml(&train, a.l, ds.dim(), a.ridge, tol)?;
    let params = json!({
        "dataset": a.dataset,
        "l": a.l,
        "split": a.split,
        "ridge": a.ridge,
    });
    let prov = provenance(&params, a.seed)?;
    io::write_model(&a.out, &model, &prov)?;
    let test_out = a.test_out.clone().unwrap_or_else(|| {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".test.csv");
        PathBuf::from(name)
    });
    io::write_dataset(&test_out, &test, Some(&prov))?;
    print_json(&json!({
        "model": a.out,
        "test_set": test_out,
        "config_hash": prov.config_hash,
        "seed": a.seed,
        "train_rows": train.len(),
        "test_rows": test.len(),
        "train_counts": train.class_counts(a.l),
        "test_counts": test.class_counts(a.l),
        "priors": model.priors(),
        "class_ranks": model.class_ranks(),
    }))
}

fn solve_ip(a: SolveIpArgs) -> Result<()> {
    let alloc = solve_measurement_ip(a.l, a.n, a.r, a.d0)?;
    print_json(&alloc)
}
