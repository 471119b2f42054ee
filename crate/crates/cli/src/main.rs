//! `abld` experiment driver. Every subcommand reads or writes plain files:
//! datasets in the `SPD1` binary format, models in the `ABLDIDDL` container,
//! and results as CSV or JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use abld::clustering::{ab_kmeans, f1_score, karcher_kmeans, le_kmeans, AbKMeansOptions, Variant};
use abld::harness::audit::gradient_audit;
use abld::harness::bench::{run_bench, BenchOptions, D_SLOPE_RANGE, N_SLOPE_RANGE};
use abld::harness::io::DatasetFile;
use abld::harness::synth::{split_per_class, wishart_synth, WishartSpec};
use abld::iddl::container::{read_model, write_model};
use abld::iddl::{
    grid_scores, init_dictionary, le_nearest_neighbor, train_iddl, Ablation, IddlOptions, Loss,
    ParamInit, Tying,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "abld",
    version,
    about = "Alpha-beta log-det divergence experiments"
)]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, env = "ABLD_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads. Computation is currently sequential; the value is
    /// validated and logged.
    #[arg(long, global = true, env = "ABLD_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample Wishart clusters into a dataset file.
    Gen(GenArgs),
    /// Train an IDDL classifier.
    Train(TrainArgs),
    /// Classify a dataset with a trained model.
    Predict(PredictArgs),
    /// Cluster a dataset.
    Cluster(ClusterArgs),
    /// Validation accuracy over an (α, β) grid with a frozen dictionary.
    Sweep(SweepArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the atom and parameter gradients.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n_per: usize,
    /// Wishart degrees of freedom (default 2d).
    #[arg(long)]
    dof: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
    /// Extra samples per cluster drawn from the same distributions and
    /// written to `--test-output`.
    #[arg(long, default_value_t = 0, requires = "test_output")]
    test_per: usize,
    #[arg(long)]
    test_output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Labeled training set.
    data: PathBuf,
    #[arg(long, default_value = "ridge")]
    loss: Loss,
    #[arg(long, default_value = "V")]
    tying: Tying,
    /// Number of atoms (default five per class).
    #[arg(long)]
    n_atoms: Option<usize>,
    #[arg(long, default_value = "joint")]
    ablation: Ablation,
    /// Fixed ridge/SVM regularization; disables cross-validation over --gamma-grid.
    #[arg(long)]
    gamma: Option<f64>,
    /// Comma-separated γ candidates chosen by cross-validation.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
    gamma_grid: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// SVM margin Δ.
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long, default_value = "grid")]
    init: ParamInit,
    #[arg(long, default_value_t = 50)]
    max_outer: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    /// Optional labeled test set; its accuracy goes into the report.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Model file.
    #[arg(short, long)]
    output: PathBuf,
    /// TrainReport as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-iteration objective, accuracy and (α, β) of every atom.
    #[arg(long)]
    trajectory: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    model: PathBuf,
    data: PathBuf,
    /// Labels CSV (`index,predicted[,truth]`, labels 1-based).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algorithm {
    AbKmeans,
    LeKmeans,
    KarcherKmeans,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    E,
    Ne,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ab-kmeans")]
    alg: Algorithm,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "ne")]
    variant: VariantArg,
    /// Weight of the (α, β) regularizer.
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
    /// Assignments CSV (`index,cluster`, clusters 1-based).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Objective trace CSV (`outer,block,objective,alpha,beta`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    data: PathBuf,
    #[arg(long)]
    n_atoms: Option<usize>,
    /// Comma-separated α values.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.25,0.5,0.75,1,1.5,2"
    )]
    alphas: Vec<f64>,
    /// Comma-separated β values.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.25,0.5,0.75,1,1.5,2"
    )]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    val_frac: f64,
    /// Heatmap CSV (`alpha,beta,accuracy`).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    atoms: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0.05)]
    min_seconds: f64,
    /// Scaling CSV (`block,dim,n_atoms,seconds`).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// A failure that is not an `abld::Error` but still has a known exit code.
#[derive(Debug)]
struct Failure(u8, String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Failure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.0;
        }
        if let Some(e) = cause.downcast_ref::<abld::Error>() {
            return if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_NUMERICAL
            };
        }
    }
    EXIT_DATA
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn load(path: &Path) -> anyhow::Result<DatasetFile> {
    DatasetFile::load(path).with_context(|| format!("cannot read dataset {}", path.display()))
}

fn gen(args: &GenArgs, seed: u64) -> anyhow::Result<()> {
    let spec = WishartSpec {
        dof: args.dof,
        ..WishartSpec::new(args.k, args.d, args.n_per, seed)
    };
    let spec = WishartSpec {
        n_per: args.n_per + args.test_per,
        ..spec
    };
    let all = wishart_synth(&spec)?;
    let (data, test) = split_per_class(&all, args.n_per);
    DatasetFile::from_labeled(&data).save(&args.output)?;
    println!(
        "wrote {} matrices of size {} to {}",
        data.len(),
        data.dim(),
        args.output.display()
    );
    if let Some(path) = &args.test_output {
        if test.is_empty() {
            return Err(Failure(EXIT_USAGE, "--test-output needs --test-per > 0".into()).into());
        }
        DatasetFile::from_labeled(&test).save(path)?;
        println!("wrote {} test matrices to {}", test.len(), path.display());
    }
    Ok(())
}

fn train(args: &TrainArgs, seed: u64) -> anyhow::Result<()> {
    let data = load(&args.data)?.into_labeled()?;
    let opts = IddlOptions {
        n_atoms: args.n_atoms,
        loss: args.loss,
        tying: args.tying,
        ablation: args.ablation,
        gamma: args.gamma.unwrap_or(IddlOptions::default().gamma),
        gamma_grid: if args.gamma.is_some() {
            Vec::new()
        } else {
            args.gamma_grid.clone()
        },
        cv_folds: args.cv_folds,
        margin: args.margin,
        init: args.init,
        max_outer: args.max_outer,
        rel_tol: args.rel_tol,
        seed,
        ..IddlOptions::default()
    };
    let start = Instant::now();
    let (model, report) = train_iddl(&data, &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    let train_acc = model.accuracy(&data)?;
    let (test_acc, nn_acc) = match &args.test {
        Some(p) => {
            let test = load(p)?.into_labeled()?;
            let nn = le_nearest_neighbor(&data, test.data().samples())?;
            let hits = nn.iter().zip(test.labels()).filter(|(a, b)| a == b).count();
            (
                Some(model.accuracy(&test)?),
                Some(hits as f64 / test.len() as f64),
            )
        }
        None => (None, None),
    };

    let metadata = serde_json::json!({ "options": opts, "seed": seed });
    let mut out = create(&args.output)?;
    write_model(&mut out, &model, metadata)?;
    out.flush()?;

    if let Some(path) = &args.report {
        let doc = serde_json::json!({
            "report": report,
            "train_accuracy": train_acc,
            "test_accuracy": test_acc,
            "le_1nn_test_accuracy": nn_acc,
            "seconds": seconds,
        });
        let mut f = create(path)?;
        serde_json::to_writer_pretty(&mut f, &doc)?;
        writeln!(f)?;
    }
    if let Some(path) = &args.trajectory {
        let mut f = create(path)?;
        writeln!(f, "outer,objective,train_accuracy,atom,alpha,beta")?;
        for (outer, params) in report.params.iter().enumerate() {
            for (k, [a, b]) in params.iter().enumerate() {
                writeln!(
                    f,
                    "{outer},{},{},{},{a},{b}",
                    report.objective[outer],
                    report.train_accuracy[outer],
                    k + 1
                )?;
            }
        }
        f.flush()?;
    }
    println!("gamma {}", model.weights.gamma);
    println!(
        "objective {:.6e} after {} outer iterations ({:?})",
        report.final_objective(),
        report.outer_iterations,
        report.termination
    );
    println!("train accuracy {train_acc:.4}");
    if let (Some(acc), Some(nn)) = (test_acc, nn_acc) {
        println!("test accuracy {acc:.4} (1-NN log-Euclidean {nn:.4})");
    }
    Ok(())
}

fn predict(args: &PredictArgs) -> anyhow::Result<()> {
    let file =
        File::open(&args.model).with_context(|| format!("cannot open {}", args.model.display()))?;
    let (model, _) = read_model(std::io::BufReader::new(file))?;
    let data = load(&args.data)?;
    let predicted = model.predict_all(&data.matrices)?;
    if let Some(path) = &args.output {
        let mut f = create(path)?;
        match &data.labels {
            Some(truth) => {
                writeln!(f, "index,predicted,truth")?;
                for (i, (p, t)) in predicted.iter().zip(truth).enumerate() {
                    writeln!(f, "{},{},{}", i + 1, p + 1, t + 1)?;
                }
            }
            None => {
                writeln!(f, "index,predicted")?;
                for (i, p) in predicted.iter().enumerate() {
                    writeln!(f, "{},{}", i + 1, p + 1)?;
                }
            }
        }
        f.flush()?;
    }
    match &data.labels {
        Some(truth) => {
            let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
            println!("accuracy {:.4}", hits as f64 / truth.len() as f64);
        }
        None => println!("predicted {} samples", predicted.len()),
    }
    Ok(())
}

fn cluster(args: &ClusterArgs, seed: u64) -> anyhow::Result<()> {
    let file = load(&args.data)?;
    let truth = file.labels.clone();
    let data = file.into_unlabeled()?;
    let start = Instant::now();
    let mut trace_rows: Vec<String> = Vec::new();
    let part = match args.alg {
        Algorithm::AbKmeans => {
            let variant = match args.variant {
                VariantArg::E => Variant::E,
                VariantArg::Ne => Variant::NE,
            };
            let opts = AbKMeansOptions {
                mu: args.mu,
                max_outer: args.max_outer,
                ..AbKMeansOptions::default()
            };
            let (part, report) = ab_kmeans(&data, args.k, variant, seed, &opts)?;
            for t in &report.trace {
                trace_rows.push(format!(
                    "{},{:?},{},{},{}",
                    t.outer, t.block, t.objective, t.alpha, t.beta
                ));
            }
            println!(
                "{} outer iterations ({:?}), (α, β) = ({}, {})",
                report.outer_iterations,
                report.termination,
                part.params.alpha(),
                part.params.beta()
            );
            part
        }
        Algorithm::LeKmeans => le_kmeans(&data, args.k, seed)?,
        Algorithm::KarcherKmeans => karcher_kmeans(&data, args.k, seed, args.max_outer)?,
    };
    info!("clustering took {:.2}s", start.elapsed().as_secs_f64());
    if let Some(path) = &args.output {
        let mut f = create(path)?;
        writeln!(f, "index,cluster")?;
        for (i, z) in part.assignments.iter().enumerate() {
            writeln!(f, "{},{}", i + 1, z + 1)?;
        }
        f.flush()?;
    }
    if let Some(path) = &args.trace {
        if trace_rows.is_empty() {
            warn!("{:?} records no objective trace", args.alg);
        }
        let mut f = create(path)?;
        writeln!(f, "outer,block,objective,alpha,beta")?;
        for row in &trace_rows {
            writeln!(f, "{row}")?;
        }
        f.flush()?;
    }
    match truth {
        Some(truth) => println!("F1 {:.4}", f1_score(&part.assignments, &truth)?),
        None => println!(
            "clustered {} samples (no labels, F1 not computed)",
            part.assignments.len()
        ),
    }
    Ok(())
}

fn sweep(args: &SweepArgs, seed: u64) -> anyhow::Result<()> {
    let data = load(&args.data)?.into_labeled()?;
    let n = args.n_atoms.unwrap_or(5 * data.num_classes());
    let atoms = init_dictionary(&data, n, seed)?;
    let grid = grid_scores(
        &data,
        &atoms,
        &args.alphas,
        &args.betas,
        args.gamma,
        args.val_frac,
        seed,
    )?;
    let mut f = create(&args.output)?;
    writeln!(f, "alpha,beta,accuracy")?;
    for g in &grid {
        writeln!(f, "{},{},{}", g.alpha, g.beta, g.accuracy)?;
    }
    f.flush()?;
    if let Some(best) = grid.iter().max_by(|a, b| a.accuracy.total_cmp(&b.accuracy)) {
        println!(
            "best (α, β) = ({}, {}) at accuracy {:.4}",
            best.alpha, best.beta, best.accuracy
        );
    }
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, seed: u64) -> anyhow::Result<()> {
    let report = gradient_audit(seed, args.trials);
    for fam in &report.families {
        println!(
            "{:<24} trials {:>4}  max rel err {:.3e}  {}",
            fam.name,
            fam.trials,
            fam.max_rel_err,
            if fam.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.json {
        let mut f = create(path)?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        writeln!(f)?;
    }
    if !report.passed() {
        return Err(Failure(
            EXIT_NUMERICAL,
            format!("gradient audit exceeded {:e}", report.threshold),
        )
        .into());
    }
    Ok(())
}

fn bench(args: &BenchArgs, seed: u64) -> anyhow::Result<()> {
    let opts = BenchOptions {
        dims: args.dims.clone(),
        atom_counts: args.atoms.clone(),
        samples: args.samples,
        min_seconds: args.min_seconds,
        seed,
        ..BenchOptions::default()
    };
    let report = run_bench(&opts)?;
    if let Some(path) = &args.output {
        let mut f = create(path)?;
        writeln!(f, "block,dim,n_atoms,seconds")?;
        for p in &report.points {
            writeln!(f, "{},{},{},{}", p.block, p.dim, p.n_atoms, p.seconds)?;
        }
        f.flush()?;
    }
    let verdict = |ok: bool| if ok { "ok" } else { "out of range" };
    println!(
        "atom gradient vs d: slope {:.3} (expected {:?}) {}",
        report.d_slope,
        D_SLOPE_RANGE,
        verdict(report.d_slope_ok())
    );
    println!(
        "param gradient vs n: slope {:.3} (expected {:?}) {}",
        report.n_slope,
        N_SLOPE_RANGE,
        verdict(report.n_slope_ok())
    );
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads == 0 {
        return Err(Failure(EXIT_USAGE, "--threads must be at least 1".into()).into());
    }
    if cli.threads > 1 {
        info!("--threads {} requested; running sequentially", cli.threads);
    }
    match &cli.command {
        Command::Gen(a) => gen(a, cli.seed),
        Command::Train(a) => train(a, cli.seed),
        Command::Predict(a) => predict(a),
        Command::Cluster(a) => cluster(a, cli.seed),
        Command::Sweep(a) => sweep(a, cli.seed),
        Command::Gradcheck(a) => gradcheck(a, cli.seed),
        Command::Bench(a) => bench(a, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
