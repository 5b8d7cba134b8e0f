//! `distinf` - distribution-inference bounds, oracles, attacks and sweeps.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use distinf::attacks::{
    self, count_rule_apply, count_rule_fit, layer_rank, loss_test, meta_predict, meta_train,
    regression_to_binary, threshold_apply, threshold_fit, MetaMode, ShadowPool,
};
use distinf::harness::{
    self, run_sweep, write_sweep_outputs, ExperimentConfig, MetaSettings,
};
use distinf::leakage::{
    binary_accuracy_bound, n_leaked_binary, n_leaked_regression, zipf_accuracy_bound,
    LeakageReport, RatioPair, ZipfSpec,
};
use distinf::nets::{self, LayerSpec, NetParams, TrainConfig};
use distinf::oracle::{exact_optimal_accuracy, exact_regression_mse, mc_optimal_accuracy_zipf};
use distinf::synthdata::{
    self, sample_dataset, Pool, RatioDistributionSpec, Record, SampleMode, UnderlyingSpec,
};

#[derive(Parser)]
#[command(
    name = "distinf",
    version,
    about = "Distribution-inference leakage bounds, optimal-distinguisher oracles, and attacks on synthetic model pools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Leakage metrics from observed attack performance (closed form).
    Nleaked(NleakedArgs),
    /// Distinguishing-accuracy upper bounds.
    Bound(BoundArgs),
    /// Ground-truth oracles (exact enumeration / Monte Carlo).
    Oracle {
        #[command(subcommand)]
        which: OracleCommand,
    },
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Train a pool of models onto disk with a manifest.
    TrainPool(TrainPoolArgs),
    /// Run one attack against victim model files.
    Attack(AttackArgs),
    /// Run a full sweep from a JSON config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-summarize a sweep's cells.json.
    Report {
        #[arg(long)]
        cells: PathBuf,
    },
}

#[derive(Args)]
struct NleakedArgs {
    /// Ratio of the first distribution (binary leakage; with --alpha1/--omega).
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    /// Observed distinguishing accuracy in [0.5, 1].
    #[arg(long)]
    omega: Option<f64>,
    /// Training-distribution ratio (regression leakage; with --mse).
    #[arg(long)]
    alpha: Option<f64>,
    /// Observed squared error of a regression attack.
    #[arg(long)]
    mse: Option<f64>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    /// Zipf pair as N0,S0,N1,S1 (N0 <= N1).
    #[arg(long)]
    zipf: Option<String>,
    /// Dataset size the bound is evaluated at.
    #[arg(long)]
    n: u32,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exact Bayes accuracy between two ratio distributions.
    Binary {
        #[arg(long)]
        alpha0: f64,
        #[arg(long)]
        alpha1: f64,
        #[arg(long)]
        n: u32,
    },
    /// Exact expected squared error of the sample-ratio estimator.
    Regress {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        n: u32,
    },
    /// Monte-Carlo likelihood-ratio accuracy between two Zipf distributions.
    Zipf {
        /// N0,S0,N1,S1 (N0 <= N1).
        #[arg(long)]
        zipf: String,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Victim,
    Adversary,
}

impl From<PoolArg> for Pool {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::Victim => Pool::Victim,
            PoolArg::Adversary => Pool::Adversary,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Iid,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Args, Clone)]
struct UnderlyingArgs {
    #[arg(long, default_value_t = 4)]
    noise_dims: usize,
    #[arg(long, default_value_t = 4)]
    signal_dims: usize,
    #[arg(long, default_value_t = 3.0)]
    signal_strength: f64,
    /// How much the label rule reads the property-correlated block (0 = latent property).
    #[arg(long, default_value_t = 0.5)]
    coupling: f64,
    #[arg(long, default_value_t = 0)]
    rule_seed: u64,
}

impl UnderlyingArgs {
    fn spec(&self) -> UnderlyingSpec {
        UnderlyingSpec {
            noise_dims: self.noise_dims,
            signal_dims: self.signal_dims,
            signal_strength: self.signal_strength,
            label_property_coupling: self.coupling,
            rule_seed: self.rule_seed,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    underlying: UnderlyingArgs,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PoolArg::Adversary)]
    pool: PoolArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Iid)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainPoolArgs {
    #[command(flatten)]
    underlying: UnderlyingArgs,
    #[arg(long)]
    alpha: f64,
    /// Models to train.
    #[arg(long)]
    count: usize,
    /// Records per training dataset.
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[arg(long, value_enum, default_value_t = PoolArg::Adversary)]
    role: PoolArg,
    /// Architecture, e.g. "dense:8:16,relu,dense:16:1,sigmoid" or
    /// "conv:3:3:1:4,relu,flatten,dense:16:1,sigmoid".
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 40)]
    epochs: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackModeArg {
    Loss,
    Threshold,
    Meta,
    MetaRegress,
    LayerRank,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    mode: AttackModeArg,
    /// Adversary pool manifest directories (two for binary attacks, any
    /// number for meta-regress; each manifest carries its alpha).
    #[arg(long = "pool", required = false)]
    pools: Vec<PathBuf>,
    /// Victim pool manifest directory for the alpha0 side.
    #[arg(long)]
    victims0: PathBuf,
    /// Victim pool manifest directory for the alpha1 side.
    #[arg(long)]
    victims1: PathBuf,
    /// Test dataset sampled from G_alpha0 (loss/threshold/layer-rank).
    #[arg(long)]
    set0: Option<PathBuf>,
    /// Test dataset sampled from G_alpha1 (loss/threshold/layer-rank).
    #[arg(long)]
    set1: Option<PathBuf>,
    #[arg(long)]
    alpha0: f64,
    #[arg(long)]
    alpha1: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    meta_epochs: u32,
    #[arg(long, default_value_t = 0.02)]
    meta_learning_rate: f64,
    /// Probe inputs taken from the test sets for layer ranking.
    #[arg(long, default_value_t = 32)]
    candidates: usize,
    #[arg(long)]
    out: PathBuf,
}

/// On-disk description of a trained pool.
#[derive(Serialize, Deserialize)]
struct PoolManifest {
    alpha: f64,
    role: Pool,
    arch: Vec<LayerSpec>,
    dataset_size: usize,
    master_seed: u64,
    models: Vec<ManifestModel>,
}

#[derive(Serialize, Deserialize)]
struct ManifestModel {
    file: String,
    index: usize,
    data_seed: u64,
    train_seed: u64,
}

#[derive(Serialize)]
struct AttackOutput {
    attack: &'static str,
    alpha0: f64,
    alpha1: f64,
    report: LeakageReport,
    below_chance: bool,
    ties: usize,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run() -> Result<(), Box<dyn Error>> {
    match Cli::parse().command {
        Command::Nleaked(args) => nleaked(args),
        Command::Bound(args) => bound(args),
        Command::Oracle { which } => oracle(which),
        Command::Gen(args) => gen(args),
        Command::TrainPool(args) => train_pool(args),
        Command::Attack(args) => attack(args),
        Command::Sweep { config, out } => sweep(&config, out),
        Command::Report { cells } => report(&cells),
    }
}

fn print_json(value: &impl Serialize) -> Result<(), Box<dyn Error>> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn nleaked(args: NleakedArgs) -> Result<(), Box<dyn Error>> {
    match (args.alpha0, args.alpha1, args.omega, args.alpha, args.mse) {
        (Some(a0), Some(a1), Some(omega), None, None) => {
            let pair = RatioPair::new(a0, a1)?;
            let value = n_leaked_binary(pair, omega)?;
            print_json(&serde_json::json!({
                "theorem": "binary",
                "alpha0": a0,
                "alpha1": a1,
                "omega": omega,
                "n_leaked": if value.is_finite() {
                    serde_json::json!(value)
                } else {
                    serde_json::json!("inf")
                },
            }))
        }
        (None, None, None, Some(alpha), Some(mse)) => {
            let value = n_leaked_regression(alpha, mse)?;
            print_json(&serde_json::json!({
                "theorem": "regression",
                "alpha": alpha,
                "mse": mse,
                "n_leaked": value,
            }))
        }
        _ => Err("pass either --alpha0/--alpha1/--omega or --alpha/--mse".into()),
    }
}

fn parse_zipf_pair(text: &str) -> Result<(ZipfSpec, ZipfSpec), Box<dyn Error>> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err("expected N0,S0,N1,S1".into());
    }
    Ok((
        ZipfSpec::new(parts[0].trim().parse()?, parts[1].trim().parse()?)?,
        ZipfSpec::new(parts[2].trim().parse()?, parts[3].trim().parse()?)?,
    ))
}

fn bound(args: BoundArgs) -> Result<(), Box<dyn Error>> {
    match (args.alpha0, args.alpha1, &args.zipf) {
        (Some(a0), Some(a1), None) => {
            let pair = RatioPair::new(a0, a1)?;
            print_json(&serde_json::json!({
                "kind": "binary",
                "alpha0": a0,
                "alpha1": a1,
                "n": args.n,
                "accuracy_bound": binary_accuracy_bound(pair, args.n),
            }))
        }
        (None, None, Some(zipf)) => {
            let (s0, s1) = parse_zipf_pair(zipf)?;
            print_json(&serde_json::json!({
                "kind": "zipf",
                "n": args.n,
                "accuracy_bound": zipf_accuracy_bound(s0, s1, args.n)?,
            }))
        }
        _ => Err("pass either --alpha0/--alpha1 or --zipf".into()),
    }
}

fn oracle(which: OracleCommand) -> Result<(), Box<dyn Error>> {
    match which {
        OracleCommand::Binary { alpha0, alpha1, n } => {
            let pair = RatioPair::new(alpha0, alpha1)?;
            print_json(&serde_json::json!({
                "oracle": "binary",
                "accuracy": exact_optimal_accuracy(pair, n)?,
                "bound": binary_accuracy_bound(pair, n),
            }))
        }
        OracleCommand::Regress { alpha, n } => print_json(&serde_json::json!({
            "oracle": "regress",
            "mse": exact_regression_mse(alpha, n)?,
            "closed_form": alpha * (1.0 - alpha) / f64::from(n),
        })),
        OracleCommand::Zipf { zipf, n, trials, seed } => {
            let (s0, s1) = parse_zipf_pair(&zipf)?;
            let est = mc_optimal_accuracy_zipf(s0, s1, n, trials, seed);
            print_json(&serde_json::json!({
                "oracle": "zipf",
                "estimate": est,
                "bound": zipf_accuracy_bound(s0, s1, n)?,
            }))
        }
    }
}

fn gen(args: GenArgs) -> Result<(), Box<dyn Error>> {
    let spec = RatioDistributionSpec::new(args.underlying.spec(), args.alpha)?;
    let mode = match args.mode {
        ModeArg::Iid => SampleMode::Iid,
        ModeArg::Exact => SampleMode::ExactCount,
    };
    let dataset = sample_dataset(&spec, args.size, args.seed, args.pool.into(), mode);
    let mut file = fs::File::create(&args.out)?;
    match args.format {
        FormatArg::Csv => synthdata::write_csv(&dataset.records, &mut file)?,
        FormatArg::Bin => synthdata::write_binary(&dataset.records, &mut file)?,
    }
    eprintln!(
        "wrote {} records ({} positive) to {}",
        dataset.records.len(),
        dataset.records.iter().filter(|r| r.property).count(),
        args.out.display()
    );
    Ok(())
}

/// Parses "dense:IN:OUT | conv:K1:K2:CIN:COUT | relu | flatten | sigmoid".
fn parse_arch(text: &str) -> Result<Vec<LayerSpec>, Box<dyn Error>> {
    text.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            Ok(match parts[0] {
                "dense" if parts.len() == 3 => LayerSpec::Dense {
                    input: parts[1].parse()?,
                    output: parts[2].parse()?,
                },
                "conv" if parts.len() == 5 => LayerSpec::Conv2D {
                    k1: parts[1].parse()?,
                    k2: parts[2].parse()?,
                    c_in: parts[3].parse()?,
                    c_out: parts[4].parse()?,
                },
                "relu" => LayerSpec::Relu,
                "flatten" => LayerSpec::Flatten,
                "sigmoid" => LayerSpec::SigmoidOutput,
                other => return Err(format!("unknown layer `{other}`").into()),
            })
        })
        .collect()
}

fn train_pool(args: TrainPoolArgs) -> Result<(), Box<dyn Error>> {
    let arch = parse_arch(&args.arch)?;
    let role: Pool = args.role.into();
    // Reuse the harness pool builder so CLI pools reproduce sweep pools
    // trained with the same master seed.
    let cfg = ExperimentConfig {
        underlying: args.underlying.spec(),
        alpha_grid: vec![args.alpha],
        fixed_alpha0: None,
        dataset_size: args.size,
        n_victim: args.count,
        n_shadow: args.count,
        arch: arch.clone(),
        train: TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            learning_rate: args.learning_rate,
            momentum: args.momentum,
            seed: 0,
        },
        attacks: vec![],
        repetitions: 1,
        master_seed: args.master_seed,
        output_dir: args.out_dir.clone(),
        eval_size: None,
        meta: MetaSettings::default(),
        layer_rank_candidates: 32,
    };
    let entries = harness::build_pools(&cfg, args.alpha, role, 0)?;

    fs::create_dir_all(&args.out_dir)?;
    let mut models = Vec::new();
    for entry in &entries {
        let file = format!("model_{:03}.json", entry.index);
        fs::write(args.out_dir.join(&file), nets::serialize(&entry.net))?;
        models.push(ManifestModel {
            file,
            index: entry.index,
            data_seed: entry.data_seed,
            train_seed: entry.train_seed,
        });
    }
    let manifest = PoolManifest {
        alpha: args.alpha,
        role,
        arch,
        dataset_size: args.size,
        master_seed: args.master_seed,
        models,
    };
    fs::write(
        args.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    eprintln!(
        "trained {} models into {}",
        entries.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn load_pool(dir: &Path) -> Result<(PoolManifest, Vec<NetParams>), Box<dyn Error>> {
    let manifest: PoolManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let models = manifest
        .models
        .iter()
        .map(|m| Ok(nets::deserialize(&fs::read_to_string(dir.join(&m.file))?)?))
        .collect::<Result<Vec<_>, Box<dyn Error>>>()?;
    Ok((manifest, models))
}

fn load_records(path: &Path) -> Result<Vec<Record>, Box<dyn Error>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"DISTINF") {
        Ok(synthdata::read_binary(&mut bytes.as_slice())?)
    } else {
        Ok(synthdata::read_csv(&mut bytes.as_slice())?)
    }
}

fn attack(args: AttackArgs) -> Result<(), Box<dyn Error>> {
    let pair = RatioPair::new(args.alpha0, args.alpha1)?;
    let (_, victims0) = load_pool(&args.victims0)?;
    let (_, victims1) = load_pool(&args.victims1)?;
    let truths: Vec<bool> = (0..victims0.len())
        .map(|_| false)
        .chain((0..victims1.len()).map(|_| true))
        .collect();
    let victims: Vec<&NetParams> = victims0.iter().chain(victims1.iter()).collect();

    let load_sets = || -> Result<(Vec<Record>, Vec<Record>), Box<dyn Error>> {
        let s0 = args.set0.as_ref().ok_or("--set0 required for this mode")?;
        let s1 = args.set1.as_ref().ok_or("--set1 required for this mode")?;
        Ok((load_records(s0)?, load_records(s1)?))
    };
    let binary_shadow_pool = || -> Result<ShadowPool, Box<dyn Error>> {
        if args.pools.len() != 2 {
            return Err("binary attacks need exactly two --pool manifests".into());
        }
        let (m0, p0) = load_pool(&args.pools[0])?;
        let (m1, p1) = load_pool(&args.pools[1])?;
        if m0.alpha >= m1.alpha {
            return Err("--pool manifests must be ordered by alpha".into());
        }
        let labels = (0..p0.len())
            .map(|_| false)
            .chain((0..p1.len()).map(|_| true))
            .collect();
        Ok(ShadowPool::binary(
            p0.into_iter().chain(p1).collect(),
            labels,
        ))
    };

    let mut ties = 0usize;
    let (name, predictions): (&'static str, Vec<bool>) = match args.mode {
        AttackModeArg::Loss => {
            let (s0, s1) = load_sets()?;
            let preds = victims
                .iter()
                .map(|net| -> Result<bool, Box<dyn Error>> {
                    let acc0 = nets::accuracy(net, &s0)?;
                    let acc1 = nets::accuracy(net, &s1)?;
                    let (pred, tie) = loss_test(acc0, acc1);
                    ties += usize::from(tie);
                    Ok(pred)
                })
                .collect::<Result<_, _>>()?;
            ("loss", preds)
        }
        AttackModeArg::Threshold => {
            let (s0, s1) = load_sets()?;
            let pool = binary_shadow_pool()?;
            let s0_accs: Vec<f64> = pool
                .models
                .iter()
                .map(|m| nets::accuracy(m, &s0))
                .collect::<Result<_, _>>()?;
            let s1_accs: Vec<f64> = pool
                .models
                .iter()
                .map(|m| nets::accuracy(m, &s1))
                .collect::<Result<_, _>>()?;
            let rule = threshold_fit(&pool, &s0_accs, &s1_accs)?;
            let chosen = if rule.chosen_set { &s1 } else { &s0 };
            let preds = victims
                .iter()
                .map(|net| Ok::<_, Box<dyn Error>>(threshold_apply(&rule, nets::accuracy(net, chosen)?)))
                .collect::<Result<_, _>>()?;
            ("threshold", preds)
        }
        AttackModeArg::Meta => {
            let pool = binary_shadow_pool()?;
            let mut meta_cfg = attacks::MetaConfig {
                mode: MetaMode::Binary,
                ..attacks::MetaConfig::default()
            };
            meta_cfg.epochs = args.meta_epochs;
            meta_cfg.learning_rate = args.meta_learning_rate;
            let meta = meta_train(&pool, &meta_cfg, args.seed)?;
            let preds = victims
                .iter()
                .map(|net| meta_predict(&meta, net).map(|p| p >= 0.5))
                .collect::<Result<_, _>>()?;
            ("meta", preds)
        }
        AttackModeArg::MetaRegress => {
            if args.pools.is_empty() {
                return Err("meta-regress needs one --pool per training ratio".into());
            }
            let mut models = Vec::new();
            let mut alphas = Vec::new();
            for dir in &args.pools {
                let (manifest, pool_models) = load_pool(dir)?;
                alphas.extend(std::iter::repeat(manifest.alpha).take(pool_models.len()));
                models.extend(pool_models);
            }
            let pool = ShadowPool::regression(models, alphas);
            let mut meta_cfg = attacks::MetaConfig {
                mode: MetaMode::Regression,
                ..attacks::MetaConfig::default()
            };
            meta_cfg.epochs = args.meta_epochs;
            meta_cfg.learning_rate = args.meta_learning_rate;
            let meta = meta_train(&pool, &meta_cfg, args.seed)?;
            let preds = victims
                .iter()
                .map(|net| -> Result<bool, Box<dyn Error>> {
                    let pred = meta_predict(&meta, net)?;
                    Ok(regression_to_binary(pred, pair)?)
                })
                .collect::<Result<_, _>>()?;
            ("meta-regress", preds)
        }
        AttackModeArg::LayerRank => {
            let (s0, s1) = load_sets()?;
            let pool = binary_shadow_pool()?;
            let per_set = (args.candidates / 2).max(1);
            let candidates: Vec<Vec<f64>> = s0
                .iter()
                .take(per_set)
                .chain(s1.iter().take(per_set))
                .map(|r| r.features.clone())
                .collect();
            let split = |keep_even: bool| {
                let kept: Vec<usize> = (0..pool.models.len())
                    .filter(|idx| (idx % 2 == 0) == keep_even)
                    .collect();
                ShadowPool::binary(
                    kept.iter().map(|&k| pool.models[k].clone()).collect(),
                    kept.iter().map(|&k| pool.dist_labels[k]).collect(),
                )
            };
            let ranking = layer_rank(&split(true), &candidates, &split(false))?;
            let rule = count_rule_fit(&pool, &candidates, ranking[0].0)?;
            let preds = victims
                .iter()
                .map(|net| Ok::<_, Box<dyn Error>>(count_rule_apply(&rule, net, &candidates)?))
                .collect::<Result<_, _>>()?;
            ("layer-rank", preds)
        }
    };

    let (report, below_chance) = harness::report_from_predictions(pair, &predictions, &truths)
        .map_err(|e| -> Box<dyn Error> { Box::new(e) })?;
    let output = AttackOutput {
        attack: name,
        alpha0: args.alpha0,
        alpha1: args.alpha1,
        report,
        below_chance,
        ties,
    };
    fs::write(&args.out, serde_json::to_string_pretty(&output)?)?;
    println!("{}", serde_json::to_string(&output)?);
    Ok(())
}

fn sweep(config_path: &Path, out: Option<PathBuf>) -> Result<(), Box<dyn Error>> {
    let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(config_path)?)?;
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    let result = run_sweep(&cfg)?;
    let written = write_sweep_outputs(&result, &cfg)?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    print_json(&harness::summarize(&result))
}

fn report(cells_path: &Path) -> Result<(), Box<dyn Error>> {
    let result: harness::SweepResult = serde_json::from_str(&fs::read_to_string(cells_path)?)?;
    print_json(&harness::summarize(&result))
}
