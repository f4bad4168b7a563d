use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use splitleak::attack::AttackVariant;
use splitleak::checkpoint::Checkpoint;
use splitleak::dp::LabelDpConfig;
use splitleak::experiment::{
    comparison_table, epoch_lines, persist, read_records, Experiment, ExperimentConfig, CHECKPOINT_FILE,
    CONFIG_COPY_FILE, RESULTS_FILE, TRAIN_LOG_FILE,
};
use splitleak::protocol::TrainMode;
use splitleak::selftest;

#[derive(Parser)]
#[command(
    name = "splitleak",
    version,
    about = "Split-learning label and feature leakage experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write checkpoint.bin, train.log and the test AUC.
    Train(Opts),
    /// Attack the cut-layer gradients of a trained checkpoint.
    Attack(Opts),
    /// KNN reconstruction from server features and cut activations.
    Baseline(Opts),
    /// Mean ± std comparison table over one or more run directories.
    Report {
        #[command(flatten)]
        opts: Opts,
        /// Run directories to merge; defaults to the config's output directory.
        dirs: Vec<PathBuf>,
    },
    /// Built-in correctness checks; exits nonzero if any fails.
    Selftest {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train, attack and run baselines for every repetition.
    Run(Opts),
}

#[derive(Args, Clone)]
struct Opts {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Cut-gradient noise multiplier; enables DP with the adaptive clip.
    #[arg(long)]
    dp_sigma: Option<f64>,
    /// Label flip probability; enables label DP.
    #[arg(long)]
    labeldp_p: Option<f64>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Candidates kept by the top-k variant.
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    max_samples: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sl,
    Fsl,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Exact,
    Topk,
}

impl Opts {
    fn config(&self) -> Result<ExperimentConfig> {
        let path = self.config.as_ref().context("--config is required")?;
        let mut cfg = ExperimentConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.run.out = std::env::current_dir()?.join(out);
        }
        if let Some(mode) = self.mode {
            cfg.train.mode = match mode {
                ModeArg::Sl => TrainMode::Sl,
                ModeArg::Fsl => TrainMode::Fsl,
            };
        }
        if let Some(sigma) = self.dp_sigma {
            let mut dp = cfg.dp.unwrap_or_default();
            dp.noise_multiplier = sigma;
            cfg.dp = Some(dp);
        }
        if let Some(p) = self.labeldp_p {
            cfg.label_dp = Some(LabelDpConfig { flip_probability: p });
        }
        if let Some(v) = self.variant {
            let variant = match v {
                VariantArg::Exact => AttackVariant::Exact,
                VariantArg::Topk if self.k == 0 => bail!("--k must be at least 1"),
                VariantArg::Topk => AttackVariant::TopK(self.k),
            };
            cfg.attack.variants = vec![variant.to_string()];
        }
        if let Some(m) = self.max_samples {
            cfg.attack.max_samples = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn experiment(&self) -> Result<Experiment> {
        let exp = Experiment::load(self.config()?)?;
        fs::create_dir_all(exp.out_dir())?;
        Ok(exp)
    }
}

/// Appends to `train.log` in the output directory and echoes to stderr.
struct Log(fs::File);

impl Log {
    fn open(dir: &Path, truncate: bool) -> Result<Self> {
        let path = dir.join(TRAIN_LOG_FILE);
        let file = if truncate {
            fs::File::create(&path)?
        } else {
            OpenOptions::new().create(true).append(true).open(&path)?
        };
        Ok(Self(file))
    }

    fn line(&mut self, line: &str) {
        let _ = writeln!(self.0, "{line}");
        eprintln!("{line}");
    }
}

fn train(opts: &Opts) -> Result<()> {
    let exp = opts.experiment()?;
    let out = exp.out_dir();
    let seed = exp.config.run.seed;
    let mut log = Log::open(&out, true)?;
    fs::write(out.join(CONFIG_COPY_FILE), exp.config.to_toml())?;
    log.line(&format!(
        "train: seed {seed}, scenario {} ({}), config {}",
        exp.config.scenario(),
        exp.config.train.mode,
        exp.config_hash()
    ));
    let (split, models, train_log) = exp.train(seed)?;
    for line in epoch_lines(&train_log) {
        log.line(&line);
    }
    let auc = exp.test_auc(&models, &split, seed)?;
    Checkpoint::new(&exp.schema, &models, &train_log).save(out.join(CHECKPOINT_FILE))?;
    persist(&out, exp.model_records(&train_log, auc, seed, 0))?;
    log.line(&format!("test AUC {}", auc.map_or("-".into(), |a| format!("{a:.4}"))));
    Ok(())
}

fn load_trained(exp: &Experiment) -> Result<(Checkpoint, u64)> {
    let path = exp.out_dir().join(CHECKPOINT_FILE);
    let ckpt = exp
        .load_checkpoint(&path)
        .with_context(|| format!("loading {} (run `splitleak train` first)", path.display()))?;
    let seed = exp.config.run.seed;
    exp.check_checkpoint(&ckpt, seed)?;
    Ok((ckpt, seed))
}

fn attack(opts: &Opts) -> Result<()> {
    let exp = opts.experiment()?;
    let (ckpt, seed) = load_trained(&exp)?;
    let mut log = Log::open(&exp.out_dir(), false)?;
    let split = exp.split(seed)?;
    let ids = exp.attack_ids(&split);
    let runs = exp.attack(&ckpt.models(), &ids, seed, &exp.variants)?;
    for r in &runs {
        log.line(&format!(
            "attack {}: {} samples, {:.3} ms/sample, mean feature F1 {:.4}, label F1 {:.4}",
            r.variant,
            r.report.n_samples,
            r.secs_per_sample * 1e3,
            r.report.mean_feature_f1(),
            r.report.label.f1
        ));
        for s in r.report.scores() {
            log.line(&format!(
                "  {:<24} F1 {:.4}  accuracy {:.4}",
                s.feature, s.f1, s.accuracy
            ));
        }
    }
    persist(exp.out_dir(), exp.attack_records(&runs, seed, 0))?;
    Ok(())
}

fn baseline(opts: &Opts) -> Result<()> {
    let exp = opts.experiment()?;
    let (ckpt, seed) = load_trained(&exp)?;
    let mut log = Log::open(&exp.out_dir(), false)?;
    let split = exp.split(seed)?;
    let ids = exp.attack_ids(&split);
    let b = exp.baselines(&ckpt.models(), &split, &ids)?;
    log.line(&format!(
        "baselines knn:{}: features mean F1 {:.4}, output mean F1 {:.4}",
        exp.config.baseline.k,
        b.features.mean_feature_f1(),
        b.output.mean_feature_f1()
    ));
    persist(exp.out_dir(), exp.baseline_records(&b, seed, 0))?;
    Ok(())
}

fn report(opts: &Opts, dirs: &[PathBuf]) -> Result<()> {
    let dirs = if dirs.is_empty() {
        vec![opts.config()?.out_dir()]
    } else {
        dirs.to_vec()
    };
    let mut records = Vec::new();
    for d in &dirs {
        let path = d.join(RESULTS_FILE);
        records.extend(read_records(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    let table = comparison_table(&records);
    print!("{table}");
    if let Some(out) = &opts.out {
        persist(out, records)?;
        fs::write(out.join("report.tsv"), table)?;
    }
    Ok(())
}

fn run(opts: &Opts) -> Result<()> {
    let exp = opts.experiment()?;
    exp.run(&mut |line| eprintln!("{line}"))?;
    eprintln!("results in {}", exp.out_dir().display());
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train(o) => train(o)?,
        Command::Attack(o) => attack(o)?,
        Command::Baseline(o) => baseline(o)?,
        Command::Report { opts, dirs } => report(opts, dirs)?,
        Command::Run(o) => run(o)?,
        Command::Selftest { seed } => {
            let checks = selftest::run_all(*seed, &mut |c| println!("{}", c.line()))?;
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
