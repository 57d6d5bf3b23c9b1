mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use biocompass::baselines::{parse_signatures, run_baselines, BaselineConfig, DEFAULT_SIGNATURES};
use biocompass::data::{generate_synthetic, load_csv, prepare_fold, write_csv, Dataset};
use biocompass::diffcore::OptimizerConfig;
use biocompass::eval::{emit_report, run_ablation, run_protocol, MetricsReport, Protocol, RunConfig};
use biocompass::model::{save_checkpoint, BioCompass, TrainMode};
use biocompass::objective::AlignNorm;
use biocompass::train::train;

use config::{parse_seed_list, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "biocompass", version, about = "Treatment-gated concept bottleneck training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Synth(SynthArgs),
    /// Train one model on every sample and write a checkpoint and loss curve.
    Train(RunArgs),
    /// Leave-one-group-out evaluation.
    Eval(RunArgs),
    /// Full model plus each component disabled in turn.
    Ablate(RunArgs),
    /// Signature, biomarker, PCA and expression logistic-regression baselines.
    Baselines(BaselineArgs),
    /// Print the dimensions inferred from a cohort CSV.
    Schema {
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cohort CSV; the config's synthetic spec is used when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated seeds, e.g. `0,1,2,3`.
    #[arg(long)]
    seed_list: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads for the fold×seed grid.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    protocol: Option<Protocol>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    signal: Option<f64>,
    /// Give every cohort this many samples instead of the default layout.
    #[arg(long)]
    cohort_size: Option<usize>,
    #[arg(long)]
    genes: Option<usize>,
    #[arg(long)]
    missing_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Freeze the encoder (default).
    #[arg(long, conflicts_with = "fft")]
    pft: bool,
    /// Train the encoder too.
    #[arg(long)]
    fft: bool,
    #[arg(long)]
    disable_gating: bool,
    #[arg(long)]
    disable_pathway: bool,
    #[arg(long)]
    disable_aux: bool,
    #[arg(long)]
    disable_alignment: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Use the un-normalized alignment sum instead of the batch mean.
    #[arg(long)]
    align_raw_norm: bool,
    /// Weight fold metrics by test-set size when averaging.
    #[arg(long)]
    weighted: bool,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Signature definition file.
    #[arg(long)]
    signatures: Option<PathBuf>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    weighted: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load_or_default(self.config.as_deref())?;
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(s) = &self.seed_list {
            cfg.seeds = Some(parse_seed_list(s)?);
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(j) = self.jobs {
            cfg.jobs = Some(j);
        }
        if let Some(p) = self.protocol {
            cfg.protocol = p;
        }
        Ok(cfg)
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.common.resolve()?;
        if self.fft {
            cfg.train.mode = TrainMode::Fft;
        } else if self.pft {
            cfg.train.mode = TrainMode::Pft;
        }
        let a = &mut cfg.ablation;
        a.disable_gating |= self.disable_gating;
        a.disable_pathway |= self.disable_pathway;
        a.disable_aux |= self.disable_aux;
        a.disable_alignment |= self.disable_alignment;
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.optimizer = match cfg.train.optimizer {
                OptimizerConfig::Sgd { .. } => OptimizerConfig::Sgd { learning_rate: lr },
                OptimizerConfig::Adam { beta1, beta2, eps, .. } => OptimizerConfig::Adam {
                    learning_rate: lr,
                    beta1,
                    beta2,
                    eps,
                },
            };
        }
        if self.align_raw_norm {
            cfg.train.align_norm = AlignNorm::Raw;
        }
        cfg.weighted |= self.weighted;
        Ok(cfg)
    }
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        Some(p) => load_csv(p).with_context(|| format!("loading {}", p.display())),
        None => {
            log::info!("no --data given; generating the configured synthetic cohorts");
            Ok(generate_synthetic(&cfg.synthetic)?)
        }
    }
}

fn run_config(cfg: &ExperimentConfig) -> Result<RunConfig> {
    Ok(RunConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        seeds: cfg.seed_list()?,
        ablation: cfg.ablation,
        jobs: cfg.jobs(),
    })
}

fn write_outputs(report: &MetricsReport, cfg: &ExperimentConfig) -> Result<()> {
    let dir = cfg.out_dir();
    let files = emit_report(report, &dir, cfg.weighted).with_context(|| format!("writing report to {}", dir.display()))?;
    std::fs::write(dir.join("config.toml"), toml::to_string(cfg)?)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg = ExperimentConfig::load_or_default(args.config.as_deref())?;
    let mut spec = cfg.synthetic.clone();
    spec.seed = match args.seed {
        Some(s) => s,
        None if args.config.is_some() => spec.seed,
        None => cfg.single_seed()?,
    };
    if let Some(s) = args.signal {
        spec.signal_strength = s;
    }
    if let Some(n) = args.cohort_size {
        spec.cohorts.iter_mut().for_each(|c| c.size = n);
    }
    if let Some(g) = args.genes {
        spec.gene_count = g;
    }
    if let Some(m) = args.missing_rate {
        spec.missing_rate = m;
    }
    let ds = generate_synthetic(&spec)?;
    write_csv(&ds, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} samples over {} cohorts to {}", ds.len(), spec.cohorts.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load_dataset(&cfg)?;
    let seed = cfg.single_seed()?;
    let rc = run_config(&cfg)?;
    let (model_cfg, train_cfg) = rc.resolved(&ds.schema);
    let all: Vec<usize> = (0..ds.len()).collect();
    let prepared = prepare_fold(&ds, &all, &[])?;
    let mut model = BioCompass::new(model_cfg, seed)?;
    let curve = train(&mut model, &prepared.train, &train_cfg, seed)?;

    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    let mut w = csv_writer(&dir.join("curve.csv"))?;
    w.write_record(["epoch", "total", "cls", "pathway", "align", "aux_tide", "aux_ipres", "aux_pheno"])?;
    for r in &curve {
        log::info!("{}", r.log_line());
        let l = r.loss;
        w.write_record(
            [r.epoch as f64, l.total, l.cls, l.pathway, l.align, l.aux_tide, l.aux_ipres, l.aux_pheno].map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    save_checkpoint(&model, &dir.join("model.ckpt"))?;
    std::fs::write(dir.join("normalizer.json"), serde_json_string(&prepared.normalizer)?)?;
    std::fs::write(dir.join("config.toml"), toml::to_string(&cfg)?)?;
    println!("{}", dir.join("model.ckpt").display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn serde_json_string<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn cmd_eval(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let ds = load_dataset(&cfg)?;
    let report = run_protocol(&ds, cfg.protocol, &run_config(&cfg)?)?;
    log_summary(&report, None);
    write_outputs(&report, &cfg)
}

fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let mut cfg = args.resolve()?;
    if cfg.ablation != Default::default() {
        log::warn!("ablate runs its own five configurations; ignoring --disable-* flags");
        cfg.ablation = Default::default();
    }
    let ds = load_dataset(&cfg)?;
    let report = run_ablation(&ds, cfg.protocol, &run_config(&cfg)?)?;
    for m in report.methods() {
        log_summary(&report, m.as_deref());
    }
    write_outputs(&report, &cfg)
}

fn cmd_baselines(args: &BaselineArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(s) = &args.signatures {
        cfg.baselines.signatures = Some(s.clone());
    }
    if let Some(l2) = args.l2 {
        cfg.baselines.l2 = l2;
    }
    cfg.weighted |= args.weighted;
    let text = match &cfg.baselines.signatures {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => DEFAULT_SIGNATURES.to_string(),
    };
    let signatures = parse_signatures(&text)?;
    let ds = load_dataset(&cfg)?;
    let bc = BaselineConfig {
        l2: cfg.baselines.l2,
        pca_components: cfg.baselines.pca_components,
        seeds: cfg.seed_list()?,
        jobs: cfg.jobs(),
        per_signature: cfg.baselines.per_signature,
    };
    let report = run_baselines(&ds, cfg.protocol, &signatures, &bc)?;
    for m in report.methods() {
        log_summary(&report, m.as_deref());
    }
    write_outputs(&report, &cfg)
}

fn cmd_schema(path: &Path) -> Result<()> {
    let ds = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    let s = &ds.schema;
    println!("samples\t{}", ds.len());
    println!("genes\t{}", s.gene_count());
    println!("pathways\t{}", s.pathway_dim());
    println!("biomarkers\t{}", s.biomarker_dim());
    println!("tide\t{}", s.tide_dim());
    println!("ipres\t{}", s.ipres_dim());
    println!("pheno\t{}", s.pheno_dim());
    for key in ["cohort", "cancer_type", "treatment"] {
        let groups = ds.group_values(key.parse()?);
        println!("{key}\t{}\t{}", groups.len(), groups.join(","));
    }
    Ok(())
}

fn log_summary(report: &MetricsReport, method: Option<&str>) {
    let auc = report.mean_metric(method, "roc_auc");
    let acc = report.mean_metric(method, "accuracy");
    log::info!(
        "summary method={} roc_auc={} accuracy={}",
        method.unwrap_or("model"),
        auc.map_or("NA".into(), |v| format!("{v:.4}")),
        acc.map_or("NA".into(), |v| format!("{v:.4}"))
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Baselines(a) => cmd_baselines(a),
        Command::Schema { data } => cmd_schema(data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
