use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};

use vreid::data::{export_dataset, AttributeSchema, SyntheticConfig};
use vreid::eval::{cross_dataset_eval, evaluate_split};
use vreid::experiment::{self, DatasetSource, ExperimentConfig, Precision, Splits, Variant};
use vreid::losses::LossToggles;
use vreid::model::{load_checkpoint, ModelScale};

#[derive(Parser)]
#[command(name = "vreid", version, about = "Video person re-identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic benchmark to a MARS-style directory.
    Generate(GenerateArgs),
    /// Train one model.
    Train(RunArgs),
    /// Score a checkpoint on a dataset's query/gallery split.
    Evaluate(EvaluateArgs),
    /// Train the five ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Train with and without AITL and record DVDP per epoch.
    DvdpCurve(RunArgs),
}

#[derive(Args)]
struct SyntheticArgs {
    /// Number of synthetic identities.
    #[arg(long)]
    identities: Option<usize>,
    #[arg(long)]
    tracklets_per_identity: Option<usize>,
    /// Seed of the synthetic generator.
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    occlusion_prob: Option<f64>,
    #[arg(long)]
    noise: Option<f32>,
}

impl SyntheticArgs {
    fn apply(&self, cfg: &mut SyntheticConfig) {
        if let Some(v) = self.identities {
            cfg.identities = v;
        }
        if let Some(v) = self.tracklets_per_identity {
            cfg.tracklets_per_identity = v;
        }
        if let Some(v) = self.data_seed {
            cfg.seed = v;
        }
        if let Some(v) = self.occlusion_prob {
            cfg.occlusion_prob = v;
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Root of a MARS-style dataset; synthetic data is used when absent.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Attribute CSV (defaults to `<data-root>/attributes.csv`).
    #[arg(long)]
    attributes: Option<PathBuf>,
    #[command(flatten)]
    synthetic: SyntheticArgs,
}

impl DatasetArgs {
    fn apply(&self, source: &mut DatasetSource) {
        if let Some(root) = &self.data_root {
            let attributes = self.attributes.clone().unwrap_or_else(|| root.join("attributes.csv"));
            *source = DatasetSource::Layout {
                root: root.clone(),
                attributes,
            };
        }
        if let DatasetSource::Synthetic(cfg) = source {
            self.synthetic.apply(cfg);
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Toy,
    PaperFaithful,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, value_enum)]
    scale: Option<ScaleArg>,
    /// Identities per batch.
    #[arg(long)]
    p: Option<usize>,
    /// Clips per identity.
    #[arg(long)]
    k: Option<usize>,
    /// Frames per clip.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tri_margin: Option<f64>,
    #[arg(long)]
    intra_margin: Option<f64>,
    /// Enabled loss terms, comma separated: bce, tri, softmax, aitl, itl.
    #[arg(long, value_delimiter = ',')]
    losses: Option<Vec<String>>,
    /// Re-weight Re-ID features with the attribute attention maps.
    #[arg(long)]
    attention: Option<bool>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

fn parse_toggles(names: &[String]) -> anyhow::Result<LossToggles> {
    let mut t = LossToggles {
        bce: false,
        tri: false,
        softmax: false,
        aitl: false,
        itl: false,
    };
    for n in names {
        match n.trim() {
            "bce" => t.bce = true,
            "tri" => t.tri = true,
            "softmax" => t.softmax = true,
            "aitl" => t.aitl = true,
            "itl" => t.itl = true,
            other => bail!("unknown loss term `{other}`"),
        }
    }
    Ok(t)
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        self.dataset.apply(&mut cfg.dataset);
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.scale {
            cfg.scale = match v {
                ScaleArg::Toy => ModelScale::Toy,
                ScaleArg::PaperFaithful => ModelScale::PaperFaithful,
            };
        }
        if let Some(v) = self.precision {
            cfg.precision = match v {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
        }
        macro_rules! set {
            ($($field:ident => $($target:ident).+),*) => {
                $(if let Some(v) = self.$field { cfg.$($target).+ = v; })*
            };
        }
        set!(p => p, k => k, t => t, epochs => epochs, lr => optimizer.lr, seed => seed,
             tri_margin => loss.tri_margin, intra_margin => loss.intra_margin,
             attention => attention, eval_every => eval_every);
        if let Some(names) = &self.losses {
            cfg.loss.toggles = parse_toggles(names)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON synthetic config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    synthetic: SyntheticArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// The dataset differs from the training one: every identity is split
    /// into query and gallery, with no train identities held out.
    #[arg(long)]
    gallery_from_other_dataset: bool,
    /// Frames per clip (defaults to the training value).
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> anyhow::Result<()> {
    let ck = load_checkpoint(&args.checkpoint, &Device::Cpu)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let trained: Option<ExperimentConfig> = ck
        .manifest
        .get("experiment")
        .map(|v| serde_json::from_value(v.clone()))
        .transpose()?;
    let mut cfg = trained.clone().unwrap_or_default();
    args.dataset.apply(&mut cfg.dataset);
    let t = args.t.unwrap_or(cfg.t);
    let (ranking, report) = if args.gallery_from_other_dataset {
        let (_, tracklets) = cfg.dataset.load()?;
        let tag = trained.map_or_else(|| "unknown".to_string(), |c| c.dataset.tag());
        let r = cross_dataset_eval(&ck.model, &tag, &tracklets, t, cfg.query_fraction)?;
        (r.result.clone(), serde_json::to_value(&r)?)
    } else {
        let splits = Splits::from_config(&cfg)?;
        let r = evaluate_split(&ck.model, &splits.query, &splits.gallery, t)?;
        (r.clone(), serde_json::to_value(&r)?)
    };
    println!(
        "R1 {:.4}  R5 {:.4}  R10 {:.4}  R20 {:.4}  mAP {:.4}  ({} queries, {} skipped)",
        ranking.rank(1),
        ranking.rank(5),
        ranking.rank(10),
        ranking.rank(20),
        ranking.map,
        ranking.queries,
        ranking.skipped
    );
    if let Some(dir) = &args.out_dir {
        write_json(dir, "evaluation.json", &report)?;
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate(args) => {
            let mut cfg = match &args.config {
                Some(p) => serde_json::from_reader(fs::File::open(p)?)?,
                None => SyntheticConfig::default(),
            };
            args.synthetic.apply(&mut cfg);
            let schema = AttributeSchema::synthetic_default();
            let tracklets = vreid::data::generate_synthetic_dataset(&schema, &cfg)?;
            export_dataset(&tracklets, &schema, &args.out_dir)?;
            println!("wrote {} tracklets to {}", tracklets.len(), args.out_dir.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = experiment::train(&cfg)?;
            let r = &out.final_ranking;
            println!(
                "R1 {:.4}  mAP {:.4}  DVDP {:.4}  -> {}",
                r.rank(1),
                r.map,
                out.final_dvdp,
                cfg.out_dir.display()
            );
        }
        Command::Evaluate(args) => evaluate(&args)?,
        Command::Ablate(args) => {
            let cfg = args.run.resolve()?;
            let table = experiment::ablate(&cfg, &args.seeds, &Variant::ALL)?;
            print!("{}", table.to_markdown());
        }
        Command::DvdpCurve(args) => {
            let cfg = args.resolve()?;
            let c = experiment::dvdp_curve(&cfg)?;
            println!(
                "final DVDP with AITL {:.4} (mAP {:.4}), without {:.4} (mAP {:.4})",
                c.with_aitl.final_dvdp,
                c.with_aitl.final_ranking.map,
                c.without_aitl.final_dvdp,
                c.without_aitl.final_ranking.map
            );
        }
    }
    Ok(())
}
