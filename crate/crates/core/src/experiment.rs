//! Experiment configuration, the training loop and the ablation / DVDP-curve
//! drivers behind the command-line tool.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_dataset, load_mars_layout, query_gallery_split, split_by_identity, AttributeGroup,
    AttributeSchema, SyntheticConfig, Tracklet,
};
use crate::distance::FeatureMatrix;
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, DvdpAccumulator, DvdpTrace, RankingResult};
use crate::losses::{dvdp, unified_loss, BatchFeatures, LossBreakdown, LossConfig, LossInputs, LossToggles};
use crate::model::{save_checkpoint, Mode, Model, ModelConfig, ModelScale, TemporalConv};
use crate::sampler::{epoch_iterator, MiniBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// A MARS-style directory plus its attribute CSV. The schema is read from
    /// the CSV's `.schema.json` sidecar.
    Layout { root: PathBuf, attributes: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<(AttributeSchema, Vec<Tracklet>)> {
        match self {
            DatasetSource::Synthetic(cfg) => {
                let schema = AttributeSchema::synthetic_default();
                let tracklets = generate_synthetic_dataset(&schema, cfg)?;
                Ok((schema, tracklets))
            }
            DatasetSource::Layout { root, attributes } => {
                let loaded = load_mars_layout(root, attributes)?;
                Ok((loaded.schema, loaded.tracklets))
            }
        }
    }

    /// Short human-readable name used in cross-dataset reports.
    pub fn tag(&self) -> String {
        match self {
            DatasetSource::Synthetic(cfg) => format!("synthetic-seed{}", cfg.seed),
            DatasetSource::Layout { root, .. } => root.display().to_string(),
        }
    }
}

/// Which attribute predictions drive AITL's intra-class selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AitlAttributes {
    #[default]
    Both,
    IdRelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Fraction of identities (by sorted id) used for training.
    pub train_fraction: f64,
    /// Fraction of each test identity's tracklets used as queries.
    pub query_fraction: f64,
    pub scale: ModelScale,
    pub p: usize,
    pub k: usize,
    pub t: usize,
    pub loss: LossConfig,
    pub attention: bool,
    pub temporal_conv: TemporalConv,
    pub reid_conv: bool,
    pub aitl_attributes: AitlAttributes,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Run validation every this many epochs; the last epoch is always
    /// validated.
    pub eval_every: usize,
    pub seed: u64,
    pub precision: Precision,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            train_fraction: 0.5,
            query_fraction: 0.2,
            scale: ModelScale::Toy,
            p: 4,
            k: 4,
            t: 4,
            loss: LossConfig::default(),
            attention: true,
            temporal_conv: TemporalConv::Dilated,
            reid_conv: false,
            aitl_attributes: AitlAttributes::Both,
            optimizer: OptimizerConfig::default(),
            epochs: 30,
            eval_every: 1,
            seed: 0,
            precision: Precision::F32,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        self.loss.toggles.validate()?;
        if self.loss.toggles.aitl && !self.loss.toggles.bce {
            return fail("aitl selects by attribute predictions and needs bce enabled".into());
        }
        if self.t == 0 {
            return fail("clip length t must be >= 1".into());
        }
        if self.k < 2 || self.p == 0 {
            return fail(format!("need P >= 1 and K >= 2, got P={} K={}", self.p, self.k));
        }
        if self.epochs == 0 || self.eval_every == 0 {
            return fail("epochs and eval_every must be positive".into());
        }
        if !(0.0 < self.train_fraction && self.train_fraction < 1.0) {
            return fail("train_fraction must lie in (0, 1)".into());
        }
        if !(0.0 < self.query_fraction && self.query_fraction < 1.0) {
            return fail("query_fraction must lie in (0, 1)".into());
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return fail("learning rate must be positive".into());
        }
        if let DatasetSource::Synthetic(cfg) = &self.dataset {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, schema: &AttributeSchema, num_classes: usize) -> ModelConfig {
        let mut m = ModelConfig::for_scale(
            self.scale,
            schema.binary_width(AttributeGroup::IdRelevant),
            schema.binary_width(AttributeGroup::IdIrrelevant),
            num_classes,
        );
        m.attention = self.attention;
        m.temporal_conv = self.temporal_conv;
        m.reid_conv = self.reid_conv;
        m
    }
}

/// The five loss / attention combinations of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Asta,
    Itl,
    Aitl,
    AstaAitl,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::Asta,
        Variant::Itl,
        Variant::Aitl,
        Variant::AstaAitl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::Asta => "Baseline + ASTA",
            Variant::Itl => "Baseline + ITL",
            Variant::Aitl => "Baseline + AITL",
            Variant::AstaAitl => "Baseline + ASTA + AITL",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Asta => "asta",
            Variant::Itl => "itl",
            Variant::Aitl => "aitl",
            Variant::AstaAitl => "asta_aitl",
        }
    }

    /// Toggles and attention flag of this variant.
    pub fn settings(self) -> (LossToggles, bool) {
        let base = LossToggles {
            bce: false,
            tri: true,
            softmax: true,
            aitl: false,
            itl: false,
        };
        match self {
            Variant::Baseline => (base, false),
            Variant::Asta => (LossToggles { bce: true, ..base }, true),
            Variant::Itl => (LossToggles { itl: true, ..base }, false),
            Variant::Aitl => (LossToggles { bce: true, aitl: true, ..base }, false),
            Variant::AstaAitl => (LossToggles { bce: true, aitl: true, ..base }, true),
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let (toggles, attention) = self.settings();
        let mut out = cfg.clone();
        out.loss.toggles = toggles;
        out.attention = attention;
        out
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    Batch {
        epoch: usize,
        batch: usize,
        #[serde(flatten)]
        loss: LossBreakdown,
        dvdp: f64,
    },
    Epoch {
        epoch: usize,
        dvdp: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        ranking: Option<RankingResult>,
    },
}

/// Train / query / gallery partition of a dataset.
pub struct Splits {
    pub schema: AttributeSchema,
    pub train: Vec<Tracklet>,
    pub query: Vec<Tracklet>,
    pub gallery: Vec<Tracklet>,
}

impl Splits {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (schema, tracklets) = cfg.dataset.load()?;
        let (train, test) = split_by_identity(&tracklets, cfg.train_fraction);
        let (query, gallery) = query_gallery_split(&test, cfg.query_fraction);
        Ok(Self {
            schema,
            train,
            query,
            gallery,
        })
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub trace: DvdpTrace,
    pub records: Vec<MetricsRecord>,
    pub final_ranking: RankingResult,
    pub final_dvdp: f64,
}

/// Writes each record as a JSON line when an output file is attached.
struct MetricsSink {
    file: Option<BufWriter<File>>,
    records: Vec<MetricsRecord>,
}

impl MetricsSink {
    fn push(&mut self, r: MetricsRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            serde_json::to_writer(&mut *f, &r)?;
            f.write_all(b"\n")?;
        }
        self.records.push(r);
        Ok(())
    }
}

pub struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a Splits,
    model: Model,
    optimizer: AdamW,
    labels: HashMap<u32, usize>,
    targets: HashMap<String, Vec<f32>>,
    rel_width: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, splits: &'a Splits, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let ids = crate::data::distinct_identities(&splits.train);
        if ids.len() < cfg.p {
            return Err(Error::InsufficientIdentities {
                available: ids.len(),
                requested: cfg.p,
            });
        }
        let labels: HashMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut targets = HashMap::new();
        for t in &splits.train {
            let mut v = splits.schema.encode(&t.attributes, AttributeGroup::IdRelevant)?;
            v.extend(splits.schema.encode(&t.attributes, AttributeGroup::IdIrrelevant)?);
            targets.insert(t.tracklet_id.clone(), v);
        }
        let model = Model::new(
            cfg.model_config(&splits.schema, ids.len()),
            cfg.seed,
            cfg.precision.dtype(),
            device,
        )?;
        let optimizer = AdamW::new(
            model.params().all_vars(),
            ParamsAdamW {
                lr: cfg.optimizer.lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            cfg,
            splits,
            rel_width: splits.schema.binary_width(AttributeGroup::IdRelevant),
            model,
            optimizer,
            labels,
            targets,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Forward, unified loss, backward and parameter update for one batch.
    /// Returns the loss breakdown and the batch's per-anchor mean DVDP.
    pub fn step(&mut self, batch: &MiniBatch) -> Result<(LossBreakdown, f64)> {
        let out = self.model.forward_clips(&batch.clips, Mode::Train)?;
        let attr_probs = match self.cfg.aitl_attributes {
            AitlAttributes::Both => out.attr_probs()?,
            AitlAttributes::IdRelevant => out.rel.probs.clone(),
        };
        let features = BatchFeatures::new(
            FeatureMatrix::new(out.reid_feature.clone())?,
            FeatureMatrix::new(attr_probs)?,
            batch.p,
            batch.k,
        )?;
        let labels: Vec<usize> = batch.clips.iter().map(|c| self.labels[&c.person_id]).collect();
        let width = self.model.config().rel_attr_width + self.model.config().irrel_attr_width;
        debug_assert!(self.rel_width <= width);
        let flat: Vec<f32> = batch
            .clips
            .iter()
            .flat_map(|c| self.targets[&c.tracklet_id].iter().copied())
            .collect();
        let targets = Tensor::from_vec(flat, (batch.clips.len(), width), self.model.device())?
            .to_dtype(self.model.dtype())?;
        let attr_logits = out.attr_logits()?;
        let classifier = self.model.classifier();
        let inputs = LossInputs {
            batch: &features,
            final_features: &out.fused,
            labels: &labels,
            classifier_weight: classifier.weight(),
            classifier_bias: classifier.bias(),
            attr_logits: &attr_logits,
            attr_targets: &targets,
        };
        let loss = unified_loss(&inputs, &self.cfg.loss)?;
        if !loss.breakdown.total.is_finite() {
            return Err(Error::NonFinite { row: 0, col: 0 });
        }
        let d = dvdp(&features)?.mean;
        self.optimizer.backward_step(&loss.total)?;
        Ok((loss.breakdown, d))
    }

    pub fn validate_now(&self) -> Result<RankingResult> {
        evaluate_split(&self.model, &self.splits.query, &self.splits.gallery, self.cfg.t)
    }

    /// Runs all epochs. With `out_dir` set, streams `metrics.jsonl` there.
    pub fn run(mut self, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        let file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
            }
            None => None,
        };
        let mut sink = MetricsSink {
            file,
            records: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut trace = DvdpTrace::new();
        let mut final_ranking = None;
        let mut final_dvdp = 0.0;
        let train = &self.splits.train;
        for epoch in 1..=self.cfg.epochs {
            let mut acc = DvdpAccumulator::default();
            let mut iter = epoch_iterator(train, self.cfg.p, self.cfg.k, self.cfg.t, rng)?;
            let mut b = 0;
            for batch in iter.by_ref() {
                let batch = batch?;
                let (loss, d) = self.step(&batch)?;
                acc.add(d);
                b += 1;
                sink.push(MetricsRecord::Batch {
                    epoch,
                    batch: b,
                    loss,
                    dvdp: d,
                })?;
            }
            rng = iter.into_rng();
            let ranking = if epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs {
                Some(self.validate_now()?)
            } else {
                None
            };
            final_dvdp = acc.mean();
            if let Some(r) = &ranking {
                trace.push(epoch, final_dvdp, r.map)?;
                log::info!(
                    "epoch {epoch}: dvdp {:.4} mAP {:.4} R1 {:.4}",
                    final_dvdp,
                    r.map,
                    r.rank(1)
                );
                final_ranking = Some(r.clone());
            } else {
                log::info!("epoch {epoch}: dvdp {final_dvdp:.4}");
            }
            sink.push(MetricsRecord::Epoch {
                epoch,
                dvdp: final_dvdp,
                ranking,
            })?;
        }
        if let Some(f) = &mut sink.file {
            f.flush()?;
        }
        Ok(TrainOutcome {
            model: self.model,
            trace,
            records: sink.records,
            final_ranking: final_ranking.expect("last epoch is always validated"),
            final_dvdp,
        })
    }
}

/// Everything needed to replay a run.
pub fn manifest(cfg: &ExperimentConfig, model: &Model) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "experiment": serde_json::to_value(cfg)?,
        "model": serde_json::to_value(model.config())?,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

/// Trains with `cfg` and writes the checkpoint, metrics, DVDP trace, final
/// ranking and manifest under `cfg.out_dir`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = Splits::from_config(cfg)?;
    train_on(cfg, &splits, Some(&cfg.out_dir))
}

pub fn train_on(cfg: &ExperimentConfig, splits: &Splits, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let outcome = Trainer::new(cfg, splits, &Device::Cpu)?.run(out_dir)?;
    if let Some(dir) = out_dir {
        let m = manifest(cfg, &outcome.model)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        save_checkpoint(&outcome.model, &m, &dir.join("checkpoint.safetensors"))?;
        outcome.trace.write_csv(File::create(dir.join("dvdp.csv"))?)?;
        fs::write(
            dir.join("ranking.json"),
            serde_json::to_string_pretty(&outcome.final_ranking)?,
        )?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub ranking: RankingResult,
    pub final_dvdp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Mean mAP of a variant over its seeds, in [0, 1].
    pub fn mean_map(&self, v: Variant) -> f64 {
        self.mean_of(v, |r| r.ranking.map)
    }

    pub fn mean_of(&self, v: Variant, f: impl Fn(&AblationRow) -> f64) -> f64 {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.variant == v).map(f).collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["variant", "seed", "r1", "r5", "r10", "r20", "map", "dvdp"])?;
        for r in &self.rows {
            w.write_record([
                r.variant.slug().to_string(),
                r.seed.to_string(),
                r.ranking.rank(1).to_string(),
                r.ranking.rank(5).to_string(),
                r.ranking.rank(10).to_string(),
                r.ranking.rank(20).to_string(),
                r.ranking.map.to_string(),
                r.final_dvdp.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Seed-averaged percentages in a Markdown table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Method | R1 | R5 | R10 | mAP |\n|---|---|---|---|---|\n");
        for v in Variant::ALL {
            if !self.rows.iter().any(|r| r.variant == v) {
                continue;
            }
            let pct = |k: usize| 100.0 * self.mean_of(v, |r| r.ranking.rank(k));
            s.push_str(&format!(
                "| {} | {:.1} | {:.1} | {:.1} | {:.1} |\n",
                v.label(),
                pct(1),
                pct(5),
                pct(10),
                100.0 * self.mean_map(v)
            ));
        }
        s
    }
}

/// Trains every ablation variant for every seed. Each run goes to
/// `<out_dir>/<variant>/seed<seed>`; the table is written as `ablation.csv`
/// and `ablation.md`.
pub fn ablate(cfg: &ExperimentConfig, seeds: &[u64], variants: &[Variant]) -> Result<AblationTable> {
    for v in variants {
        v.apply(cfg).validate()?;
    }
    let splits = Splits::from_config(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut table = AblationTable::default();
    for &seed in seeds {
        for &v in variants {
            let mut run = v.apply(cfg);
            run.seed = seed;
            run.out_dir = cfg.out_dir.join(v.slug()).join(format!("seed{seed}"));
            log::info!("ablation: {} seed {seed}", v.label());
            let outcome = train_on(&run, &splits, Some(&run.out_dir))?;
            table.rows.push(AblationRow {
                variant: v,
                seed,
                ranking: outcome.final_ranking,
                final_dvdp: outcome.final_dvdp,
            });
        }
    }
    table.write_csv(&cfg.out_dir.join("ablation.csv"))?;
    fs::write(cfg.out_dir.join("ablation.md"), table.to_markdown())?;
    Ok(table)
}

pub struct DvdpCurves {
    pub with_aitl: TrainOutcome,
    pub without_aitl: TrainOutcome,
}

/// Trains `cfg` with AITL on and off (everything else equal) and writes both
/// traces to `<out_dir>/dvdp.csv` as `run,epoch,dvdp,map`.
pub fn dvdp_curve(cfg: &ExperimentConfig) -> Result<DvdpCurves> {
    let mut with = cfg.clone();
    with.loss.toggles.aitl = true;
    with.loss.toggles.itl = false;
    with.loss.toggles.bce = true;
    let mut without = with.clone();
    without.loss.toggles.aitl = false;
    with.validate()?;
    without.validate()?;
    let splits = Splits::from_config(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut runs = BTreeMap::new();
    for (name, run) in [("aitl", &with), ("no_aitl", &without)] {
        let dir = cfg.out_dir.join(name);
        runs.insert(name, train_on(run, &splits, Some(&dir))?);
    }
    let mut w = csv::Writer::from_path(cfg.out_dir.join("dvdp.csv"))?;
    w.write_record(["run", "epoch", "dvdp", "map"])?;
    for (name, outcome) in &runs {
        for p in outcome.trace.points() {
            w.write_record([name.to_string(), p.epoch.to_string(), p.dvdp.to_string(), p.map.to_string()])?;
        }
    }
    w.flush()?;
    Ok(DvdpCurves {
        with_aitl: runs.remove("aitl").expect("run present"),
        without_aitl: runs.remove("no_aitl").expect("run present"),
    })
}
