//! Experiment grids: methods × limits `b` × seeds, plus reference rows.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::batch::{Domain, Predictions};
use super::train::{execute_plan, predict, train_model, StageLog, Trained};
use super::{Mode, PretrainTarget, StageConfig, Step, TrainPlan};
use crate::correspondence::{aligned_partner, pair_by_label, pair_sequences};
use crate::data::glyphs::synth_digits;
use crate::data::{
    generate_toy_lane_changes, label_and_weight, limit_indices, make_rotated_domain, split_indices, GeneratorConfig,
    LabelConfig, LabeledSequence, ToyDomain,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_score, evaluate_classification, evaluate_lane_change, frame_accuracy, MetricsReport};
use crate::models::{build_converter, build_model, Converter, ConverterSpec, Model, ModelSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    RotatedImages,
    ToySequences,
    LaneChange,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::RotatedImages => "rotated-images",
            Task::ToySequences => "toy-sequences",
            Task::LaneChange => "lane-change",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rotated-images" => Some(Task::RotatedImages),
            "toy-sequences" => Some(Task::ToySequences),
            "lane-change" => Some(Task::LaneChange),
            _ => None,
        }
    }

    pub fn is_sequence(self) -> bool {
        self != Task::RotatedImages
    }
}

/// A transfer method of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Finetune,
    Coral,
    Imp,
    /// The converter framework; unset fields fall back to the experiment's `mode` and `pretrain_target`.
    Ours { target: Option<PretrainTarget>, mode: Option<Mode> },
}

impl Method {
    /// Accepts `finetune`, `coral`, `imp`, `ours`, `ours-T1`, `ours-T2` and
    /// `mode0-T1` … `mode2-T2`.
    pub fn parse(s: &str) -> Option<Self> {
        let target = |t: &str| PretrainTarget::parse(t);
        Some(match s {
            "finetune" | "finetune-only" | "fine-tune" => Method::Finetune,
            "coral" => Method::Coral,
            "imp" => Method::Imp,
            "ours" => Method::Ours { target: None, mode: None },
            _ => {
                let (head, t) = s.split_once('-')?;
                let target = Some(target(t)?);
                let mode = match head {
                    "ours" => None,
                    "mode0" => Some(Mode::Mode0),
                    "mode1" => Some(Mode::Mode1),
                    "mode2" => Some(Mode::Mode2),
                    _ => return None,
                };
                Method::Ours { target, mode }
            }
        })
    }

    pub fn name(&self) -> String {
        match *self {
            Method::Finetune => "finetune".into(),
            Method::Coral => "coral".into(),
            Method::Imp => "imp".into(),
            Method::Ours { target, mode } => {
                let head = match mode {
                    None => "ours".to_string(),
                    Some(m) => format!("mode{}", m.name()),
                };
                match target {
                    None => head,
                    Some(t) => format!("{head}-{}", t.name()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataConfig {
    pub side: usize,
    pub count_a: usize,
    pub count_b: usize,
}

impl Default for ImageDataConfig {
    fn default() -> Self {
        ImageDataConfig { side: 16, count_a: 4000, count_b: 3000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataConfig {
    pub count_a: usize,
    pub count_b: usize,
    pub generator: GeneratorConfig,
    pub labels: LabelConfig,
}

impl Default for SequenceDataConfig {
    fn default() -> Self {
        SequenceDataConfig {
            count_a: 1000,
            count_b: 2600,
            generator: GeneratorConfig::default(),
            labels: LabelConfig::default(),
        }
    }
}

/// Everything that defines one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub methods: Vec<Method>,
    pub b_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_corr: usize,
    /// Fine-tuning mode of `ours` methods without an explicit mode.
    pub mode: Mode,
    pub pretrain_target: PretrainTarget,
    pub lambda_corr: f64,
    pub squared_loss: bool,
    pub ridge: f64,
    /// Share of each domain held out for testing.
    pub test_fraction: f64,
    pub base: StageConfig,
    pub pretrain: StageConfig,
    pub correspondence: StageConfig,
    pub finetune: StageConfig,
    /// Converter learning rate while fine-tuning in modes that train it.
    pub converter_learning_rate: f64,
    pub images: ImageDataConfig,
    pub sequences: SequenceDataConfig,
    pub model: Option<ModelSpec>,
    pub converter: Option<ConverterSpec>,
    pub direct_converter: Option<ConverterSpec>,
    /// Converted-sample records kept per grid point.
    pub samples_per_point: usize,
}

impl ExperimentConfig {
    /// Defaults for `task`, sized to run on a desktop.
    pub fn new(task: Task) -> Self {
        let plan = TrainPlan::default();
        let seq = task.is_sequence();
        let clip = if seq { Some(5.0) } else { None };
        let stage = |lr: f64, epochs: usize| StageConfig { epochs, clip_norm: clip, ..StageConfig::with_lr(lr) };
        let mut sequences = SequenceDataConfig::default();
        if task == Task::LaneChange {
            sequences.generator.features = 2;
        }
        ExperimentConfig {
            task,
            methods: vec![Method::Finetune, Method::Ours { target: None, mode: None }],
            b_values: if seq { vec![100, 500, 2000] } else { vec![100, 1000, 2000] },
            seeds: vec![0],
            n_corr: plan.n_corr,
            mode: plan.mode,
            pretrain_target: plan.pretrain_target,
            lambda_corr: plan.lambda_corr,
            squared_loss: plan.squared_loss,
            ridge: plan.ridge,
            test_fraction: 0.2,
            // the tagger sits on a long plateau before lane changes separate
            base: if seq {
                StageConfig { batch_size: 8, patience: 20, ..stage(1e-2, 60) }
            } else {
                stage(3e-3, 20)
            },
            pretrain: stage(plan.pretrain.learning_rate, 20),
            correspondence: stage(plan.correspondence.learning_rate, 20),
            finetune: stage(plan.finetune.learning_rate, 20),
            converter_learning_rate: plan.converter_learning_rate,
            images: ImageDataConfig::default(),
            sequences,
            model: None,
            converter: None,
            direct_converter: None,
            samples_per_point: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.b_values.is_empty() || self.b_values.contains(&0) || self.b_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("b_values must be positive and ascending".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("test_fraction must lie in (0, 1)".into()));
        }
        let model = self.model_spec();
        if model.is_sequence() != self.task.is_sequence() {
            return Err(Error::InvalidConfig(format!("model `{model}` does not fit task {}", self.task.name())));
        }
        for c in [self.converter_spec(), self.direct_converter_spec()] {
            if c.is_sequence() != self.task.is_sequence() {
                return Err(Error::InvalidConfig(format!("converter `{c}` does not fit task {}", self.task.name())));
            }
        }
        if !self.converter_spec().is_matrix_mode() || self.direct_converter_spec().is_matrix_mode() {
            return Err(Error::InvalidConfig("converter must emit matrices, direct_converter samples".into()));
        }
        for m in &self.methods {
            method_plan(self, *m, 0).validate()?;
        }
        Ok(())
    }

    fn features(&self) -> usize {
        self.sequences.generator.features
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.model.clone().unwrap_or_else(|| match self.task {
            Task::RotatedImages => ModelSpec::digit_classifier(self.images.side),
            Task::ToySequences => ModelSpec::toy_tagger(),
            Task::LaneChange => ModelSpec::lane_change_tagger(),
        })
    }

    pub fn converter_spec(&self) -> ConverterSpec {
        self.converter.clone().unwrap_or_else(|| match self.task {
            Task::RotatedImages => ConverterSpec::image(self.images.side),
            _ => ConverterSpec::sequence(self.features()),
        })
    }

    pub fn direct_converter_spec(&self) -> ConverterSpec {
        self.direct_converter.clone().unwrap_or_else(|| match self.task {
            Task::RotatedImages => ConverterSpec::DirectImage {
                height: self.images.side,
                width: self.images.side,
                channels: 8,
                kernel: 3,
            },
            _ => {
                let features = self.features();
                ConverterSpec::DirectSequence { features, hidden: crate::models::default_converter_hidden(features) }
            }
        })
    }

    /// Prediction horizon used by the lane-change metrics.
    pub fn horizon_s(&self) -> f64 {
        self.sequences.labels.horizon_s
    }
}

/// Training plan of `method` under `cfg`.
pub fn method_plan(cfg: &ExperimentConfig, method: Method, seed: u64) -> TrainPlan {
    let (mode, steps, target) = match method {
        Method::Finetune => (Mode::FinetuneOnly, vec![Step::Finetune], cfg.pretrain_target),
        Method::Coral => (Mode::Coral, vec![Step::Finetune], cfg.pretrain_target),
        Method::Imp => (Mode::Imp, vec![Step::Correspondence, Step::Finetune], cfg.pretrain_target),
        Method::Ours { target, mode } => {
            let mode = mode.unwrap_or(cfg.mode);
            let steps = match mode {
                Mode::Mode1 => vec![Step::Pretrain, Step::Correspondence, Step::Finetune],
                _ => vec![Step::Pretrain, Step::Finetune],
            };
            (mode, steps, target.unwrap_or(cfg.pretrain_target))
        }
    };
    TrainPlan {
        steps,
        mode,
        pretrain_target: target,
        lambda_corr: cfg.lambda_corr,
        n_corr: cfg.n_corr,
        squared_loss: cfg.squared_loss,
        pretrain: cfg.pretrain.clone(),
        correspondence: cfg.correspondence.clone(),
        finetune: cfg.finetune.clone(),
        converter_learning_rate: cfg.converter_learning_rate,
        ridge: cfg.ridge,
        seed,
    }
}

/// Source domain A and target domain B, each complete before splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub a: Domain,
    pub b: Domain,
}

fn toy_domain(cfg: &ExperimentConfig, domain: ToyDomain, count: usize, seed: u64) -> Result<Vec<LabeledSequence>> {
    let raw = generate_toy_lane_changes(&cfg.sequences.generator, domain, count, seed)?;
    label_and_weight(&raw, &cfg.sequences.labels)
}

/// Synthesizes both domains of `cfg.task`. Images: glyphs and their 180°
/// rotations drawn independently. Sequences: clean (A) and noisy (B)
/// trajectories from independent draws. Lane-change data without a corpus
/// uses the two-feature simulator.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentData> {
    let seed_a = rng::derive(seed, 0xA);
    let seed_b = rng::derive(seed, 0xB);
    Ok(match cfg.task {
        Task::RotatedImages => {
            let im = &cfg.images;
            let a = synth_digits(im.count_a, im.side, seed_a, "A")?;
            let b = make_rotated_domain(&synth_digits(im.count_b, im.side, seed_b, "B")?);
            ExperimentData { a: Domain::Images(a), b: Domain::Images(b) }
        }
        Task::ToySequences | Task::LaneChange => {
            let s = &cfg.sequences;
            ExperimentData {
                a: Domain::Sequences(toy_domain(cfg, ToyDomain::Clean, s.count_a, seed_a)?),
                b: Domain::Sequences(toy_domain(cfg, ToyDomain::Noisy, s.count_b, seed_b)?),
            }
        }
    })
}

/// Per-seed state shared by all grid points.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub seed: u64,
    pub base: Model,
    pub base_log: Option<StageLog>,
    pub source: Domain,
    pub source_test: Domain,
    /// Training side of B, before limiting to `b`.
    pub target_train: Domain,
    pub target_test: Domain,
    /// "A on B" metrics, the Score baseline.
    pub baseline: Option<MetricsReport>,
}

impl ExperimentContext {
    /// Splits both domains and trains the base model on A unless one is given.
    pub fn new(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64, base: Option<Model>) -> Result<Self> {
        if data.a.is_sequence() != cfg.task.is_sequence() || data.b.is_sequence() != cfg.task.is_sequence() {
            return Err(Error::InvalidConfig(format!("data does not fit task {}", cfg.task.name())));
        }
        let (a_train, a_test) = split_indices(data.a.len(), cfg.test_fraction, rng::derive(seed, 0xA));
        let (b_train, b_test) = split_indices(data.b.len(), cfg.test_fraction, rng::derive(seed, 0xB));
        if a_test.is_empty() || b_test.is_empty() || a_train.is_empty() || b_train.is_empty() {
            return Err(Error::EmptyInput("domain split"));
        }
        let source = data.a.subset(&a_train);
        let (base, base_log) = match base {
            Some(m) => {
                if m.spec != cfg.model_spec() {
                    return Err(Error::InvalidConfig(format!("base model `{}` differs from `{}`", m.spec, cfg.model_spec())));
                }
                (m, None)
            }
            None => {
                let mut m = build_model(&cfg.model_spec(), seed)?;
                let log = train_model(&mut m, &source, &cfg.base, seed)?;
                (m, Some(log))
            }
        };
        let mut ctx = ExperimentContext {
            seed,
            base,
            base_log,
            source,
            source_test: data.a.subset(&a_test),
            target_train: data.b.subset(&b_train),
            target_test: data.b.subset(&b_test),
            baseline: None,
        };
        if cfg.task.is_sequence() {
            let p = predict(&ctx.base, &ctx.target_test)?;
            ctx.baseline = Some(sequence_report(cfg, &p, &ctx.target_test)?);
        }
        Ok(ctx)
    }
}

/// Input, converted and partner values of one test sample, row-major with
/// `width` values per row (one row per frame, or one row per image line).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedSample {
    pub index: usize,
    pub label: String,
    pub width: usize,
    pub input: Vec<f64>,
    pub converted: Vec<f64>,
    /// Aligned source partner; NaN where it has no frame.
    pub partner: Vec<f64>,
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub b: usize,
    pub method: String,
    pub seed: u64,
    pub frequency: Option<f64>,
    pub delay: Option<f64>,
    pub miss: Option<f64>,
    /// Improvement over "A on B"; sequences only.
    pub score: Option<f64>,
    pub accuracy: Option<f64>,
    pub report: Option<MetricsReport>,
    pub logs: Vec<StageLog>,
    pub samples: Vec<ConvertedSample>,
}

impl ResultRow {
    fn new(b: usize, method: &str, seed: u64) -> Self {
        ResultRow {
            b,
            method: method.into(),
            seed,
            frequency: None,
            delay: None,
            miss: None,
            score: None,
            accuracy: None,
            report: None,
            logs: Vec::new(),
            samples: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ResultRow>,
    /// Grid points that failed, with the reason.
    pub failures: Vec<(String, Error)>,
}

fn sequence_report(cfg: &ExperimentConfig, p: &Predictions, test: &Domain) -> Result<MetricsReport> {
    match (p, test) {
        (Predictions::Maneuvers(p), Domain::Sequences(s)) => {
            let mut r = evaluate_lane_change(p, s, cfg.horizon_s())?;
            r.accuracy = Some(frame_accuracy(p, s));
            Ok(r)
        }
        _ => Err(Error::ModeMismatch("sequence metrics need sequence predictions".into())),
    }
}

fn score_row(cfg: &ExperimentConfig, row: &mut ResultRow, p: &Predictions, test: &Domain, baseline: Option<&MetricsReport>) -> Result<()> {
    match (p, test) {
        (Predictions::Classes(c), Domain::Images(d)) => row.accuracy = Some(evaluate_classification(c, &d.labels)?),
        _ => {
            let r = sequence_report(cfg, p, test)?;
            row.frequency = Some(r.frequency);
            row.delay = Some(r.delay_s);
            row.miss = Some(r.miss);
            row.accuracy = r.accuracy;
            row.score = baseline.and_then(|base| aggregate_score(&r, base).ok());
            row.report = Some(r);
        }
    }
    Ok(())
}

/// "A on A", "A on B" and "B on B" rows. The last trains a fresh model on the
/// whole training side of B.
pub fn build_references(cfg: &ExperimentConfig, ctx: &ExperimentContext) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    let a_on_a = predict(&ctx.base, &ctx.source_test)?;
    let mut row = ResultRow::new(ctx.source.len(), "A on A", ctx.seed);
    score_row(cfg, &mut row, &a_on_a, &ctx.source_test, None)?;
    row.logs.extend(ctx.base_log.clone());
    rows.push(row);
    let a_on_b = predict(&ctx.base, &ctx.target_test)?;
    let mut row = ResultRow::new(ctx.source.len(), "A on B", ctx.seed);
    score_row(cfg, &mut row, &a_on_b, &ctx.target_test, ctx.baseline.as_ref())?;
    rows.push(row);
    let mut m = build_model(&cfg.model_spec(), rng::derive(ctx.seed, 0xBB))?;
    let log = train_model(&mut m, &ctx.target_train, &cfg.base, ctx.seed)?;
    let b_on_b = predict(&m, &ctx.target_test)?;
    let mut row = ResultRow::new(ctx.target_train.len(), "B on B", ctx.seed);
    score_row(cfg, &mut row, &b_on_b, &ctx.target_test, ctx.baseline.as_ref())?;
    row.logs.push(log);
    rows.push(row);
    Ok(rows)
}

fn initial_converter(cfg: &ExperimentConfig, method: Method, seed: u64) -> Result<Option<Converter>> {
    Ok(match method {
        Method::Finetune | Method::Coral => None,
        Method::Imp => Some(build_converter(&cfg.direct_converter_spec(), seed)?),
        Method::Ours { .. } => Some(build_converter(&cfg.converter_spec(), seed)?),
    })
}

/// Records of the first test samples as the transferred model sees them.
fn converted_samples(cfg: &ExperimentConfig, ctx: &ExperimentContext, trained: &Trained) -> Result<Vec<ConvertedSample>> {
    if trained.converter.is_none() && trained.coral.is_none() {
        return Ok(Vec::new());
    }
    let k = cfg.samples_per_point.min(ctx.target_test.len());
    let idx: Vec<usize> = (0..k).collect();
    let inputs = ctx.target_test.subset(&idx);
    let converted = trained.transform(&inputs)?;
    let mut out = Vec::with_capacity(k);
    match (&inputs, &converted, &ctx.source) {
        (Domain::Images(x), Domain::Images(y), Domain::Images(src)) => {
            let set = pair_by_label(&x.labels, &src.labels, 1, ctx.seed)?;
            for i in 0..k {
                out.push(ConvertedSample {
                    index: i,
                    label: x.labels[i].to_string(),
                    width: x.width,
                    input: x.image(i).to_vec(),
                    converted: y.image(i).to_vec(),
                    partner: src.image(set.entries[i].partners[0]).to_vec(),
                });
            }
        }
        (Domain::Sequences(x), Domain::Sequences(y), Domain::Sequences(src)) => {
            let set = pair_sequences(x, src, 1, ctx.seed)?;
            for i in 0..k {
                let e = &set.entries[i];
                let (frames, mask) = aligned_partner(&src[e.partners[0]], e.offsets[0], x[i].len(), false);
                let f = x[i].features;
                let partner = frames
                    .chunks(f)
                    .zip(&mask)
                    .flat_map(|(r, &m)| r.iter().map(move |&v| if m > 0.0 { v } else { f64::NAN }))
                    .collect();
                let label = x[i].primary_event().map_or('F', |e| e.direction.symbol());
                out.push(ConvertedSample {
                    index: i,
                    label: label.to_string(),
                    width: f,
                    input: x[i].frames.clone(),
                    converted: y[i].frames.clone(),
                    partner,
                });
            }
        }
        _ => return Err(Error::ModeMismatch("mixed domain kinds".into())),
    }
    Ok(out)
}

/// Trains and evaluates one method at one limit `b`.
pub fn run_grid_point(cfg: &ExperimentConfig, ctx: &ExperimentContext, method: Method, b: usize) -> Result<ResultRow> {
    let idx = limit_indices(ctx.target_train.len(), b, ctx.seed)?;
    let target = ctx.target_train.subset(&idx);
    let plan = method_plan(cfg, method, ctx.seed);
    let conv = initial_converter(cfg, method, ctx.seed)?;
    let trained = execute_plan(&plan, &ctx.base, conv, &target, &ctx.source)?;
    let p = trained.predict(&ctx.target_test)?;
    let mut row = ResultRow::new(b, &method.name(), ctx.seed);
    score_row(cfg, &mut row, &p, &ctx.target_test, ctx.baseline.as_ref())?;
    row.samples = converted_samples(cfg, ctx, &trained)?;
    row.logs = trained.logs;
    Ok(row)
}

/// Grid points in report order: per seed, every `b`, every method.
pub fn grid(cfg: &ExperimentConfig) -> Vec<(u64, usize, Method)> {
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        for &b in &cfg.b_values {
            for &m in &cfg.methods {
                out.push((seed, b, m));
            }
        }
    }
    out
}

/// Runs the whole grid sequentially. `data` overrides the synthesized
/// domains; `base` overrides base-model training. Failing grid points are
/// recorded and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, data: Option<&ExperimentData>, base: Option<&Model>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport { config: cfg.clone(), rows: Vec::new(), failures: Vec::new() };
    for &seed in &cfg.seeds {
        let generated;
        let data = match data {
            Some(d) => d,
            None => {
                generated = prepare_data(cfg, seed)?;
                &generated
            }
        };
        let ctx = ExperimentContext::new(cfg, data, seed, base.cloned())?;
        report.rows.extend(build_references(cfg, &ctx)?);
        for &b in &cfg.b_values {
            for &m in &cfg.methods {
                match run_grid_point(cfg, &ctx, m, b) {
                    Ok(row) => report.rows.push(row),
                    Err(e) => report.failures.push((format!("seed={seed} b={b} method={}", m.name()), e)),
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for s in ["finetune", "coral", "imp", "ours", "ours-T1", "ours-T2", "mode0-T1", "mode2-T2", "mode1-T1"] {
            let m = Method::parse(s).unwrap();
            assert_eq!(Method::parse(&m.name()), Some(m));
        }
        assert_eq!(Method::parse("mode3-T1"), None);
        assert_eq!(Method::parse("ours-T3"), None);
    }

    #[test]
    fn default_configs_validate() {
        for t in [Task::RotatedImages, Task::ToySequences, Task::LaneChange] {
            let mut cfg = ExperimentConfig::new(t);
            cfg.methods = ["finetune", "coral", "imp", "ours-T1", "ours-T2", "mode0-T2", "mode2-T1"]
                .iter()
                .map(|s| Method::parse(s).unwrap())
                .collect();
            cfg.validate().unwrap();
        }
        let mut cfg = ExperimentConfig::new(Task::ToySequences);
        cfg.b_values = vec![500, 100];
        assert!(cfg.validate().is_err());
    }
}
