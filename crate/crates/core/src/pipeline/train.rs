//! Training loops for the base model, the converter stages and fine-tuning.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::batch::{maneuver_of, Domain, Predictions};
use super::coral::CoralMap;
use super::{Mode, PretrainTarget, StageConfig, Step, TrainPlan};
use crate::autodiff::{Graph, NodeId};
use crate::correspondence::{
    aligned_partner, correspondence_loss_node, frobenius_loss, pair_by_label, pair_sequences, CorrespondenceSet,
};
use crate::error::{Error, Result};
use crate::models::{Converter, Model, HEAD_LAYERS};
use crate::nn::{argmax_rows, Bound, ParamStore};
use crate::optim::{optimizer_step, OptimizerState};
use crate::rng;
use crate::tensor::Tensor;
use crate::transforms::{make_euclidean, neutral_projection, TransformMatrix};

/// Samples per inference batch.
const INFERENCE_BATCH: usize = 256;

/// Loss curve of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLog {
    pub stage: String,
    /// Monitored loss before the first update; NaN when the stage did not run.
    pub initial_loss: f64,
    pub train_loss: Vec<f64>,
    /// Held-out loss per epoch, or the training loss when nothing is held out.
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    /// Training stopped on a non-finite loss or gradient.
    pub diverged: bool,
}

type Grads = Vec<BTreeMap<String, Tensor>>;

fn holdout(n: usize, fraction: f64, seed: u64, stage: &str) -> (Vec<usize>, Vec<usize>) {
    let perm = rng::permutation(n, &mut rng::stream(seed, &format!("{stage}-holdout")));
    let n_val = (n as f64 * fraction) as usize;
    if n_val == 0 || n_val >= n {
        return (perm, Vec::new());
    }
    (perm[n_val..].to_vec(), perm[..n_val].to_vec())
}

fn views<'a>(stores: &'a [&mut ParamStore]) -> Vec<&'a ParamStore> {
    stores.iter().map(|s| &**s).collect()
}

fn clip_joint(grads: &mut Grads, max_norm: f64) {
    let sq: f64 = grads.iter().flat_map(|m| m.values()).flat_map(|t| t.data()).map(|v| v * v).sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.iter_mut().flat_map(|m| m.values_mut()) {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Mini-batch Adam over `n` samples with a held-out split, early stopping
/// and restoration of the best parameters. `step(stores, batch, need_grad)`
/// returns the mean batch loss and, when asked, one gradient map per store.
/// `lrs` overrides the stage's learning rate per store.
fn fit<F>(
    stores: &mut [&mut ParamStore],
    lrs: Option<&[f64]>,
    n: usize,
    cfg: &StageConfig,
    seed: u64,
    stage: &str,
    mut step: F,
) -> Result<StageLog>
where
    F: FnMut(&[&ParamStore], &[usize], bool) -> Result<(f64, Grads)>,
{
    let mut log = StageLog {
        stage: stage.to_string(),
        initial_loss: f64::NAN,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        diverged: false,
    };
    if cfg.epochs == 0 || n == 0 {
        return Ok(log);
    }
    cfg.validate(stage)?;
    let (train, val) = holdout(n, cfg.validation_fraction, seed, stage);
    let monitor = if val.is_empty() { &train } else { &val };
    let evaluate = |step: &mut F, stores: &[&mut ParamStore], idx: &[usize]| -> Result<f64> {
        let v = views(stores);
        let mut total = 0.0;
        for chunk in idx.chunks(cfg.batch_size * 4) {
            total += step(&v, chunk, false)?.0 * chunk.len() as f64;
        }
        Ok(total / idx.len() as f64)
    };
    let mut best = evaluate(&mut step, stores, monitor)?;
    log.initial_loss = best;
    let mut best_params: Vec<ParamStore> = stores.iter().map(|s| (**s).clone()).collect();
    let mut opts: Vec<OptimizerState> = (0..stores.len())
        .map(|i| OptimizerState::adam(lrs.map_or(cfg.learning_rate, |l| l[i])))
        .collect();
    let mut order = rng::stream(seed, stage);
    let mut stale = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        let perm = rng::permutation(train.len(), &mut order);
        let mut sum = 0.0;
        for chunk in perm.chunks(cfg.batch_size) {
            let batch: Vec<usize> = chunk.iter().map(|&k| train[k]).collect();
            let (loss, mut grads) = match step(&views(stores), &batch, true) {
                Err(Error::NonFinite { .. }) => {
                    log.diverged = true;
                    break 'epochs;
                }
                r => r?,
            };
            if !loss.is_finite() {
                log.diverged = true;
                break 'epochs;
            }
            for (s, g) in stores.iter().zip(grads.iter_mut()) {
                for p in s.trainable() {
                    g.entry(p.name.clone()).or_insert_with(|| Tensor::zeros(p.value.shape()));
                }
            }
            if let Some(c) = cfg.clip_norm {
                clip_joint(&mut grads, c);
            }
            for ((s, g), o) in stores.iter_mut().zip(&grads).zip(opts.iter_mut()) {
                match optimizer_step(s, g, o) {
                    Err(Error::NonFinite { .. }) => {
                        log.diverged = true;
                        break 'epochs;
                    }
                    r => r?,
                }
            }
            sum += loss * batch.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        log.train_loss.push(train_loss);
        let v = if val.is_empty() { train_loss } else { evaluate(&mut step, stores, &val)? };
        log.val_loss.push(v);
        if !v.is_finite() {
            log.diverged = true;
            break;
        }
        if v < best {
            best = v;
            log.best_epoch = epoch;
            best_params = stores.iter().map(|s| (**s).clone()).collect();
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    for (s, b) in stores.iter_mut().zip(best_params) {
        **s = b;
    }
    Ok(log)
}

/// Loss value and, when requested, the gradients of each bound store.
fn finish(g: &Graph, loss: NodeId, bound: &[&Bound], need_grad: bool) -> Result<(f64, Grads)> {
    let value = g.value(loss).item();
    if !need_grad {
        return Ok((value, Vec::new()));
    }
    let grads = g.backward(loss)?;
    Ok((value, bound.iter().map(|b| b.gradients(&grads)).collect()))
}

/// Trains every parameter of `model` on `data` with the task loss.
pub fn train_model(model: &mut Model, data: &Domain, cfg: &StageConfig, seed: u64) -> Result<StageLog> {
    model.params.freeze_all(false);
    let spec = model.spec.clone();
    let classes = spec.classes();
    fit(&mut [&mut model.params], None, data.len(), cfg, seed, "base", |s, batch, need| {
        let x = data.inputs(batch)?;
        let (t, w) = data.targets(batch, classes)?;
        let mut g = Graph::new();
        let b = s[0].bind(&mut g, "m");
        let xi = g.constant(x);
        let logits = spec.forward(&mut g, &b, xi)?;
        let loss = g.cross_entropy(logits, &t, &w)?;
        finish(&g, loss, &[&b], need)
    })
}

/// Per-row pre-training targets `[m, d+1, d+1]` and mask `[m]` for a batch.
/// Images target the identity or a 180° rotation. Sequence frames target the
/// identity, or under domain knowledge the projection of follow frames onto
/// the lane center (`m → 0.5`, other features `→ 0`) and the identity for
/// lane-change frames. Padded frames are masked out.
pub fn pretrain_targets(data: &Domain, batch: &[usize], target: PretrainTarget, dim: usize) -> Result<(Tensor, Tensor)> {
    let mask = data.row_mask(batch);
    let rows = mask.len();
    let n = dim + 1;
    let mut out = Vec::with_capacity(rows * n * n);
    match data {
        Domain::Images(_) => {
            if dim != 2 {
                return Err(Error::DimensionMismatch { expected: 2, found: dim });
            }
            let t = match target {
                PretrainTarget::Identity => TransformMatrix::identity(2),
                PretrainTarget::DomainKnowledge => make_euclidean(core::f64::consts::PI, 0.0, 0.0),
            };
            (0..rows).for_each(|_| out.extend_from_slice(t.entries()));
        }
        Domain::Sequences(s) => {
            let f = s[batch[0]].features;
            if f != dim {
                return Err(Error::DimensionMismatch { expected: f, found: dim });
            }
            let identity = TransformMatrix::identity(dim);
            let mut neutral = vec![0.0; dim];
            neutral[0] = 0.5;
            let center = neutral_projection(&neutral);
            let steps = data.steps(batch);
            for &i in batch {
                for j in 0..steps {
                    let follow = j < s[i].len() && !s[i].labels[j].is_lane_change();
                    let t = if target == PretrainTarget::DomainKnowledge && follow { &center } else { &identity };
                    out.extend_from_slice(t.entries());
                }
            }
        }
    }
    Ok((Tensor::new(&[rows, n, n], out)?, mask))
}

/// Step 1: fits the converter's matrices to the pre-training targets.
pub fn pretrain_converter(
    converter: &mut Converter,
    data: &Domain,
    target: PretrainTarget,
    cfg: &StageConfig,
    squared: bool,
    seed: u64,
) -> Result<StageLog> {
    if !converter.is_matrix_mode() {
        return Err(Error::ModeMismatch("only matrix converters can be pre-trained".into()));
    }
    converter.params.freeze_all(false);
    let spec = converter.spec.clone();
    let dim = spec.dim();
    fit(&mut [&mut converter.params], None, data.len(), cfg, seed, "pretrain", |s, batch, need| {
        let x = data.inputs(batch)?;
        let (targets, mask) = pretrain_targets(data, batch, target, dim)?;
        let mut g = Graph::new();
        let b = s[0].bind(&mut g, "c");
        let xi = g.constant(x);
        let out = spec.forward(&mut g, &b, xi)?;
        let loss = frobenius_loss(&mut g, out.matrices.expect("matrix mode"), &targets, &mask, squared)?;
        finish(&g, loss, &[&b], need)
    })
}

/// Correspondences between every target sample and the source domain:
/// same-label images, or aligned sequences of the same maneuver.
pub fn build_correspondences(target: &Domain, source: &Domain, n: usize, seed: u64) -> Result<CorrespondenceSet> {
    match (target, source) {
        (Domain::Images(t), Domain::Images(s)) => pair_by_label(&t.labels, &s.labels, n, seed),
        (Domain::Sequences(t), Domain::Sequences(s)) => pair_sequences(t, s, n, seed),
        _ => Err(Error::ModeMismatch("target and source domains differ in kind".into())),
    }
}

fn check_set(set: &CorrespondenceSet, target: &Domain) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyInput("correspondence set"));
    }
    if set.len() != target.len() || set.entries.iter().enumerate().any(|(i, e)| e.target != i) {
        return Err(Error::InvalidConfig("correspondence set does not cover the target samples in order".into()));
    }
    Ok(())
}

/// Partner rows and masks matching the converter's comparable rows for `batch`.
fn partner_rows(
    target: &Domain,
    source: &Domain,
    set: &CorrespondenceSet,
    batch: &[usize],
    homogeneous: bool,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let mut partners = Vec::with_capacity(set.n);
    let mut masks = Vec::with_capacity(set.n);
    match (target, source) {
        (Domain::Images(_), Domain::Images(src)) => {
            let w = src.pixel_count();
            for i in 0..set.n {
                let mut rows = Vec::with_capacity(batch.len() * w);
                for &t in batch {
                    rows.extend_from_slice(src.image(set.entries[t].partners[i]));
                }
                partners.push(Tensor::new(&[batch.len(), w], rows)?);
                masks.push(Tensor::filled(&[batch.len()], 1.0));
            }
        }
        (Domain::Sequences(tgt), Domain::Sequences(src)) => {
            let steps = target.steps(batch);
            let k = tgt[batch[0]].features + usize::from(homogeneous);
            for i in 0..set.n {
                let mut rows = Vec::with_capacity(batch.len() * steps * k);
                let mut mask = Vec::with_capacity(batch.len() * steps);
                for &t in batch {
                    let e = &set.entries[t];
                    let (fr, mut m) = aligned_partner(&src[e.partners[i]], e.offsets[i], steps, homogeneous);
                    m[tgt[t].len()..].iter_mut().for_each(|v| *v = 0.0);
                    rows.extend(fr);
                    mask.extend(m);
                }
                partners.push(Tensor::new(&[batch.len() * steps, k], rows)?);
                masks.push(Tensor::vector(&mask));
            }
        }
        _ => return Err(Error::ModeMismatch("target and source domains differ in kind".into())),
    }
    Ok((partners, masks))
}

/// Step 2: trains the converter to map target samples onto their partners.
pub fn train_correspondence(
    converter: &mut Converter,
    target: &Domain,
    source: &Domain,
    set: &CorrespondenceSet,
    cfg: &StageConfig,
    squared: bool,
    seed: u64,
) -> Result<StageLog> {
    check_set(set, target)?;
    converter.params.freeze_all(false);
    let spec = converter.spec.clone();
    fit(&mut [&mut converter.params], None, target.len(), cfg, seed, "correspondence", |s, batch, need| {
        let x = target.inputs(batch)?;
        let mut g = Graph::new();
        let b = s[0].bind(&mut g, "c");
        let xi = g.constant(x);
        let out = spec.forward(&mut g, &b, xi)?;
        let (partners, masks) = partner_rows(target, source, set, batch, out.homogeneous)?;
        let loss = correspondence_loss_node(&mut g, out.comparable, &partners, &masks, batch.len(), squared)?;
        finish(&g, loss, &[&b], need)
    })
}

/// Converted version of every sample of `data`.
pub fn convert_domain(converter: &Converter, data: &Domain) -> Result<Domain> {
    let rows = data.map_rows(INFERENCE_BATCH, |x| converter.convert(x))?;
    data.with_inputs(&rows.concat())
}

/// Step 3. Head-only modes train the head on cached body features of the
/// (converted) inputs; the other modes back-propagate through the converter.
pub fn fine_tune(
    model: &mut Model,
    converter: Option<&mut Converter>,
    target: &Domain,
    source: Option<(&Domain, &CorrespondenceSet)>,
    plan: &TrainPlan,
) -> Result<StageLog> {
    let mode = plan.mode;
    let head: Vec<String> = HEAD_LAYERS.iter().map(|s| s.to_string()).collect();
    model.params.train_only(&head);
    let spec = model.spec.clone();
    let classes = spec.classes();
    let cfg = &plan.finetune;
    if !mode.trains_converter() {
        let inputs = match (&converter, mode) {
            (Some(c), Mode::Mode0) => convert_domain(c, target)?,
            (None, Mode::FinetuneOnly | Mode::Coral) => target.clone(),
            _ => return Err(Error::ModeMismatch(format!("mode {} with{} converter", mode.name(), if converter.is_some() { "" } else { "out" }))),
        };
        let features = inputs.map_rows(INFERENCE_BATCH, |x| model.features(x))?;
        let width = features[0].len() / inputs.steps(&[0]).max(1);
        let targets: Vec<(Vec<usize>, Vec<f64>)> =
            (0..inputs.len()).map(|i| inputs.targets(&[i], classes)).collect::<Result<_>>()?;
        return fit(&mut [&mut model.params], None, inputs.len(), cfg, plan.seed, "finetune", |s, batch, need| {
            let mut rows = Vec::new();
            let mut t = Vec::new();
            let mut w = Vec::new();
            for &i in batch {
                rows.extend_from_slice(&features[i]);
                t.extend_from_slice(&targets[i].0);
                w.extend_from_slice(&targets[i].1);
            }
            let mut g = Graph::new();
            let b = s[0].bind(&mut g, "m");
            let x = g.constant(Tensor::new(&[t.len(), width], rows)?);
            let logits = spec.head(&mut g, &b, x)?;
            let loss = g.cross_entropy(logits, &t, &w)?;
            finish(&g, loss, &[&b], need)
        });
    }
    let converter = converter.ok_or_else(|| Error::ModeMismatch(format!("mode {} needs a converter", mode.name())))?;
    converter.params.freeze_all(false);
    let cspec = converter.spec.clone();
    let lambda = if mode.uses_correspondence_loss() { plan.lambda_corr } else { 0.0 };
    let corr = match source {
        Some((src, set)) if lambda > 0.0 => {
            check_set(set, target)?;
            Some((src, set))
        }
        None if lambda > 0.0 => return Err(Error::ModeMismatch("correspondence loss without correspondences".into())),
        _ => None,
    };
    let squared = plan.squared_loss;
    let lrs = [cfg.learning_rate, plan.converter_learning_rate];
    let stores = &mut [&mut model.params, &mut converter.params];
    fit(stores, Some(&lrs), target.len(), cfg, plan.seed, "finetune", |s, batch, need| {
        let x = target.inputs(batch)?;
        let (t, w) = target.targets(batch, classes)?;
        let mut g = Graph::new();
        let bm = s[0].bind(&mut g, "m");
        let bc = s[1].bind(&mut g, "c");
        let xi = g.constant(x);
        let out = cspec.forward(&mut g, &bc, xi)?;
        let logits = spec.forward(&mut g, &bm, out.converted)?;
        let mut loss = g.cross_entropy(logits, &t, &w)?;
        if let Some((src, set)) = corr {
            let (partners, masks) = partner_rows(target, src, set, batch, out.homogeneous)?;
            let c = correspondence_loss_node(&mut g, out.comparable, &partners, &masks, batch.len(), squared)?;
            let c = g.scale(c, lambda)?;
            loss = g.add(loss, c)?;
        }
        finish(&g, loss, &[&bm, &bc], need)
    })
}

/// A transferred model: optional input transformation plus the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: Model,
    pub converter: Option<Converter>,
    pub coral: Option<CoralMap>,
    pub logs: Vec<StageLog>,
}

/// Per-sample predictions of `model` on `data`.
pub fn predict(model: &Model, data: &Domain) -> Result<Predictions> {
    let classes = model.spec.classes();
    let logits = data.map_rows(INFERENCE_BATCH, |x| model.logits(x))?;
    Ok(match data {
        Domain::Images(_) => {
            let t = Tensor::new(&[logits.len(), classes], logits.concat())?;
            Predictions::Classes(argmax_rows(&t))
        }
        Domain::Sequences(_) => Predictions::Maneuvers(
            logits
                .iter()
                .map(|l| {
                    let t = Tensor::new(&[l.len() / classes, classes], l.clone()).expect("rows");
                    argmax_rows(&t).into_iter().map(|c| maneuver_of(c, classes)).collect()
                })
                .collect(),
        ),
    })
}

impl Trained {
    /// The model alone, without any input transformation.
    pub fn plain(model: Model) -> Self {
        Trained { model, converter: None, coral: None, logs: Vec::new() }
    }

    /// Inputs as the model sees them.
    pub fn transform(&self, data: &Domain) -> Result<Domain> {
        if let Some(map) = &self.coral {
            return data.with_inputs(&map.apply(&data.observations()));
        }
        match &self.converter {
            Some(c) => convert_domain(c, data),
            None => Ok(data.clone()),
        }
    }

    pub fn predict(&self, data: &Domain) -> Result<Predictions> {
        predict(&self.model, &self.transform(data)?)
    }
}

/// Runs the steps of `plan` starting from the base model. `converter` is the
/// initial converter of converter modes; `source` supplies correspondences and
/// CORAL statistics.
pub fn execute_plan(
    plan: &TrainPlan,
    base: &Model,
    converter: Option<Converter>,
    target: &Domain,
    source: &Domain,
) -> Result<Trained> {
    plan.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyInput("target domain"));
    }
    let mut out = Trained::plain(base.clone());
    let finetune = plan.has(Step::Finetune);
    match plan.mode {
        Mode::FinetuneOnly => {
            if finetune {
                out.logs.push(fine_tune(&mut out.model, None, target, None, plan)?);
            }
        }
        Mode::Coral => {
            let map = CoralMap::fit(&target.observations(), &source.observations(), target.row_width(), plan.ridge)?;
            let aligned = target.with_inputs(&map.apply(&target.observations()))?;
            if finetune {
                out.logs.push(fine_tune(&mut out.model, None, &aligned, None, plan)?);
            }
            out.coral = Some(map);
        }
        mode => {
            let mut conv =
                converter.ok_or_else(|| Error::ModeMismatch(format!("mode {} needs a converter", mode.name())))?;
            if (mode == Mode::Imp) == conv.is_matrix_mode() {
                return Err(Error::ModeMismatch(format!("mode {} with converter `{}`", mode.name(), conv.spec)));
            }
            if conv.spec.is_sequence() != target.is_sequence() {
                return Err(Error::ModeMismatch("converter input kind differs from the data".into()));
            }
            if plan.has(Step::Pretrain) {
                out.logs.push(pretrain_converter(
                    &mut conv,
                    target,
                    plan.pretrain_target,
                    &plan.pretrain,
                    plan.squared_loss,
                    plan.seed,
                )?);
            }
            let need_set =
                plan.has(Step::Correspondence) || (finetune && mode.uses_correspondence_loss() && plan.lambda_corr > 0.0);
            let set = if need_set { Some(build_correspondences(target, source, plan.n_corr, plan.seed)?) } else { None };
            if plan.has(Step::Correspondence) {
                let set = set.as_ref().expect("built above");
                out.logs.push(train_correspondence(
                    &mut conv,
                    target,
                    source,
                    set,
                    &plan.correspondence,
                    plan.squared_loss,
                    plan.seed,
                )?);
            }
            if finetune {
                let corr = set.as_ref().map(|s| (source, s));
                out.logs.push(fine_tune(&mut out.model, Some(&mut conv), target, corr, plan)?);
            }
            out.converter = Some(conv);
        }
    }
    Ok(out)
}
