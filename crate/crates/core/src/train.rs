//! Contrastive pretraining, frozen linear probing, fractional fine-tuning and
//! k-fold evaluation.

use rand::seq::SliceRandom;

use crate::augment::{sample_pair, AugmentFamily, AugmentPipeline};
use crate::contrastive::{pair_similarity_means, ContrastiveBatch, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::image::{resize_view, Image};
use crate::metrics::{accuracy, auc, ConfusionCounts, FoldMetrics, FoldReport};
use crate::nn::adam::{AdamConfig, AdamState};
use crate::nn::layers::{softmax, softmax_cross_entropy};
use crate::nn::matrix::Matrix;
use crate::nn::model::{ClassificationHead, ContrastiveModel, Encoder, ModelDims};
use crate::rng;
use crate::spiral::{spiral_transform, SpiralConfig};
use crate::split::{stratified_kfold, DatasetSplit};
use crate::volume::LesionSample;

const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_HEAD: u64 = 3;
const STREAM_SUBSET: u64 = 4;
const STREAM_PAIRS: u64 = 5;

/// Minimum decrease of the best loss that resets the patience counter.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// Where the two members of a positive pair come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PositiveSource {
    /// Two augmentations of one view. With several view angles every
    /// `(sample, angle)` view is a separate item.
    #[default]
    Augmentation,
    /// Augmentations of two different rotated views of one sample. Needs at
    /// least two view angles; items are samples.
    Rotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub early_stop_patience: usize,
    /// Items per contrastive batch; each contributes two views.
    pub batch_size: usize,
    pub temperature: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub family: AugmentFamily,
    pub view_angles: Vec<f64>,
    pub positives: PositiveSource,
    pub seed: u64,
    /// Epochs for probe and fine-tune heads.
    pub head_epochs: usize,
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            early_stop_patience: 50,
            batch_size: 64,
            temperature: DEFAULT_TEMPERATURE,
            lr: 1e-3,
            weight_decay: 1e-4,
            family: AugmentFamily::Nia,
            view_angles: vec![0.0],
            positives: PositiveSource::Augmentation,
            seed: 0,
            head_epochs: 100,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch size must be even and at least 4, got {}",
                self.batch_size
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig("early stop patience must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {} must be positive", self.temperature)));
        }
        if self.view_angles.is_empty() {
            return Err(Error::InvalidConfig("at least one view angle is required".into()));
        }
        if self.positives == PositiveSource::Rotation && self.view_angles.len() < 2 {
            return Err(Error::InvalidConfig("rotation positives need at least two view angles".into()));
        }
        self.adam().validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Spiral views of every sample at every angle, resized to `view_size`
/// squares, sample-major.
pub fn prepare_views(
    samples: &[LesionSample],
    spiral: &SpiralConfig,
    angles: &[f64],
    view_size: usize,
) -> Result<Vec<Image>> {
    let mut views = Vec::with_capacity(samples.len() * angles.len());
    for s in samples {
        for &a in angles {
            let v = spiral_transform(&s.volume, &spiral.with_rotation(a))?;
            views.push(resize_view(&v, view_size, view_size)?);
        }
    }
    Ok(views)
}

pub fn initialize_model(cfg: &TrainConfig) -> Result<ContrastiveModel> {
    ContrastiveModel::new(&cfg.dims, &mut rng::generator(rng::derive(cfg.seed, STREAM_INIT)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: ContrastiveModel,
    /// Epoch 0 is the untrained model evaluated on one pass of the data.
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl PretrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.history[0].loss
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().unwrap().loss
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for r in &self.history {
            out.push_str(&format!("{},{:.9}\n", r.epoch, r.loss));
        }
        out
    }
}

impl TrainConfig {
    /// Number of contrastive items among `views`.
    fn item_count(&self, views: &[Image]) -> usize {
        match self.positives {
            PositiveSource::Augmentation => views.len(),
            PositiveSource::Rotation => views.len() / self.view_angles.len(),
        }
    }
}

/// The positive pair of contrastive item `item`.
fn positive_pair(
    views: &[Image],
    item: usize,
    pipeline: &AugmentPipeline,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Image, Image)> {
    let seed = rng::derive(seed, item as u64);
    match cfg.positives {
        PositiveSource::Augmentation => sample_pair(&views[item], pipeline, seed),
        PositiveSource::Rotation => {
            let angles = cfg.view_angles.len();
            let mut picked: Vec<usize> = (0..angles).collect();
            picked.shuffle(&mut rng::generator(seed));
            let a = pipeline.apply(&views[item * angles + picked[0]], seed.wrapping_mul(2))?;
            let b = pipeline.apply(&views[item * angles + picked[1]], seed.wrapping_mul(2).wrapping_add(1))?;
            Ok((a, b))
        }
    }
}

/// Pooled rows `(2k, 2k + 1)` holding the positive pair of item `items[k]`.
fn augmented_pairs(
    encoder: &Encoder,
    views: &[Image],
    items: &[usize],
    pipeline: &AugmentPipeline,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Matrix> {
    let mut rows = Vec::with_capacity(2 * items.len());
    for &i in items {
        let (a, b) = positive_pair(views, i, pipeline, cfg, seed)?;
        rows.push(encoder.pool(&a)?);
        rows.push(encoder.pool(&b)?);
    }
    Matrix::from_rows(&rows)
}

fn check_loss(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("contrastive loss became {loss}")))
    }
}

/// One pass over shuffled full batches; updates the model when `adam` is given.
fn contrastive_epoch(
    model: &mut ContrastiveModel,
    mut adam: Option<&mut AdamState>,
    views: &[Image],
    pipeline: &AugmentPipeline,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..cfg.item_count(views)).collect();
    let shuffle_seed = rng::derive(rng::derive(cfg.seed, STREAM_SHUFFLE), epoch as u64);
    order.shuffle(&mut rng::generator(shuffle_seed));
    let augment_seed = rng::derive(rng::derive(cfg.seed, STREAM_AUGMENT), epoch as u64);
    let mut total = 0.0;
    let mut batches = 0;
    for batch in order.chunks_exact(cfg.batch_size) {
        let pooled = augmented_pairs(&model.encoder, views, batch, pipeline, cfg, augment_seed)?;
        let (loss, grads, stats) = model.contrastive_loss_and_grads(&pooled, cfg.temperature)?;
        total += check_loss(loss)?;
        batches += 1;
        if let Some(adam) = adam.as_deref_mut() {
            adam.step(&mut model.params_mut(), &grads)?;
            model.projector.bn.update_running(&stats);
        }
    }
    Ok(total / batches as f64)
}

/// Trains encoder and projector with NT-Xent over augmented pairs of `views`.
///
/// Stops after `cfg.epochs` or once the best epoch loss has not improved by
/// more than [`IMPROVEMENT_THRESHOLD`] for `cfg.early_stop_patience` epochs.
pub fn pretrain(views: &[Image], pipeline: &AugmentPipeline, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    pipeline.validate()?;
    if views.len() % cfg.view_angles.len() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} views are not whole groups of {} angles",
            views.len(),
            cfg.view_angles.len()
        )));
    }
    if cfg.item_count(views) < cfg.batch_size {
        return Err(Error::TooFewSamples(format!(
            "{} items cannot fill a batch of {}",
            cfg.item_count(views),
            cfg.batch_size
        )));
    }
    let mut model = initialize_model(cfg)?;
    let mut adam = AdamState::new(cfg.adam(), &model.param_sizes())?;
    let initial = contrastive_epoch(&mut model, None, views, pipeline, cfg, 0)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        loss: initial,
        best: initial,
    }];
    let mut best = initial;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.epochs {
        let loss = contrastive_epoch(&mut model, Some(&mut adam), views, pipeline, cfg, epoch)?;
        if loss < best - IMPROVEMENT_THRESHOLD {
            stale = 0;
        } else {
            stale += 1;
        }
        best = best.min(loss);
        history.push(EpochRecord { epoch, loss, best });
        if stale >= cfg.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    Ok(PretrainOutcome {
        model,
        history,
        stopped_early,
    })
}

/// Mean positive-pair and negative-pair cosine similarity of eval-mode
/// projections over freshly augmented batches.
pub fn similarity_means(
    model: &ContrastiveModel,
    views: &[Image],
    pipeline: &AugmentPipeline,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let seed = rng::derive(cfg.seed, STREAM_PAIRS);
    let indices: Vec<usize> = (0..cfg.item_count(views)).collect();
    let (mut pos, mut neg, mut batches) = (0.0, 0.0, 0);
    for batch in indices.chunks_exact(cfg.batch_size) {
        let pooled = augmented_pairs(&model.encoder, views, batch, pipeline, cfg, seed)?;
        let z = model.project_eval(&pooled)?;
        let (p, n) = pair_similarity_means(&ContrastiveBatch::from_flat(z.into_data(), model.projector.output_dim(), cfg.temperature)?)?;
        pos += p;
        neg += n;
        batches += 1;
    }
    if batches == 0 {
        return Err(Error::TooFewSamples("no full batch to measure".into()));
    }
    Ok((pos / batches as f64, neg / batches as f64))
}

/// Encoder outputs for each view.
pub fn extract_features(encoder: &Encoder, views: &[Image]) -> Result<Matrix> {
    encoder.embed(&encoder.pool_batch(views)?)
}

fn check_binary(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(&label) => Err(Error::BadLabel { label, classes: 2 }),
        None => Ok(()),
    }
}

fn minibatches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::generator(seed));
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Fits a batch-norm plus dense head on fixed features.
pub fn train_head(features: &Matrix, labels: &[usize], cfg: &TrainConfig, seed: u64) -> Result<ClassificationHead> {
    check_binary(labels)?;
    if features.rows() != labels.len() || labels.len() < 2 {
        return Err(Error::TooFewSamples(format!(
            "{} feature rows for {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let mut head = ClassificationHead::new(features.cols(), 2, &mut rng::generator(rng::derive(seed, 0)));
    let mut adam = AdamState::new(cfg.adam(), &head.param_sizes())?;
    for epoch in 0..cfg.head_epochs {
        for batch in minibatches(labels.len(), cfg.batch_size, rng::derive(seed, 1 + epoch as u64)) {
            let x = features.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache, stats) = head.forward_train(&x)?;
            let (_, dlogits) = softmax_cross_entropy(&logits, &y)?;
            let (grads, _) = head.backward(&cache, &dlogits)?;
            adam.step(&mut head.params_mut(), &grads)?;
            head.bn.update_running(&stats);
        }
    }
    Ok(head)
}

/// Accuracy and AUC of class-1 probabilities from eval-mode logits.
pub fn evaluate_logits(logits: &Matrix, labels: &[usize]) -> Result<FoldMetrics> {
    let probs = softmax(logits);
    let predicted: Vec<usize> = (0..probs.rows())
        .map(|r| usize::from(probs.get(r, 1) > probs.get(r, 0)))
        .collect();
    let scores: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, 1)).collect();
    Ok(FoldMetrics {
        accuracy: accuracy(&ConfusionCounts::from_predictions(&predicted, labels)?)?,
        auc: auc(&scores, labels)?,
    })
}

/// Runs `run(fold, train, test)` for each fold of `split`.
pub fn cross_validate(
    split: &DatasetSplit,
    mut run: impl FnMut(usize, &[usize], &[usize]) -> Result<FoldMetrics>,
) -> Result<FoldReport> {
    let folds = (0..split.fold_count)
        .map(|f| run(f, &split.train_indices(f), &split.test_indices(f)))
        .collect::<Result<Vec<_>>>()?;
    FoldReport::new(folds)
}

/// `cross_validate` over a fresh stratified split.
pub fn cross_validate_labels(
    labels: &[usize],
    k: usize,
    seed: u64,
    run: impl FnMut(usize, &[usize], &[usize]) -> Result<FoldMetrics>,
) -> Result<FoldReport> {
    cross_validate(&stratified_kfold(labels, k, seed)?, run)
}

/// Frozen-encoder evaluation: per fold, a head is trained on out-of-fold
/// features and scored on the fold. `views` holds one view per label.
pub fn linear_probe(
    encoder: &Encoder,
    views: &[Image],
    labels: &[usize],
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<FoldReport> {
    check_binary(labels)?;
    if views.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} views for {} labels", views.len(), labels.len())));
    }
    let features = extract_features(encoder, views)?;
    let head_seed = rng::derive(cfg.seed, STREAM_HEAD);
    cross_validate(split, |fold, train, test| {
        let y_train: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let head = train_head(&features.select_rows(train), &y_train, cfg, rng::derive(head_seed, fold as u64))?;
        evaluate_logits(&head.forward_eval(&features.select_rows(test))?, &y_test)
    })
}

/// Seeded stratified subset keeping `ceil(fraction * n_c)` members of each
/// class, in ascending index order.
pub fn label_subset(indices: &[usize], labels: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("label fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &i in indices {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut chosen = Vec::new();
    for (class, mut members) in by_class {
        let keep = (fraction * members.len() as f64 - 1e-9).ceil() as usize;
        if keep < 2 {
            return Err(Error::TooFewSamples(format!(
                "fraction {fraction} keeps {keep} of class {class}, need 2"
            )));
        }
        members.shuffle(&mut rng::generator(rng::derive(seed, class as u64)));
        chosen.extend_from_slice(&members[..keep]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Trains a copy of the encoder jointly with a fresh head on pooled inputs.
pub fn fine_tune_fold(
    encoder: &Encoder,
    pooled: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Encoder, ClassificationHead)> {
    let mut encoder = encoder.clone();
    let mut head = ClassificationHead::new(encoder.repr_dim(), 2, &mut rng::generator(rng::derive(seed, 0)));
    let mut sizes = encoder.param_sizes();
    sizes.extend(head.param_sizes());
    let mut adam = AdamState::new(cfg.adam(), &sizes)?;
    for epoch in 0..cfg.head_epochs {
        for batch in minibatches(labels.len(), cfg.batch_size, rng::derive(seed, 1 + epoch as u64)) {
            let x = pooled.select_rows(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (repr, enc_cache) = encoder.forward(&x)?;
            let (logits, head_cache, stats) = head.forward_train(&repr)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("fine-tune loss became {loss}")));
            }
            let (head_grads, dy) = head.backward(&head_cache, &dlogits)?;
            let mut grads = encoder.backward(&enc_cache, &dy)?;
            grads.extend(head_grads);
            let mut params = encoder.params_mut();
            params.extend(head.params_mut());
            adam.step(&mut params, &grads)?;
            head.bn.update_running(&stats);
        }
    }
    Ok((encoder, head))
}

/// Per fold, fine-tunes encoder and head on a stratified `fraction` of the
/// training indices and evaluates on the whole held-out fold.
pub fn fine_tune(
    encoder: &Encoder,
    views: &[Image],
    labels: &[usize],
    fraction: f64,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<FoldReport> {
    check_binary(labels)?;
    if views.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} views for {} labels", views.len(), labels.len())));
    }
    let pooled = encoder.pool_batch(views)?;
    let subset_seed = rng::derive(cfg.seed, STREAM_SUBSET);
    let head_seed = rng::derive(cfg.seed, STREAM_HEAD);
    cross_validate(split, |fold, train, test| {
        let subset = label_subset(train, labels, fraction, rng::derive(subset_seed, fold as u64))?;
        let y_sub: Vec<usize> = subset.iter().map(|&i| labels[i]).collect();
        let (tuned, head) = fine_tune_fold(encoder, &pooled.select_rows(&subset), &y_sub, cfg, rng::derive(head_seed, fold as u64))?;
        let y_test: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let logits = head.forward_eval(&tuned.embed(&pooled.select_rows(test))?)?;
        evaluate_logits(&logits, &y_test)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SyntheticLesionSpec};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            head_epochs: 20,
            dims: ModelDims {
                view_size: 16,
                pooled_side: 8,
                hidden: 16,
                repr: 12,
                proj_hidden: 16,
                proj_out: 8,
            },
            ..TrainConfig::default()
        }
    }

    fn tiny_views(n: usize) -> Vec<Image> {
        (0..n)
            .map(|k| Image::from_fn(16, 16, |r, c| ((r * 3 + c * (k + 1)) % 7) as f64 / 7.0))
            .collect()
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.early_stop_patience, c.batch_size), (1000, 50, 64));
        assert_eq!((c.temperature, c.lr, c.weight_decay), (0.07, 1e-3, 1e-4));
        c.validate().unwrap();
        assert!(TrainConfig { batch_size: 5, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { batch_size: 2, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { early_stop_patience: 0, ..c }.validate().is_err());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let out = pretrain(&tiny_views(8), &AugmentPipeline::nia(), &cfg).unwrap();
        assert_eq!(out.model, initialize_model(&cfg).unwrap());
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn pretrain_is_deterministic_and_history_monotone() {
        let cfg = tiny_cfg();
        let views = tiny_views(8);
        let a = pretrain(&views, &AugmentPipeline::mia(), &cfg).unwrap();
        let b = pretrain(&views, &AugmentPipeline::mia(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_csv(), b.loss_csv());
        assert!(a.history.windows(2).all(|w| w[1].best <= w[0].best));
        assert!(a.history.iter().all(|r| r.loss.is_finite()));
        assert!(a.loss_csv().starts_with("epoch,loss\n0,"));
    }

    #[test]
    fn early_stopping_with_zero_learning_rate() {
        let cfg = TrainConfig {
            epochs: 50,
            early_stop_patience: 2,
            lr: 0.0,
            ..tiny_cfg()
        };
        let out = pretrain(&tiny_views(4), &AugmentPipeline::nia(), &cfg).unwrap();
        assert!(out.stopped_early || out.history.len() == 51);
        assert!(out.history.len() < 51);
    }

    #[test]
    fn rotation_positives_pair_two_angles_of_one_sample() {
        let cfg = TrainConfig {
            view_angles: vec![0.0, 90.0, 180.0],
            positives: PositiveSource::Rotation,
            ..tiny_cfg()
        };
        let views: Vec<Image> = (0..12).map(|k| Image::from_fn(16, 16, |r, c| ((r + c + k) % 12) as f64 / 12.0)).collect();
        assert_eq!(cfg.item_count(&views), 4);
        let mut identity = AugmentPipeline::nia();
        identity.ops.iter_mut().for_each(|op| op.probability = 0.0);
        for item in 0..4 {
            let (a, b) = positive_pair(&views, item, &identity, &cfg, 9).unwrap();
            let ia = views.iter().position(|v| *v == a).unwrap();
            let ib = views.iter().position(|v| *v == b).unwrap();
            assert_ne!(ia, ib);
            assert_eq!((ia / 3, ib / 3), (item, item));
        }
        let out = pretrain(&views, &AugmentPipeline::nia(), &cfg).unwrap();
        assert!(out.history.iter().all(|r| r.loss.is_finite()));
        assert!(pretrain(&views[..11], &AugmentPipeline::nia(), &cfg).is_err());
        assert!(TrainConfig { view_angles: vec![0.0], ..cfg }.validate().is_err());
    }

    #[test]
    fn too_few_views() {
        let r = pretrain(&tiny_views(3), &AugmentPipeline::nia(), &tiny_cfg());
        assert!(matches!(r, Err(Error::TooFewSamples(_))));
    }

    #[test]
    fn separable_features_probe_perfectly() {
        let n = 20;
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let features = Matrix::from_rows(
            &labels
                .iter()
                .enumerate()
                .map(|(i, &l)| vec![if l == 1 { 3.0 } else { -3.0 } + 0.01 * i as f64, 0.5])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let cfg = TrainConfig { batch_size: 8, head_epochs: 200, lr: 1e-2, ..TrainConfig::default() };
        let report = cross_validate_labels(&labels, 5, 1, |f, train, test| {
            let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let head = train_head(&features.select_rows(train), &y, &cfg, f as u64)?;
            let yt: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            evaluate_logits(&head.forward_eval(&features.select_rows(test))?, &yt)
        })
        .unwrap();
        assert_eq!(report.accuracy().0, 1.0);
        assert_eq!(report.auc().0, 1.0);
    }

    #[test]
    fn probe_leaves_encoder_untouched() {
        let cfg = tiny_cfg();
        let model = initialize_model(&cfg).unwrap();
        let before = model.encoder.clone();
        let views = tiny_views(10);
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let split = stratified_kfold(&labels, 2, 0).unwrap();
        linear_probe(&model.encoder, &views, &labels, &split, &cfg).unwrap();
        assert_eq!(model.encoder, before);
    }

    #[test]
    fn subsets_are_stratified_and_replayable() {
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let idx: Vec<usize> = (0..40).collect();
        assert_eq!(label_subset(&idx, &labels, 1.0, 3).unwrap(), idx);
        let s = label_subset(&idx, &labels, 0.1, 3).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(s, label_subset(&idx, &labels, 0.1, 3).unwrap());
        assert!(matches!(label_subset(&idx, &labels, 0.05, 3), Err(Error::TooFewSamples(_))));
        assert!(label_subset(&idx, &labels, 0.0, 3).is_err());
    }

    #[test]
    fn prepared_views_have_requested_size() {
        let specs = [SyntheticLesionSpec { size: 12, core_radius: 4.0, ..SyntheticLesionSpec::new(0, 0.2) }];
        let samples = generate_dataset(&specs, 2, 1).unwrap();
        let spiral = SpiralConfig { radius: 8, angular_resolution: 4, ..SpiralConfig::default() };
        let views = prepare_views(&samples, &spiral, &[0.0, 90.0], 16).unwrap();
        assert_eq!(views.len(), 4);
        assert!(views.iter().all(|v| v.shape() == (16, 16)));
    }

    #[test]
    fn fine_tune_runs_and_is_deterministic() {
        let cfg = tiny_cfg();
        let model = initialize_model(&cfg).unwrap();
        let views = tiny_views(12);
        let labels: Vec<usize> = (0..12).map(|i| (i / 6) % 2).collect();
        let split = stratified_kfold(&labels, 2, 0).unwrap();
        let a = fine_tune(&model.encoder, &views, &labels, 1.0, &split, &cfg).unwrap();
        let b = fine_tune(&model.encoder, &views, &labels, 1.0, &split, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
