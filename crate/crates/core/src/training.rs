//! Three training stages sharing one loop: the base isolated-sign
//! classifier F, the jointly trained two-domain classifier F̂, and the
//! memory-augmented full model. All of them minimize sigmoid BCE against
//! one-hot labels with Adam.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::backbone::Classifier;
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::evaluation::{topk_accuracy, AccuracyMode};
use crate::extraction::CandidateSet;
use crate::memory::PrototypeMemory;
use crate::model::FullModel;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Matrix;
use crate::textio::write_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Clips are cropped or cyclically padded to this many frames.
    pub target_length: usize,
    pub seed: u64,
    /// Full stage: keep the encoder copied from F fixed.
    pub freeze_encoder: bool,
    /// Full stage: start the classification head from F's head.
    pub init_head_from_base: bool,
    /// Joint stage: start F̂ from F instead of a fresh draw.
    pub init_from_base: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            learning_rate: 1e-3,
            weight_decay: 1e-7,
            target_length: 64,
            seed: 0,
            freeze_encoder: false,
            init_head_from_base: true,
            init_from_base: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.target_length == 0 {
            return Err(Error::Config(
                "epochs, batch_size and target_length must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning_rate and weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    fn adam(&self) -> Adam {
        Adam::new(AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        })
    }
}

/// Architecture sizes shared by F, F̂ and the full model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub downsample: usize,
    pub corr_dim: usize,
    pub attn_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::with_feature_dim(32)
    }
}

impl ModelConfig {
    pub fn with_feature_dim(d: usize) -> Self {
        ModelConfig {
            feature_dim: d,
            downsample: 4,
            corr_dim: (d / 2).max(1),
            attn_dim: (d / 4).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.downsample == 0 || self.corr_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.attn_dim == 0 || self.attn_dim >= self.feature_dim {
            return Err(Error::Config(format!(
                "attn_dim {} must lie in 1..{}",
                self.attn_dim, self.feature_dim
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Base,
    Joint,
    Full,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Joint => "joint",
            Stage::Full => "full",
        }
    }

    /// Distinct ChaCha stream per stage, so equal seeds still give
    /// independent initializations.
    fn stream(self) -> u64 {
        match self {
            Stage::Base => 0,
            Stage::Joint => 1,
            Stage::Full => 2,
        }
    }
}

fn stage_rng(stage: Stage, seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage.stream());
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub seed: u64,
    pub config: TrainConfig,
    /// Mean per-sample training loss of each epoch, measured before each
    /// batch's update.
    pub epoch_loss: Vec<f64>,
    /// Micro top-1 on the validation clips after each epoch.
    pub val_top1: Vec<Option<f64>>,
    pub train_samples: usize,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let c = &self.config;
        writeln!(
            out,
            "# stage={} seed={} samples={} epochs={} batch_size={} learning_rate={:?} weight_decay={:?} target_length={} freeze_encoder={} init_head_from_base={} init_from_base={}",
            self.stage.as_str(),
            self.seed,
            self.train_samples,
            c.epochs,
            c.batch_size,
            c.learning_rate,
            c.weight_decay,
            c.target_length,
            c.freeze_encoder,
            c.init_head_from_base,
            c.init_from_base,
        )
        .expect("write to string");
        if let Some(p) = &self.checkpoint {
            writeln!(out, "# checkpoint={}", p.display()).expect("write to string");
        }
        out.push_str("epoch\tloss\tval_top1\n");
        for (i, (loss, acc)) in self.epoch_loss.iter().zip(&self.val_top1).enumerate() {
            let acc = acc.map_or_else(|| "-".to_string(), |a| format!("{a:?}"));
            writeln!(out, "{}\t{:?}\t{}", i + 1, loss, acc).expect("write to string");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_tsv())
    }
}

/// Crops a random run of `target` consecutive frames, or cycles the whole
/// clip until it reaches `target` frames when it is shorter.
pub fn temporal_augment(frames: &Matrix, target: usize, rng: &mut impl Rng) -> Result<Matrix> {
    let t = frames.rows();
    if t == 0 {
        return Err(Error::EmptySequence("temporal_augment"));
    }
    if t >= target {
        let s = rng.random_range(0..=t - target);
        Ok(frames.slice_rows(s, s + target))
    } else {
        let idx: Vec<usize> = (0..target).map(|i| i % t).collect();
        Ok(frames.select_rows(&idx))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LabeledClip<'a> {
    pub frames: &'a Matrix,
    pub label: usize,
}

/// Training and validation clips plus the class names used in errors.
#[derive(Clone, Debug)]
pub struct TrainData<'a> {
    pub glosses: &'a [String],
    pub train: Vec<LabeledClip<'a>>,
    pub val: Vec<LabeledClip<'a>>,
}

impl<'a> TrainData<'a> {
    /// Isolated train/val splits of a corpus.
    pub fn isolated(corpus: &'a Corpus) -> Self {
        let clips = |split| {
            corpus
                .isolated_in(split)
                .map(|s| LabeledClip {
                    frames: &s.frames,
                    label: s.label,
                })
                .collect()
        };
        TrainData {
            glosses: corpus.vocab.glosses(),
            train: clips(Split::Train),
            val: clips(Split::Val),
        }
    }

    /// Appends mined news windows, labelled with their extraction class.
    pub fn with_candidates(mut self, candidates: &'a CandidateSet) -> Self {
        self.train.extend(candidates.iter().map(|c| LabeledClip {
            frames: &c.frames,
            label: c.class,
        }));
        self
    }

    pub fn num_classes(&self) -> usize {
        self.glosses.len()
    }

    fn check(&self) -> Result<()> {
        let k = self.num_classes();
        let mut counts = vec![0usize; k];
        for c in self.train.iter().chain(&self.val) {
            if c.label >= k {
                return Err(Error::Config(format!("label {} outside {} classes", c.label, k)));
            }
        }
        for c in &self.train {
            counts[c.label] += 1;
        }
        let empty: Vec<String> = counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(j, _)| self.glosses[j].clone())
            .collect();
        if empty.is_empty() {
            Ok(())
        } else {
            Err(Error::EmptyClasses(empty))
        }
    }
}

fn one_hot(label: usize, classes: usize) -> Matrix {
    let mut y = Matrix::zeros(1, classes);
    y.set(0, label, 1.0);
    y
}

/// A model the shared loop can optimize.
trait Learner {
    /// Builds the logits node for one clip in `g`.
    fn bind_logits<'g>(&'g self, g: &mut Graph<'g>, clips: &'g [Matrix]) -> Result<(Vec<Var>, Vec<Var>)>;
    fn params(&mut self) -> Vec<&mut Matrix>;
    fn predict(&self, frames: &Matrix) -> Result<Matrix>;
}

impl Learner for Classifier {
    fn bind_logits<'g>(&'g self, g: &mut Graph<'g>, clips: &'g [Matrix]) -> Result<(Vec<Var>, Vec<Var>)> {
        let enc = self.encoder.bind(g);
        let head = self.head.bind(g);
        let mut logits = Vec::with_capacity(clips.len());
        for frames in clips {
            let x = g.leaf(frames);
            let feats = enc.encode(g, x)?;
            let pooled = g.mean_rows(feats)?;
            logits.push(head.logits(g, pooled)?);
        }
        let mut vars = enc.vars();
        vars.extend(head.vars());
        Ok((logits, vars))
    }

    fn params(&mut self) -> Vec<&mut Matrix> {
        self.params_mut()
    }

    fn predict(&self, frames: &Matrix) -> Result<Matrix> {
        self.logits(frames)
    }
}

struct FullLearner<'m> {
    model: FullModel,
    memory: &'m Matrix,
    train_encoder: bool,
}

impl Learner for FullLearner<'_> {
    fn bind_logits<'g>(&'g self, g: &mut Graph<'g>, clips: &'g [Matrix]) -> Result<(Vec<Var>, Vec<Var>)> {
        let vars = self.model.bind(g, self.memory)?;
        let mut logits = Vec::with_capacity(clips.len());
        for frames in clips {
            let x = g.leaf(frames);
            logits.push(vars.forward(g, x)?.logits);
        }
        Ok((logits, vars.trainable(self.train_encoder)))
    }

    fn params(&mut self) -> Vec<&mut Matrix> {
        self.model.params_mut(self.train_encoder)
    }

    fn predict(&self, frames: &Matrix) -> Result<Matrix> {
        self.model.logits(frames, self.memory)
    }
}

/// Mean BCE over a batch and its gradients. Per-sample losses are summed
/// in sample order, so the result does not depend on anything but inputs.
fn batch_gradients(
    learner: &impl Learner,
    clips: &[Matrix],
    labels: &[usize],
    classes: usize,
) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let (logits, vars) = learner.bind_logits(&mut g, clips)?;
    let mut total: Option<Var> = None;
    for (&z, &label) in logits.iter().zip(labels) {
        let l = g.bce_with_logits(z, &one_hot(label, classes))?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = total.ok_or(Error::EmptySequence("batch"))?;
    let loss = g.scale(total, 1.0 / clips.len() as f64);
    let value = g.value(loss).get(0, 0);
    let grads = g.backward(loss)?;
    Ok((value, vars.iter().map(|&v| grads.get(v, &g)).collect()))
}

/// Logits rows for a list of clips, stacked into an `N × K` matrix.
fn predict_all(learner: &impl Learner, clips: &[LabeledClip<'_>], classes: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(clips.len() * classes);
    for c in clips {
        data.extend_from_slice(learner.predict(c.frames)?.data());
    }
    Matrix::from_vec(clips.len(), classes, data)
}

fn run(
    learner: &mut impl Learner,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    stage: Stage,
    rng: &mut ChaCha8Rng,
) -> Result<TrainReport> {
    let classes = data.num_classes();
    let mut adam = cfg.adam();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut report = TrainReport {
        stage,
        seed: cfg.seed,
        config: cfg.clone(),
        epoch_loss: Vec::with_capacity(cfg.epochs),
        val_top1: Vec::with_capacity(cfg.epochs),
        train_samples: data.train.len(),
        checkpoint: None,
    };
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut clips = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let c = data.train[i];
                clips.push(temporal_augment(c.frames, cfg.target_length, rng)?);
                labels.push(c.label);
            }
            let (loss, grads) = batch_gradients(learner, &clips, &labels, classes)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam.step(&mut learner.params(), &grads)?;
        }
        let epoch_loss = loss_sum / data.train.len() as f64;
        let val = if data.val.is_empty() {
            None
        } else {
            let logits = predict_all(learner, &data.val, classes)?;
            let labels: Vec<usize> = data.val.iter().map(|c| c.label).collect();
            Some(topk_accuracy(&logits, &labels, 1, AccuracyMode::Micro)?)
        };
        debug!(
            "{} epoch {epoch}: loss {epoch_loss:.5} val top-1 {val:?}",
            stage.as_str()
        );
        report.epoch_loss.push(epoch_loss);
        report.val_top1.push(val);
    }
    info!(
        "{} stage done: {} samples, final loss {:.5}",
        stage.as_str(),
        data.train.len(),
        report.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(report)
}

/// Trains the isolated-sign classifier F. Passing data extended with news
/// windows gives the "news windows added directly" baseline.
pub fn train_base(
    data: &TrainData<'_>,
    d_in: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    data.check()?;
    let mut rng = stage_rng(Stage::Base, cfg.seed);
    let mut clf = Classifier::init(d_in, model.feature_dim, data.num_classes(), model.downsample, &mut rng);
    let report = run(&mut clf, data, cfg, Stage::Base, &mut rng)?;
    Ok((clf, report))
}

/// Trains F̂ on isolated clips together with the mined news windows.
/// F̂ gets its own initialization unless `init_from_base` is set.
pub fn train_joint(
    data: &TrainData<'_>,
    candidates: &CandidateSet,
    base: &Classifier,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let joint = data.clone().with_candidates(candidates);
    joint.check()?;
    let mut rng = stage_rng(Stage::Joint, cfg.seed);
    let mut clf = if cfg.init_from_base {
        base.clone()
    } else {
        Classifier::init(
            base.encoder.input_dim(),
            model.feature_dim,
            data.num_classes(),
            model.downsample,
            &mut rng,
        )
    };
    let report = run(&mut clf, &joint, cfg, Stage::Joint, &mut rng)?;
    Ok((clf, report))
}

/// Trains the memory-augmented model end to end. The encoder and (by
/// default) the head start from F; the memory stays a constant input.
pub fn train_full(
    data: &TrainData<'_>,
    memory: &PrototypeMemory,
    base: &Classifier,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(FullModel, TrainReport)> {
    cfg.validate()?;
    model.validate()?;
    data.check()?;
    let mut rng = stage_rng(Stage::Full, cfg.seed);
    let full = FullModel::from_base(base, model.corr_dim, model.attn_dim, cfg.init_head_from_base, &mut rng)?;
    full.check_memory(&memory.matrix)?;
    let mut learner = FullLearner {
        model: full,
        memory: &memory.matrix,
        train_encoder: !cfg.freeze_encoder,
    };
    let report = run(&mut learner, data, cfg, Stage::Full, &mut rng)?;
    Ok((learner.model, report))
}

/// Mean BCE of a classifier over clips, without augmentation.
pub fn classifier_loss(clf: &Classifier, clips: &[LabeledClip<'_>]) -> Result<f64> {
    let k = clf.num_classes();
    let mut total = 0.0;
    for c in clips {
        let p = clf.probabilities(c.frames)?;
        total += crate::autodiff::bce_loss(&p, &one_hot(c.label, k))?;
    }
    Ok(total / clips.len() as f64)
}
