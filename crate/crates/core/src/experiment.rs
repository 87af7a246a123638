//! End-to-end seeded runs on the synthetic corpus: base classifier, the
//! "news windows added" baseline, coarse alignment, memory construction,
//! full model, then recognition, localization and domain-gap measurements.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::backbone::Classifier;
use crate::corpus::{generate_corpus, Corpus, NewsStream, Split, SynthConfig};
use crate::error::Result;
use crate::evaluation::{localize, map_at_tiou, topk_accuracy, AccuracyMode, LocalizeConfig, Span, StreamSpan, TIOU_THRESHOLDS};
use crate::extraction::{extract, CandidateSet, ExtractionConfig, MemoryScorer, WindowScorer};
use crate::memory::{MemorySources, PrototypeMemory, SourceTag};
use crate::model::FullModel;
use crate::tensor::Matrix;
use crate::training::{train_base, train_full, train_joint, ModelConfig, TrainConfig, TrainData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub extraction: ExtractionConfig,
    pub localize: LocalizeConfig,
    pub base: TrainConfig,
    pub joint: TrainConfig,
    pub full: TrainConfig,
    pub memory_source: SourceTag,
    /// Let classes without mined news windows fall back to aligned isolated
    /// clips when building the memory.
    pub memory_fallback: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            extraction: ExtractionConfig::default(),
            localize: LocalizeConfig::default(),
            base: TrainConfig::default(),
            joint: TrainConfig::default(),
            full: TrainConfig::default(),
            memory_source: SourceTag::NewsAligned,
            memory_fallback: true,
        }
    }
}

impl ExperimentConfig {
    /// The same configuration with every seed replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.synth.seed = seed;
        cfg.base.seed = seed;
        cfg.joint.seed = seed;
        cfg.full.seed = seed;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub base_top1: f64,
    pub news_added_top1: f64,
    pub full_top1: f64,
    pub base_map: Vec<f64>,
    pub full_map: Vec<f64>,
    /// Mean isolated-vs-news class-centroid distance under F and F̂.
    pub gap_base: f64,
    pub gap_aligned: f64,
    pub candidates: usize,
    /// Share of mined windows overlapping a true sign of their class with
    /// tIoU ≥ 0.5.
    pub candidate_precision: f64,
    pub seconds: f64,
}

/// Logits of every clip stacked into `N × K`.
pub fn score_clips(clips: &[&Matrix], classes: usize, f: impl Fn(&Matrix) -> Result<Matrix>) -> Result<Matrix> {
    let mut data = Vec::with_capacity(clips.len() * classes);
    for c in clips {
        data.extend_from_slice(f(c)?.data());
    }
    Matrix::from_vec(clips.len(), classes, data)
}

/// Isolated test clips and their labels.
pub fn isolated_test(corpus: &Corpus) -> (Vec<&Matrix>, Vec<usize>) {
    corpus.isolated_in(Split::Test).map(|s| (&s.frames, s.label)).unzip()
}

/// Mined news windows and isolated training clips per class.
pub fn memory_sources<'a>(corpus: &'a Corpus, candidates: &'a CandidateSet) -> MemorySources<'a> {
    let mut sources = MemorySources::new(corpus.num_classes());
    for c in candidates.iter() {
        sources.news[c.class].push(&c.frames);
    }
    for s in corpus.isolated_in(Split::Train) {
        sources.isolated[s.label].push(&s.frames);
    }
    sources
}

/// Ground-truth spans of `streams`, indexed by position in the slice.
pub fn ground_truth(streams: &[&NewsStream]) -> Vec<StreamSpan> {
    streams
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.spans.iter().map(move |t| StreamSpan {
                stream: i,
                span: Span::new(t.class, t.start, t.end, 1.0),
            })
        })
        .collect()
}

pub fn detect_all(streams: &[&NewsStream], scorer: &impl WindowScorer, cfg: &LocalizeConfig) -> Result<Vec<StreamSpan>> {
    let mut out = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        out.extend(
            localize(&s.frames, scorer, cfg)?
                .into_iter()
                .map(|span| StreamSpan { stream: i, span }),
        );
    }
    Ok(out)
}

/// Mean over classes of the distance between the isolated-training
/// centroid and the centroid of true news signs, both embedded by `clf`.
/// Classes missing from either domain are skipped.
pub fn domain_gap(corpus: &Corpus, clf: &Classifier) -> Result<f64> {
    let k = corpus.num_classes();
    let mut iso: Vec<Vec<Matrix>> = vec![Vec::new(); k];
    let mut news: Vec<Vec<Matrix>> = vec![Vec::new(); k];
    for s in corpus.isolated_in(Split::Train) {
        iso[s.label].push(clf.embedding(&s.frames)?);
    }
    for s in &corpus.streams {
        for t in &s.spans {
            news[t.class].push(clf.embedding(&s.frames.slice_rows(t.start, t.end))?);
        }
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for j in 0..k {
        if iso[j].is_empty() || news[j].is_empty() {
            continue;
        }
        let a = crate::memory::build_prototype("", &iso[j])?;
        let b = crate::memory::build_prototype("", &news[j])?;
        total += a.sub(&b)?.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Fraction of candidates overlapping a true span of their class.
pub fn candidate_precision(corpus: &Corpus, candidates: &CandidateSet) -> f64 {
    if candidates.is_empty() {
        return 0.0;
    }
    let hits = candidates
        .iter()
        .filter(|c| {
            corpus.streams.iter().find(|s| s.id == c.stream_id).is_some_and(|s| {
                s.spans.iter().any(|t| {
                    t.class == c.class
                        && crate::evaluation::interval_tiou((t.start, t.end), (c.start, c.end)) >= 0.5
                })
            })
        })
        .count();
    hits as f64 / candidates.len() as f64
}

/// Trained artifacts of one run, kept for inspection.
pub struct SeedModels {
    pub corpus: Corpus,
    pub base: Classifier,
    pub news_added: Classifier,
    pub aligned: Classifier,
    pub candidates: CandidateSet,
    pub memory: PrototypeMemory,
    pub full: FullModel,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(SeedOutcome, SeedModels)> {
    let started = Instant::now();
    let cfg = cfg.with_seed(seed);
    let corpus = generate_corpus(&cfg.synth)?;
    let d_in = cfg.synth.frame_dim;
    let k = corpus.num_classes();
    let iso = TrainData::isolated(&corpus);

    let (base, _) = train_base(&iso, d_in, &cfg.model, &cfg.base)?;
    let candidates = extract(corpus.streams_in(Split::Train), &corpus.vocab, &base, &cfg.extraction)?;
    info!("seed {seed}: {} candidates mined", candidates.len());

    let with_news = iso.clone().with_candidates(&candidates);
    let (news_added, _) = train_base(&with_news, d_in, &cfg.model, &cfg.base)?;
    let (aligned, _) = train_joint(&iso, &candidates, &base, &cfg.model, &cfg.joint)?;

    let sources = memory_sources(&corpus, &candidates);
    let memory = PrototypeMemory::build(
        corpus.vocab.glosses(),
        &sources,
        &base,
        &aligned,
        cfg.memory_source,
        cfg.memory_fallback,
    )?;
    let (full, _) = train_full(&iso, &memory, &base, &cfg.model, &cfg.full)?;

    let (test_clips, labels) = isolated_test(&corpus);
    let top1 = |scores: Matrix| topk_accuracy(&scores, &labels, 1, AccuracyMode::Micro);
    let base_top1 = top1(score_clips(&test_clips, k, |f| base.logits(f))?)?;
    let news_added_top1 = top1(score_clips(&test_clips, k, |f| news_added.logits(f))?)?;
    let full_top1 = top1(score_clips(&test_clips, k, |f| full.logits(f, &memory.matrix))?)?;

    let test_streams: Vec<&NewsStream> = corpus.streams_in(Split::Test).collect();
    let truth = ground_truth(&test_streams);
    let base_dets = detect_all(&test_streams, &base, &cfg.localize)?;
    let scorer = MemoryScorer {
        model: &full,
        memory: &memory,
    };
    let full_dets = detect_all(&test_streams, &scorer, &cfg.localize)?;

    let outcome = SeedOutcome {
        seed,
        base_top1,
        news_added_top1,
        full_top1,
        base_map: map_at_tiou(&base_dets, &truth, &TIOU_THRESHOLDS),
        full_map: map_at_tiou(&full_dets, &truth, &TIOU_THRESHOLDS),
        gap_base: domain_gap(&corpus, &base)?,
        gap_aligned: domain_gap(&corpus, &aligned)?,
        candidates: candidates.len(),
        candidate_precision: candidate_precision(&corpus, &candidates),
        seconds: started.elapsed().as_secs_f64(),
    };
    info!("seed {seed}: {outcome:?}");
    let models = SeedModels {
        corpus,
        base,
        news_added,
        aligned,
        candidates,
        memory,
        full,
    };
    Ok((outcome, models))
}

/// Runs every seed on its own thread; results come back in seed order.
pub fn run_seeds(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SeedOutcome>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(cfg, seed).map(|(o, _)| o)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}
