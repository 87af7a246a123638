//! Weakly supervised mining of news signs: every window of every size is
//! scored by a clip classifier, each subtitle-matched class keeps its single
//! best window per stream, and only scores strictly above ε survive.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::Classifier;
use crate::corpus::{GlossVocabulary, NewsStream};
use crate::error::{Error, Result};
use crate::memory::PrototypeMemory;
use crate::model::FullModel;
use crate::tensor::Matrix;
use crate::textio::{read_text, write_text};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub min_window: usize,
    pub max_window: usize,
    pub stride: usize,
    pub epsilon: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            min_window: 9,
            max_window: 16,
            stride: 1,
            epsilon: 0.3,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_window == 0 || self.min_window > self.max_window || self.stride == 0 {
            return Err(Error::Config(format!(
                "window sizes {}..={} with stride {} are invalid",
                self.min_window, self.max_window, self.stride
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1)", self.epsilon)));
        }
        Ok(())
    }

    /// All `(start, end)` windows over a stream of `len` frames, grouped by
    /// size ascending, then by start.
    pub fn windows(&self, len: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for size in self.min_window..=self.max_window {
            if size > len {
                break;
            }
            for start in (0..=len - size).step_by(self.stride) {
                out.push((start, start + size));
            }
        }
        out
    }
}

/// Per-class probabilities for one window `[start, end)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowScore {
    pub start: usize,
    pub end: usize,
    pub probs: Matrix,
}

/// Anything that turns stream windows into `1 × K` class probabilities.
pub trait WindowScorer {
    fn score_windows(&self, frames: &Matrix, windows: &[(usize, usize)]) -> Result<Vec<Matrix>>;
}

impl WindowScorer for Classifier {
    /// Per-frame encoder features are computed once per stream; the pooled
    /// windows are bit-identical to encoding each window separately.
    fn score_windows(&self, frames: &Matrix, windows: &[(usize, usize)]) -> Result<Vec<Matrix>> {
        let feats = self.encoder.frame_features(frames)?;
        windows
            .iter()
            .map(|&(s, e)| {
                let x = feats.slice_rows(s, e).pool_rows(self.encoder.downsample)?;
                self.head.classify(&x)
            })
            .collect()
    }
}

/// Full model paired with its frozen memory.
pub struct MemoryScorer<'a> {
    pub model: &'a FullModel,
    pub memory: &'a PrototypeMemory,
}

impl WindowScorer for MemoryScorer<'_> {
    fn score_windows(&self, frames: &Matrix, windows: &[(usize, usize)]) -> Result<Vec<Matrix>> {
        let feats = self.model.encoder.frame_features(frames)?;
        windows
            .iter()
            .map(|&(s, e)| {
                let x = feats.slice_rows(s, e).pool_rows(self.model.encoder.downsample)?;
                let trace = self.model.forward_from_features(&x, &self.memory.matrix)?;
                Ok(trace.logits.sigmoid())
            })
            .collect()
    }
}

pub fn score_windows(
    stream: &NewsStream,
    scorer: &impl WindowScorer,
    cfg: &ExtractionConfig,
) -> Result<Vec<WindowScore>> {
    let windows = cfg.windows(stream.len());
    let probs = scorer.score_windows(&stream.frames, &windows)?;
    Ok(windows
        .into_iter()
        .zip(probs)
        .map(|((start, end), probs)| WindowScore { start, end, probs })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub class: usize,
    pub stream_id: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub frames: Matrix,
}

/// Highest-scoring window for `class`; ties go to the earliest start, then
/// the shortest window. `None` when the class is not named in the stream's
/// subtitles or there are no windows.
pub fn extract_best_window(
    stream: &NewsStream,
    vocab: &GlossVocabulary,
    class: usize,
    windows: &[WindowScore],
) -> Option<Candidate> {
    if !vocab.matched_classes(&stream.tokens).contains(&class) {
        return None;
    }
    let mut best: Option<&WindowScore> = None;
    for w in windows {
        let score = w.probs.get(0, class);
        let better = match best {
            None => true,
            Some(b) => {
                let bs = b.probs.get(0, class);
                score > bs
                    || (score == bs
                        && (w.start, w.end - w.start) < (b.start, b.end - b.start))
            }
        };
        if better {
            best = Some(w);
        }
    }
    best.map(|w| Candidate {
        class,
        stream_id: stream.id.clone(),
        start: w.start,
        end: w.end,
        score: w.probs.get(0, class),
        frames: stream.frames.slice_rows(w.start, w.end),
    })
}

/// Accepted candidates grouped by class; within a class, in stream order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CandidateSet {
    pub per_class: Vec<Vec<Candidate>>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.per_class.iter().flatten()
    }

    /// `class, stream, start, end, score` rows sorted by class then stream.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("class\tstream\tstart\tend\tscore\n");
        for c in self.iter() {
            writeln!(out, "{}\t{}\t{}\t{}\t{:?}", c.class, c.stream_id, c.start, c.end, c.score)
                .expect("write to string");
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_tsv())
    }

    /// Reads a candidate dump back, re-cutting each window from its stream.
    pub fn parse_tsv(path: &Path, text: &str, streams: &[NewsStream], classes: usize) -> Result<Self> {
        let mut per_class = vec![Vec::new(); classes];
        for (i, line) in text.lines().enumerate().skip(1) {
            let line_no = i + 1;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(path, line_no, format!("expected 5 fields, got {}", f.len())));
            }
            let num = |s: &str, what: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(path, line_no, format!("bad {what} {s:?}")))
            };
            let class = num(f[0], "class")?;
            let (start, end) = (num(f[2], "start")?, num(f[3], "end")?);
            let score: f64 = f[4]
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("bad score {:?}", f[4])))?;
            let stream = streams
                .iter()
                .find(|s| s.id == f[1])
                .ok_or_else(|| Error::parse(path, line_no, format!("unknown stream {:?}", f[1])))?;
            if class >= classes || start >= end || end > stream.len() {
                return Err(Error::parse(path, line_no, "candidate outside its stream or class range"));
            }
            per_class[class].push(Candidate {
                class,
                stream_id: stream.id.clone(),
                start,
                end,
                score,
                frames: stream.frames.slice_rows(start, end),
            });
        }
        Ok(CandidateSet { per_class })
    }

    pub fn load(path: &Path, streams: &[NewsStream], classes: usize) -> Result<Self> {
        Self::parse_tsv(path, &read_text(path)?, streams, classes)
    }
}

/// Keeps candidates scoring strictly above `epsilon`, grouped by class.
pub fn filter_by_threshold(candidates: Vec<Candidate>, classes: usize, epsilon: f64) -> CandidateSet {
    let mut per_class = vec![Vec::new(); classes];
    for c in candidates {
        if c.score > epsilon {
            per_class[c.class].push(c);
        }
    }
    for list in &mut per_class {
        list.sort_by(|a, b| a.stream_id.cmp(&b.stream_id));
    }
    CandidateSet { per_class }
}

/// Best window per (stream, subtitle-matched class), before thresholding.
pub fn best_windows<'s>(
    streams: impl IntoIterator<Item = &'s NewsStream>,
    vocab: &GlossVocabulary,
    scorer: &impl WindowScorer,
    cfg: &ExtractionConfig,
) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for stream in streams {
        let matched = vocab.matched_classes(&stream.tokens);
        if matched.is_empty() {
            continue;
        }
        let scored = score_windows(stream, scorer, cfg)?;
        out.extend(
            matched
                .into_iter()
                .filter_map(|c| extract_best_window(stream, vocab, c, &scored)),
        );
    }
    Ok(out)
}

pub fn extract<'s>(
    streams: impl IntoIterator<Item = &'s NewsStream>,
    vocab: &GlossVocabulary,
    scorer: &impl WindowScorer,
    cfg: &ExtractionConfig,
) -> Result<CandidateSet> {
    let best = best_windows(streams, vocab, scorer, cfg)?;
    Ok(filter_by_threshold(best, vocab.len(), cfg.epsilon))
}
