use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{ExtractionConfig, WindowScorer};
use crate::model::ForwardTrace;
use crate::tensor::Matrix;

/// A scored half-open frame interval `[start, end)` for one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span {
    pub class: usize,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl Span {
    pub fn new(class: usize, start: usize, end: usize, score: f64) -> Self {
        debug_assert!(start < end, "empty span [{start}, {end})");
        Span {
            class,
            start,
            end,
            score,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Temporal IoU of two half-open intervals, counted in frames.
pub fn interval_tiou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn tiou(a: &Span, b: &Span) -> f64 {
    interval_tiou((a.start, a.end), (b.start, b.end))
}

/// Descending score; equal scores keep earlier, then shorter spans first.
fn by_score(a: &Span, b: &Span) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.cmp(&b.start))
        .then(a.end.cmp(&b.end))
        .then(a.class.cmp(&b.class))
}

/// Greedy per-class suppression: a span is dropped when it overlaps an
/// already kept span of the same class with tIoU ≥ `threshold`.
pub fn temporal_nms(mut spans: Vec<Span>, threshold: f64) -> Vec<Span> {
    spans.sort_by(by_score);
    let mut kept: Vec<Span> = Vec::new();
    for s in spans {
        if kept
            .iter()
            .all(|k| k.class != s.class || tiou(k, &s) < threshold)
        {
            kept.push(s);
        }
    }
    kept
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizeConfig {
    pub min_window: usize,
    pub max_window: usize,
    pub stride: usize,
    /// Detections need a probability strictly above this.
    pub gate: f64,
    pub nms: bool,
    pub nms_tiou: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            min_window: 9,
            max_window: 16,
            stride: 1,
            gate: 0.2,
            nms: true,
            nms_tiou: 0.5,
        }
    }
}

impl LocalizeConfig {
    fn windows(&self) -> ExtractionConfig {
        ExtractionConfig {
            min_window: self.min_window,
            max_window: self.max_window,
            stride: self.stride,
            epsilon: self.gate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.windows().validate()?;
        if !(0.0..=1.0).contains(&self.nms_tiou) {
            return Err(Error::Config(format!("nms_tiou {} outside [0, 1]", self.nms_tiou)));
        }
        Ok(())
    }
}

/// Gates raw per-window probabilities and applies optional NMS; output is
/// sorted by descending score.
pub fn detections_from_scores(windows: &[(usize, usize)], probs: &[Matrix], cfg: &LocalizeConfig) -> Vec<Span> {
    let mut spans = Vec::new();
    for (&(start, end), p) in windows.iter().zip(probs) {
        for (class, &score) in p.data().iter().enumerate() {
            if score > cfg.gate {
                spans.push(Span::new(class, start, end, score));
            }
        }
    }
    if cfg.nms {
        temporal_nms(spans, cfg.nms_tiou)
    } else {
        spans.sort_by(by_score);
        spans
    }
}

/// Sliding-window localization over one stream.
pub fn localize(frames: &Matrix, scorer: &impl WindowScorer, cfg: &LocalizeConfig) -> Result<Vec<Span>> {
    cfg.validate()?;
    let windows = cfg.windows().windows(frames.rows());
    let probs = scorer.score_windows(frames, &windows)?;
    Ok(detections_from_scores(&windows, &probs, cfg))
}

/// A span tagged with the stream it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamSpan {
    pub stream: usize,
    pub span: Span,
}

pub const TIOU_THRESHOLDS: [f64; 4] = [0.1, 0.3, 0.5, 0.7];

/// All-point interpolated AP of one class's detections against its ground
/// truth. Detections are matched in descending score order to the unmatched
/// ground-truth span of the same stream with the highest tIoU, provided it
/// reaches `threshold`.
pub fn average_precision(detections: &[StreamSpan], truth: &[StreamSpan], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut dets: Vec<&StreamSpan> = detections.iter().collect();
    dets.sort_by(|a, b| by_score(&a.span, &b.span).then(a.stream.cmp(&b.stream)));
    let mut matched = vec![false; truth.len()];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for (n, d) in dets.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, t) in truth.iter().enumerate() {
            if matched[g] || t.stream != d.stream {
                continue;
            }
            let iou = tiou(&t.span, &d.span);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou >= threshold {
                matched[g] = true;
                tp += 1;
            }
        }
        points.push((tp as f64 / truth.len() as f64, tp as f64 / (n + 1) as f64));
    }
    // Precision envelope from the right, then integrate over recall steps.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut envelope = vec![0.0; points.len()];
    let mut running: f64 = 0.0;
    for i in (0..points.len()).rev() {
        running = running.max(points[i].1);
        envelope[i] = running;
    }
    for (i, &(recall, _)) in points.iter().enumerate() {
        if recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = recall;
        }
    }
    ap
}

/// Mean AP over classes with at least one ground-truth span, one value per
/// threshold.
pub fn map_at_tiou(detections: &[StreamSpan], truth: &[StreamSpan], thresholds: &[f64]) -> Vec<f64> {
    let classes = truth
        .iter()
        .chain(detections)
        .map(|s| s.span.class + 1)
        .max()
        .unwrap_or(0);
    let mut dets_by = vec![Vec::new(); classes];
    let mut truth_by = vec![Vec::new(); classes];
    for d in detections {
        dets_by[d.span.class].push(*d);
    }
    for t in truth {
        truth_by[t.span.class].push(*t);
    }
    thresholds
        .iter()
        .map(|&thr| {
            let aps: Vec<f64> = (0..classes)
                .filter(|&c| !truth_by[c].is_empty())
                .map(|c| average_precision(&dets_by[c], &truth_by[c], thr))
                .collect();
            if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            }
        })
        .collect()
}

/// `stream, class, start, end, score` rows.
pub fn detections_tsv(detections: &[StreamSpan], stream_ids: &[String]) -> String {
    let mut out = String::from("stream\tclass\tstart\tend\tscore\n");
    for d in detections {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:?}",
            stream_ids[d.stream], d.span.class, d.span.start, d.span.end, d.span.score
        )
        .expect("write to string");
    }
    out
}

/// The most attended temporal position and the raw frames it pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignSignature {
    pub index: usize,
    pub raw_start: usize,
    pub raw_end: usize,
}

pub fn sign_signature(trace: &ForwardTrace, downsample: usize) -> SignSignature {
    let index = trace.a.row_argmax(0);
    SignSignature {
        index,
        raw_start: index * downsample,
        raw_end: (index + 1) * downsample,
    }
}

/// Two annotators' `[start, end)` intervals for the same sign.
pub type AnnotationPair = ((usize, usize), (usize, usize));

#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    pub kept: Vec<AnnotationPair>,
    /// Mean tIoU over all pairs before filtering; `None` without pairs.
    pub mean_tiou: Option<f64>,
}

/// Keeps annotation pairs whose tIoU reaches `min_tiou`.
pub fn agreement_filter(pairs: &[AnnotationPair], min_tiou: f64) -> Agreement {
    let ious: Vec<f64> = pairs.iter().map(|&(a, b)| interval_tiou(a, b)).collect();
    let mean_tiou = (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64);
    let kept = pairs
        .iter()
        .zip(&ious)
        .filter(|(_, &iou)| iou >= min_tiou)
        .map(|(&p, _)| p)
        .collect();
    Agreement { kept, mean_tiou }
}
