//! Independent reference implementations used to check the main code:
//! a literal loop-based evaluator of the recognizer, a central-difference
//! gradient checker and a threshold-enumeration AP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Graph;
use crate::backbone::{EncoderParams, HeadParams};
use crate::error::Result;
use crate::evaluation::{interval_tiou, StreamSpan};
use crate::model::{AttentionParams, FullModel};
use crate::tensor::Matrix;

type Rows = Vec<Vec<f64>>;

fn rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mm(a: &Rows, b: &Rows) -> Rows {
    let n = b[0].len();
    a.iter()
        .map(|ar| {
            (0..n)
                .map(|j| ar.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

fn tr(a: &Rows) -> Rows {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn plus(a: &Rows, b: &Rows) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn softmax(a: &Rows) -> Rows {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn to_matrix(a: &Rows) -> Matrix {
    Matrix::from_rows(a)
}

/// Every intermediate of one recognizer pass, computed with plain nested
/// loops and no shared kernels.
#[derive(Clone, Debug)]
pub struct NaiveTrace {
    pub x: Matrix,
    pub r: Matrix,
    pub u: Matrix,
    pub z: Matrix,
    pub p: Matrix,
    pub a: Matrix,
    pub v: Matrix,
    pub logits: Matrix,
}

pub fn naive_encode(enc: &EncoderParams, frames: &Matrix) -> Matrix {
    let h: Rows = mm(&rows(frames), &rows(&enc.weight))
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(enc.bias.row(0))
                .map(|(v, b)| (v + b).tanh())
                .collect()
        })
        .collect();
    let rho = enc.downsample;
    let pooled: Rows = h
        .chunks(rho)
        .map(|win| {
            (0..win[0].len())
                .map(|c| win.iter().map(|r| r[c]).sum::<f64>() / win.len() as f64)
                .collect()
        })
        .collect();
    to_matrix(&pooled)
}

pub fn naive_forward_features(
    att: &AttentionParams,
    head: &HeadParams,
    x: &Matrix,
    memory: &Matrix,
) -> NaiveTrace {
    let xr = rows(x);
    let m = rows(memory);
    let r = softmax(&mm(&mm(&xr, &rows(&att.w_x)), &tr(&mm(&m, &rows(&att.w_m)))));
    let u = mm(&mm(&r, &m), &plus(&rows(&att.w_m), &rows(&att.w_delta)));
    let z = plus(&mm(&u, &rows(&att.w_u)), &xr);
    let p: Vec<f64> = (0..z[0].len())
        .map(|c| z.iter().map(|row| row[c]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let p = vec![p];
    let s = mm(&mm(&p, &rows(&att.w_p)), &tr(&mm(&xr, &rows(&att.w_q))));
    let a = softmax(&s);
    let v = mm(&a, &mm(&mm(&xr, &rows(&att.w_v)), &rows(&att.w_o)));
    let fused = plus(&p, &v);
    let logits = plus(&mm(&fused, &rows(&head.weight)), &rows(&head.bias));
    NaiveTrace {
        x: x.clone(),
        r: to_matrix(&r),
        u: to_matrix(&u),
        z: to_matrix(&z),
        p: to_matrix(&p),
        a: to_matrix(&a),
        v: to_matrix(&v),
        logits: to_matrix(&logits),
    }
}

pub fn naive_forward(model: &FullModel, frames: &Matrix, memory: &Matrix) -> NaiveTrace {
    let x = naive_encode(&model.encoder, frames);
    naive_forward_features(&model.attention, &model.head, &x, memory)
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// A randomly sized recognizer with every weight (including `W_δ`) drawn
/// at random, a memory, a clip and binary targets.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub model: FullModel,
    pub memory: Matrix,
    pub frames: Matrix,
    pub targets: Matrix,
}

impl RandomInstance {
    /// Encoded length t ∈ [2,16], classes K ∈ [2,10], features d ∈ [4,16].
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(2..=16);
        let k = rng.random_range(2..=10);
        let d = rng.random_range(4..=16);
        let d_in = rng.random_range(2..=8);
        let rho = rng.random_range(1..=3);
        let t_raw = (t - 1) * rho + rng.random_range(1..=rho);
        let corr = rng.random_range(1..=d);
        let attn = rng.random_range(1..d);
        let w = |rng: &mut ChaCha8Rng, r: usize, c: usize| gaussian(rng, r, c, 1.0 / (r as f64).sqrt());
        let encoder = EncoderParams {
            weight: w(&mut rng, d_in, d),
            bias: gaussian(&mut rng, 1, d, 0.1),
            downsample: rho,
        };
        let attention = AttentionParams {
            w_x: w(&mut rng, d, corr),
            w_m: w(&mut rng, d, corr),
            w_delta: w(&mut rng, d, corr),
            w_u: w(&mut rng, corr, d),
            w_p: w(&mut rng, d, attn),
            w_q: w(&mut rng, d, attn),
            w_v: w(&mut rng, d, attn),
            w_o: w(&mut rng, attn, d),
        };
        let head = HeadParams {
            weight: w(&mut rng, d, k),
            bias: gaussian(&mut rng, 1, k, 0.1),
        };
        let memory = gaussian(&mut rng, k, d, 0.5);
        let frames = gaussian(&mut rng, t_raw, d_in, 1.0);
        let targets = Matrix::from_fn(1, k, |_, _| if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        RandomInstance {
            model: FullModel {
                encoder,
                attention,
                head,
            },
            memory,
            frames,
            targets,
        }
    }

    pub fn loss(&self) -> Result<f64> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, &self.memory)?;
        let f = g.leaf(&self.frames);
        let out = vars.forward(&mut g, f)?;
        let loss = g.bce_with_logits(out.logits, &self.targets)?;
        Ok(g.value(loss).get(0, 0))
    }

    /// Analytic gradients in `FullModel::params_mut(true)` order.
    pub fn gradients(&self) -> Result<Vec<Matrix>> {
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, &self.memory)?;
        let f = g.leaf(&self.frames);
        let out = vars.forward(&mut g, f)?;
        let loss = g.bce_with_logits(out.logits, &self.targets)?;
        let grads = g.backward(loss)?;
        Ok(vars.trainable(true).iter().map(|&v| grads.get(v, &g)).collect())
    }

    /// Per-column argmax rows of Z, which fix the max-pool branch.
    fn pool_pattern(&self) -> Result<Vec<usize>> {
        let z = self.model.forward_full(&self.frames, &self.memory)?.z;
        Ok(z.max_rows()?.1)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    /// Entries skipped because a ±h step switched the max-pool branch.
    pub kinks: usize,
    pub max_rel_err: f64,
    /// `(parameter index, entry, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with a floor on the magnitude, so entries whose true
/// gradient is ~0 are judged on absolute error instead.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares every trainable entry against a central difference with step
/// `h`.
pub fn gradient_check(inst: &RandomInstance, h: f64) -> Result<GradCheck> {
    let analytic = inst.gradients()?;
    let base_pattern = inst.pool_pattern()?;
    let mut probe = inst.clone();
    let mut out = GradCheck::default();
    for (pi, grad) in analytic.iter().enumerate() {
        for e in 0..grad.data().len() {
            let orig = probe.model.params_mut(true)[pi].data()[e];
            probe.model.params_mut(true)[pi].data_mut()[e] = orig + h;
            let plus = probe.loss()?;
            let plus_pattern = probe.pool_pattern()?;
            probe.model.params_mut(true)[pi].data_mut()[e] = orig - h;
            let minus = probe.loss()?;
            let minus_pattern = probe.pool_pattern()?;
            probe.model.params_mut(true)[pi].data_mut()[e] = orig;
            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                out.kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(grad.data()[e], numeric);
            out.entries += 1;
            if err > out.max_rel_err || out.worst.is_none() {
                out.max_rel_err = out.max_rel_err.max(err);
                out.worst = Some((pi, e, grad.data()[e], numeric));
            }
        }
    }
    Ok(out)
}

/// AP by brute force: for every cut-off score the prefix is matched from
/// scratch, precision and recall are recorded, and the all-point
/// interpolated area is integrated over the distinct recall levels.
/// Assumes distinct detection scores.
pub fn ap_oracle(detections: &[StreamSpan], truth: &[StreamSpan], threshold: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut scores: Vec<f64> = detections.iter().map(|d| d.span.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let mut curve = Vec::new();
    for &cut in &scores {
        let mut kept: Vec<&StreamSpan> = detections.iter().filter(|d| d.span.score >= cut).collect();
        kept.sort_by(|a, b| b.span.score.total_cmp(&a.span.score));
        let mut used = vec![false; truth.len()];
        let mut tp = 0;
        for d in &kept {
            let best = truth
                .iter()
                .enumerate()
                .filter(|(g, t)| !used[*g] && t.stream == d.stream)
                .map(|(g, t)| (g, interval_tiou((t.span.start, t.span.end), (d.span.start, d.span.end))))
                .fold(None::<(usize, f64)>, |acc, (g, iou)| match acc {
                    Some((_, b)) if b >= iou => acc,
                    _ => Some((g, iou)),
                });
            if let Some((g, iou)) = best {
                if iou >= threshold {
                    used[g] = true;
                    tp += 1;
                }
            }
        }
        curve.push((tp as f64 / truth.len() as f64, tp as f64 / kept.len() as f64));
    }
    let mut levels: Vec<f64> = curve.iter().map(|c| c.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = curve
            .iter()
            .filter(|c| c.0 >= r)
            .map(|c| c.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{average_precision, Span};

    #[test]
    fn naive_matches_engine_on_one_instance() {
        let inst = RandomInstance::sample(3);
        let fast = inst.model.forward_full(&inst.frames, &inst.memory).unwrap();
        let slow = naive_forward(&inst.model, &inst.frames, &inst.memory);
        assert!(fast.logits.max_abs_diff(&slow.logits) < 1e-10);
        assert!(fast.a.max_abs_diff(&slow.a) < 1e-10);
    }

    #[test]
    fn gradient_check_passes_on_one_instance() {
        let out = gradient_check(&RandomInstance::sample(11), 1e-5).unwrap();
        assert!(out.entries > 0);
        assert!(out.max_rel_err <= 1e-4, "{out:?}");
    }

    #[test]
    fn oracle_agrees_with_ap_examples() {
        let gt = [StreamSpan {
            stream: 0,
            span: Span::new(0, 0, 10, 1.0),
        }];
        let dets = [
            StreamSpan {
                stream: 0,
                span: Span::new(0, 0, 10, 0.8),
            },
            StreamSpan {
                stream: 0,
                span: Span::new(0, 20, 30, 0.9),
            },
        ];
        assert_eq!(ap_oracle(&dets, &gt, 0.5), 0.5);
        assert_eq!(average_precision(&dets, &gt, 0.5), 0.5);
    }
}
