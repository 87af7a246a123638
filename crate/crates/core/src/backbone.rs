//! Trainable stand-in for the video backbone: a per-frame affine + tanh
//! encoder with temporal mean pooling, and a pooled sigmoid classification
//! head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `uniform(-1/√fan_in, 1/√fan_in)` initialization.
pub fn init_uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `d_in × d`
    pub weight: Matrix,
    /// `1 × d`
    pub bias: Matrix,
    /// Temporal pooling factor ρ ≥ 1.
    pub downsample: usize,
}

impl EncoderParams {
    pub fn init(d_in: usize, d: usize, downsample: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(downsample >= 1, "downsample factor must be >= 1");
        EncoderParams {
            weight: init_uniform(d_in, d, rng),
            bias: Matrix::zeros(1, d),
            downsample,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Per-frame features `tanh(x·W + b)` before pooling. Rows are
    /// independent, so slicing this matrix and pooling gives exactly
    /// [`encode`](Self::encode) of the sliced frames.
    pub fn frame_features(&self, frames: &Matrix) -> Result<Matrix> {
        if frames.rows() == 0 {
            return Err(Error::EmptySequence("encode"));
        }
        Ok(frames.matmul(&self.weight)?.add_row(&self.bias)?.tanh())
    }

    /// `t_raw × d_in` frames to a `⌈t_raw/ρ⌉ × d` feature sequence.
    pub fn encode(&self, frames: &Matrix) -> Result<Matrix> {
        self.frame_features(frames)?.pool_rows(self.downsample)
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> EncoderVars {
        EncoderVars {
            weight: g.leaf(&self.weight),
            bias: g.leaf(&self.bias),
            downsample: self.downsample,
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn write_sections(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push(format!("{prefix}.weight"), self.weight.clone());
        ckpt.push(format!("{prefix}.bias"), self.bias.clone());
        ckpt.push(
            format!("{prefix}.downsample"),
            Matrix::filled(1, 1, self.downsample as f64),
        );
    }

    pub fn read_sections(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let weight = ckpt.get(&format!("{prefix}.weight"))?.clone();
        let bias = ckpt.get_shaped(&format!("{prefix}.bias"), (1, weight.cols()))?.clone();
        let rho = ckpt.get_shaped(&format!("{prefix}.downsample"), (1, 1))?.get(0, 0);
        if !(rho >= 1.0 && rho.fract() == 0.0) {
            return Err(Error::Config(format!("{prefix}.downsample must be a positive integer")));
        }
        Ok(EncoderParams {
            weight,
            bias,
            downsample: rho as usize,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub weight: Var,
    pub bias: Var,
    pub downsample: usize,
}

impl EncoderVars {
    pub fn encode(&self, g: &mut Graph<'_>, frames: Var) -> Result<Var> {
        if g.value(frames).rows() == 0 {
            return Err(Error::EmptySequence("encode"));
        }
        let h = g.matmul(frames, self.weight)?;
        let h = g.add_row(h, self.bias)?;
        let h = g.tanh(h);
        g.pool_rows(h, self.downsample)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// `d × K`
    pub weight: Matrix,
    /// `1 × K`
    pub bias: Matrix,
}

impl HeadParams {
    pub fn init(d: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        HeadParams {
            weight: init_uniform(d, classes, rng),
            bias: Matrix::zeros(1, classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.cols()
    }

    /// Affine map of a pooled `1 × d` feature to `1 × K` logits.
    pub fn logits(&self, pooled: &Matrix) -> Result<Matrix> {
        pooled.matmul(&self.weight)?.add_row(&self.bias)
    }

    /// Temporal mean pool → affine → sigmoid. Entries are independent
    /// per-class probabilities, not a distribution.
    pub fn classify(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.logits(&x.mean_rows()?)?.sigmoid())
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> HeadVars {
        HeadVars {
            weight: g.leaf(&self.weight),
            bias: g.leaf(&self.bias),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn write_sections(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.push(format!("{prefix}.weight"), self.weight.clone());
        ckpt.push(format!("{prefix}.bias"), self.bias.clone());
    }

    pub fn read_sections(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let weight = ckpt.get(&format!("{prefix}.weight"))?.clone();
        let bias = ckpt.get_shaped(&format!("{prefix}.bias"), (1, weight.cols()))?.clone();
        Ok(HeadParams { weight, bias })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub weight: Var,
    pub bias: Var,
}

impl HeadVars {
    pub fn logits(&self, g: &mut Graph<'_>, pooled: Var) -> Result<Var> {
        let z = g.matmul(pooled, self.weight)?;
        g.add_row(z, self.bias)
    }

    pub fn vars(&self) -> Vec<Var> {
        vec![self.weight, self.bias]
    }
}

/// Encoder + pooled head; the base recognizer and its jointly trained
/// counterpart share this architecture with independent weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl Classifier {
    pub fn init(d_in: usize, d: usize, classes: usize, downsample: usize, rng: &mut ChaCha8Rng) -> Self {
        Classifier {
            encoder: EncoderParams::init(d_in, d, downsample, rng),
            head: HeadParams::init(d, classes, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn logits(&self, frames: &Matrix) -> Result<Matrix> {
        self.head.logits(&self.encoder.encode(frames)?.mean_rows()?)
    }

    pub fn probabilities(&self, frames: &Matrix) -> Result<Matrix> {
        self.head.classify(&self.encoder.encode(frames)?)
    }

    /// Temporally pooled `1 × d` clip embedding.
    pub fn embedding(&self, frames: &Matrix) -> Result<Matrix> {
        self.encoder.encode(frames)?.mean_rows()
    }

    /// Builds the logits node for one clip.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, frames: &'a Matrix) -> Result<(Var, Vec<Var>)> {
        let enc = self.encoder.bind(g);
        let head = self.head.bind(g);
        let x = g.leaf(frames);
        let feats = enc.encode(g, x)?;
        let pooled = g.mean_rows(feats)?;
        let logits = head.logits(g, pooled)?;
        let mut vars = enc.vars();
        vars.extend(head.vars());
        Ok((logits, vars))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.encoder.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        self.encoder.write_sections("encoder", &mut ckpt);
        self.head.write_sections("head", &mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let encoder = EncoderParams::read_sections("encoder", ckpt)?;
        let head = HeadParams::read_sections("head", ckpt)?;
        if head.weight.rows() != encoder.feature_dim() {
            return Err(Error::Shape {
                op: "checkpoint head",
                lhs: encoder.weight.shape(),
                rhs: head.weight.shape(),
            });
        }
        Ok(Classifier { encoder, head })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn encode_shapes() {
        let enc = EncoderParams::init(3, 5, 4, &mut rng());
        assert_eq!(enc.encode(&Matrix::zeros(8, 3)).unwrap().shape(), (2, 5));
        assert_eq!(enc.encode(&Matrix::zeros(9, 3)).unwrap().shape(), (3, 5));
        assert!(enc.encode(&Matrix::zeros(0, 3)).is_err());
        assert!(matches!(enc.encode(&Matrix::zeros(4, 2)), Err(Error::Shape { .. })));
    }

    #[test]
    fn constant_frames_give_identical_rows() {
        let enc = EncoderParams::init(3, 5, 4, &mut rng());
        let frames = Matrix::from_fn(10, 3, |_, c| c as f64 * 0.3 - 0.2);
        let x = enc.encode(&frames).unwrap();
        for r in 1..x.rows() {
            assert_eq!(x.row(r), x.row(0));
        }
    }

    #[test]
    fn permutation_inside_pool_window_is_invisible() {
        let enc = EncoderParams::init(3, 5, 4, &mut rng());
        let frames = Matrix::from_fn(8, 3, |r, c| ((r * 3 + c) as f64).sin());
        let swapped = frames.select_rows(&[3, 1, 2, 0, 4, 5, 6, 7]);
        let a = enc.encode(&frames).unwrap();
        let b = enc.encode(&swapped).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn zero_head_gives_half() {
        let head = HeadParams {
            weight: Matrix::zeros(4, 3),
            bias: Matrix::zeros(1, 3),
        };
        let p = head.classify(&Matrix::filled(2, 4, 0.7)).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0.5]);
        let single = HeadParams {
            weight: Matrix::zeros(4, 1),
            bias: Matrix::zeros(1, 1),
        };
        assert_eq!(single.classify(&Matrix::filled(1, 4, 3.0)).unwrap().data(), &[0.5]);
    }

    #[test]
    fn classify_matches_hand_composition() {
        let mut r = rng();
        let head = HeadParams::init(4, 3, &mut r);
        let head = HeadParams {
            bias: Matrix::from_rows(&[[0.1, -0.2, 0.3]]),
            ..head
        };
        let x = Matrix::from_fn(5, 4, |i, j| ((i + 2 * j) as f64).cos());
        let mut expected = Vec::new();
        for k in 0..3 {
            let mut z = head.bias.get(0, k);
            for j in 0..4 {
                let mean: f64 = (0..5).map(|i| x.get(i, j)).sum::<f64>() / 5.0;
                z += mean * head.weight.get(j, k);
            }
            expected.push(1.0 / (1.0 + (-z).exp()));
        }
        let got = head.classify(&x).unwrap();
        assert!(got.max_abs_diff(&Matrix::row_vector(&expected)) < 1e-12);
        let shuffled = x.select_rows(&[4, 2, 0, 1, 3]);
        assert!(head.classify(&shuffled).unwrap().max_abs_diff(&got) < 1e-15);
        assert!(got.data().iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn graph_forward_matches_plain_path_bitwise() {
        let clf = Classifier::init(3, 6, 4, 4, &mut rng());
        let frames = Matrix::from_fn(13, 3, |r, c| ((r * 5 + c) as f64 * 0.37).sin());
        let mut g = Graph::new();
        let (logits, _) = clf.forward(&mut g, &frames).unwrap();
        assert_eq!(g.value(logits), &clf.logits(&frames).unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let clf = Classifier::init(3, 6, 4, 2, &mut rng());
        let back = Classifier::from_checkpoint(&clf.to_checkpoint()).unwrap();
        assert_eq!(back, clf);
    }
}
