//! Memory-augmented recognizer.
//!
//! Given clip features `X` (t×d) from the recognizer's encoder and a frozen
//! prototype memory `M` (K×d) built with a different encoder:
//!
//! ```text
//! r     = softmax_rows(X·W_X · (M·W_M)ᵀ)          t×K
//! U     = r · M · (W_M + W_δ)                      t×d′
//! Z     = U·W_u + X                                t×d
//! P     = maxpool_t(Z)                             1×d
//! S     = P·W_P · (X·W_Q)ᵀ                         1×t
//! A     = softmax(S)                               1×t
//! V     = A · (X·W_V·W_O)                          1×d
//! logit = (P + V)·W_cls + b_cls                    1×K
//! ```

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::backbone::{init_uniform, Classifier, EncoderParams, EncoderVars, HeadParams, HeadVars};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `d × d′`
    pub w_x: Matrix,
    /// `d × d′`
    pub w_m: Matrix,
    /// `d × d′`, perturbation compensating for alignment errors.
    pub w_delta: Matrix,
    /// `d′ × d`
    pub w_u: Matrix,
    /// `d × d″`
    pub w_p: Matrix,
    /// `d × d″`
    pub w_q: Matrix,
    /// `d × d″`
    pub w_v: Matrix,
    /// `d″ × d`
    pub w_o: Matrix,
}

pub const ATTENTION_NAMES: [&str; 8] = ["w_x", "w_m", "w_delta", "w_u", "w_p", "w_q", "w_v", "w_o"];

impl AttentionParams {
    /// Uniform fan-in init for every projection except `W_δ`, which starts
    /// at zero.
    pub fn init(d: usize, corr_dim: usize, attn_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if attn_dim == 0 || attn_dim >= d || corr_dim == 0 {
            return Err(Error::Config(format!(
                "attention dims must satisfy 0 < d'' < d and d' > 0 (d={d}, d'={corr_dim}, d''={attn_dim})"
            )));
        }
        Ok(AttentionParams {
            w_x: init_uniform(d, corr_dim, rng),
            w_m: init_uniform(d, corr_dim, rng),
            w_delta: Matrix::zeros(d, corr_dim),
            w_u: init_uniform(corr_dim, d, rng),
            w_p: init_uniform(d, attn_dim, rng),
            w_q: init_uniform(d, attn_dim, rng),
            w_v: init_uniform(d, attn_dim, rng),
            w_o: init_uniform(attn_dim, d, rng),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.w_x.rows()
    }

    fn all(&self) -> [&Matrix; 8] {
        [
            &self.w_x,
            &self.w_m,
            &self.w_delta,
            &self.w_u,
            &self.w_p,
            &self.w_q,
            &self.w_v,
            &self.w_o,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_x,
            &mut self.w_m,
            &mut self.w_delta,
            &mut self.w_u,
            &mut self.w_p,
            &mut self.w_q,
            &mut self.w_v,
            &mut self.w_o,
        ]
    }

    pub fn bind<'a>(&'a self, g: &mut Graph<'a>) -> AttentionVars {
        AttentionVars {
            w_x: g.leaf(&self.w_x),
            w_m: g.leaf(&self.w_m),
            w_delta: g.leaf(&self.w_delta),
            w_u: g.leaf(&self.w_u),
            w_p: g.leaf(&self.w_p),
            w_q: g.leaf(&self.w_q),
            w_v: g.leaf(&self.w_v),
            w_o: g.leaf(&self.w_o),
        }
    }

    pub fn write_sections(&self, prefix: &str, ckpt: &mut Checkpoint) {
        for (name, m) in ATTENTION_NAMES.iter().zip(self.all()) {
            ckpt.push(format!("{prefix}.{name}"), m.clone());
        }
    }

    pub fn read_sections(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let get = |n: &str| ckpt.get(&format!("{prefix}.{n}")).cloned();
        let p = AttentionParams {
            w_x: get("w_x")?,
            w_m: get("w_m")?,
            w_delta: get("w_delta")?,
            w_u: get("w_u")?,
            w_p: get("w_p")?,
            w_q: get("w_q")?,
            w_v: get("w_v")?,
            w_o: get("w_o")?,
        };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.w_x.rows();
        let d1 = self.w_x.cols();
        let d2 = self.w_p.cols();
        let expect = [
            (&self.w_m, (d, d1)),
            (&self.w_delta, (d, d1)),
            (&self.w_u, (d1, d)),
            (&self.w_q, (d, d2)),
            (&self.w_v, (d, d2)),
            (&self.w_o, (d2, d)),
        ];
        for (m, shape) in expect {
            if m.shape() != shape {
                return Err(Error::Shape {
                    op: "attention params",
                    lhs: m.shape(),
                    rhs: shape,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_x: Var,
    pub w_m: Var,
    pub w_delta: Var,
    pub w_u: Var,
    pub w_p: Var,
    pub w_q: Var,
    pub w_v: Var,
    pub w_o: Var,
}

impl AttentionVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![
            self.w_x,
            self.w_m,
            self.w_delta,
            self.w_u,
            self.w_p,
            self.w_q,
            self.w_v,
            self.w_o,
        ]
    }

    /// `r = softmax_rows(X·W_X·(M·W_M)ᵀ)`
    pub fn correlation(&self, g: &mut Graph<'_>, x: Var, memory: Var) -> Result<Var> {
        let xp = g.matmul(x, self.w_x)?;
        let mp = g.matmul(memory, self.w_m)?;
        let logits = g.matmul_nt(xp, mp)?;
        Ok(g.row_softmax(logits))
    }

    /// `U = r·M·(W_M + W_δ)`
    pub fn reweight_memory(&self, g: &mut Graph<'_>, r: Var, memory: Var) -> Result<Var> {
        let proj = g.add(self.w_m, self.w_delta)?;
        let mixed = g.matmul(r, memory)?;
        g.matmul(mixed, proj)
    }

    /// `Z = U·W_u + X`, `P = maxpool(Z)`
    pub fn descriptor(&self, g: &mut Graph<'_>, u: Var, x: Var) -> Result<(Var, Var)> {
        let lifted = g.matmul(u, self.w_u)?;
        let z = g.add(lifted, x)?;
        let p = g.temporal_maxpool(z)?;
        Ok((z, p))
    }

    /// `S = P·W_P·(X·W_Q)ᵀ`, `A = softmax(S)`
    pub fn temporal_attention(&self, g: &mut Graph<'_>, p: Var, x: Var) -> Result<(Var, Var)> {
        let pp = g.matmul(p, self.w_p)?;
        let xq = g.matmul(x, self.w_q)?;
        let s = g.matmul_nt(pp, xq)?;
        let a = g.row_softmax(s);
        Ok((s, a))
    }

    /// `V = A·(X·W_V·W_O)`
    pub fn attend(&self, g: &mut Graph<'_>, a: Var, x: Var) -> Result<Var> {
        let xv = g.matmul(x, self.w_v)?;
        let xo = g.matmul(xv, self.w_o)?;
        g.matmul(a, xo)
    }
}

/// Every intermediate of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub x: Matrix,
    pub r: Matrix,
    pub u: Matrix,
    pub z: Matrix,
    pub p: Matrix,
    pub s: Matrix,
    pub a: Matrix,
    pub v: Matrix,
    pub fused: Matrix,
    pub logits: Matrix,
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub x: Var,
    pub r: Var,
    pub u: Var,
    pub z: Var,
    pub p: Var,
    pub s: Var,
    pub a: Var,
    pub v: Var,
    pub fused: Var,
    pub logits: Var,
}

impl ForwardVars {
    pub fn trace(&self, g: &Graph<'_>) -> ForwardTrace {
        ForwardTrace {
            x: g.value(self.x).clone(),
            r: g.value(self.r).clone(),
            u: g.value(self.u).clone(),
            z: g.value(self.z).clone(),
            p: g.value(self.p).clone(),
            s: g.value(self.s).clone(),
            a: g.value(self.a).clone(),
            v: g.value(self.v).clone(),
            fused: g.value(self.fused).clone(),
            logits: g.value(self.logits).clone(),
        }
    }
}

/// Encoder, attention block and classification head of the full model.
/// The prototype memory is held outside and passed to every call.
#[derive(Clone, Debug, PartialEq)]
pub struct FullModel {
    pub encoder: EncoderParams,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

#[derive(Clone, Copy, Debug)]
pub struct FullVars {
    pub encoder: EncoderVars,
    pub attention: AttentionVars,
    pub head: HeadVars,
    pub memory: Var,
}

impl FullVars {
    /// Trainable handles in `FullModel::params_mut` order.
    pub fn trainable(&self, include_encoder: bool) -> Vec<Var> {
        let mut v = if include_encoder {
            self.encoder.vars()
        } else {
            Vec::new()
        };
        v.extend(self.attention.vars());
        v.extend(self.head.vars());
        v
    }

    /// Everything after the encoder; `x` is the encoded `t × d` sequence.
    pub fn forward_features(&self, g: &mut Graph<'_>, x: Var) -> Result<ForwardVars> {
        let t = g.value(x).rows();
        if t == 0 {
            return Err(Error::EmptySequence("forward"));
        }
        let att = &self.attention;
        let r = att.correlation(g, x, self.memory)?;
        let u = att.reweight_memory(g, r, self.memory)?;
        let (z, p) = att.descriptor(g, u, x)?;
        let (s, a) = att.temporal_attention(g, p, x)?;
        let v = att.attend(g, a, x)?;
        let fused = g.add(p, v)?;
        let logits = self.head.logits(g, fused)?;
        Ok(ForwardVars {
            x,
            r,
            u,
            z,
            p,
            s,
            a,
            v,
            fused,
            logits,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, frames: Var) -> Result<ForwardVars> {
        let x = self.encoder.encode(g, frames)?;
        self.forward_features(g, x)
    }
}

impl FullModel {
    /// Starts from a trained base classifier: its encoder (and optionally
    /// its head) plus freshly initialized attention weights.
    pub fn from_base(
        base: &Classifier,
        corr_dim: usize,
        attn_dim: usize,
        init_head_from_base: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let d = base.encoder.feature_dim();
        let attention = AttentionParams::init(d, corr_dim, attn_dim, rng)?;
        let head = if init_head_from_base {
            base.head.clone()
        } else {
            HeadParams::init(d, base.num_classes(), rng)
        };
        Ok(FullModel {
            encoder: base.encoder.clone(),
            attention,
            head,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn check_memory(&self, memory: &Matrix) -> Result<()> {
        if memory.rows() != self.num_classes() {
            return Err(Error::ClassCount {
                memory: memory.rows(),
                head: self.num_classes(),
            });
        }
        if memory.cols() != self.attention.feature_dim() {
            return Err(Error::Shape {
                op: "memory",
                lhs: memory.shape(),
                rhs: (self.num_classes(), self.attention.feature_dim()),
            });
        }
        Ok(())
    }

    /// Binds parameters and the (constant) memory into `g`.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a>, memory: &'a Matrix) -> Result<FullVars> {
        self.check_memory(memory)?;
        Ok(FullVars {
            encoder: self.encoder.bind(g),
            attention: self.attention.bind(g),
            head: self.head.bind(g),
            memory: g.leaf(memory),
        })
    }

    /// Full forward pass over raw frames, returning logits and the trace.
    pub fn forward_full(&self, frames: &Matrix, memory: &Matrix) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, memory)?;
        let f = g.leaf(frames);
        Ok(vars.forward(&mut g, f)?.trace(&g))
    }

    /// Forward pass from already-encoded features `x` (t×d).
    pub fn forward_from_features(&self, x: &Matrix, memory: &Matrix) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, memory)?;
        let xv = g.leaf(x);
        Ok(vars.forward_features(&mut g, xv)?.trace(&g))
    }

    pub fn logits(&self, frames: &Matrix, memory: &Matrix) -> Result<Matrix> {
        Ok(self.forward_full(frames, memory)?.logits)
    }

    pub fn probabilities(&self, frames: &Matrix, memory: &Matrix) -> Result<Matrix> {
        Ok(self.logits(frames, memory)?.sigmoid())
    }

    pub fn params_mut(&mut self, include_encoder: bool) -> Vec<&mut Matrix> {
        let mut v = if include_encoder {
            self.encoder.params_mut()
        } else {
            Vec::new()
        };
        v.extend(self.attention.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        self.encoder.write_sections("encoder", &mut ckpt);
        self.attention.write_sections("attention", &mut ckpt);
        self.head.write_sections("head", &mut ckpt);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let encoder = EncoderParams::read_sections("encoder", ckpt)?;
        let attention = AttentionParams::read_sections("attention", ckpt)?;
        let head = HeadParams::read_sections("head", ckpt)?;
        if attention.feature_dim() != encoder.feature_dim() || head.weight.rows() != encoder.feature_dim() {
            return Err(Error::Shape {
                op: "checkpoint full model",
                lhs: encoder.weight.shape(),
                rhs: attention.w_x.shape(),
            });
        }
        Ok(FullModel {
            encoder,
            attention,
            head,
        })
    }
}

/// Plain-matrix wrappers for the individual stages, each evaluated through
/// the same graph code as training.
pub mod ops {
    use super::*;

    pub fn correlation(x: &Matrix, memory: &Matrix, params: &AttentionParams) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (xv, mv) = (g.leaf(x), g.leaf(memory));
        let r = vars.correlation(&mut g, xv, mv)?;
        Ok(g.value(r).clone())
    }

    pub fn reweight_memory(r: &Matrix, memory: &Matrix, params: &AttentionParams) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (rv, mv) = (g.leaf(r), g.leaf(memory));
        let u = vars.reweight_memory(&mut g, rv, mv)?;
        Ok(g.value(u).clone())
    }

    pub fn domain_invariant_descriptor(
        u: &Matrix,
        x: &Matrix,
        params: &AttentionParams,
    ) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (uv, xv) = (g.leaf(u), g.leaf(x));
        let (z, p) = vars.descriptor(&mut g, uv, xv)?;
        Ok((g.value(z).clone(), g.value(p).clone()))
    }

    /// Returns `A`.
    pub fn temporal_attention(p: &Matrix, x: &Matrix, params: &AttentionParams) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (pv, xv) = (g.leaf(p), g.leaf(x));
        let (_, a) = vars.temporal_attention(&mut g, pv, xv)?;
        Ok(g.value(a).clone())
    }

    pub fn attend(a: &Matrix, x: &Matrix, params: &AttentionParams) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = params.bind(&mut g);
        let (av, xv) = (g.leaf(a), g.leaf(x));
        let v = vars.attend(&mut g, av, xv)?;
        Ok(g.value(v).clone())
    }
}
