//! Two-domain synthetic corpus: isolated clips (slow signs wrapped in shared
//! demonstrating gestures) and long subtitled news streams with short,
//! domain-shifted sign instances.

mod io;
mod lemma;

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use io::{read_dataset, read_matrix_csv, write_dataset, write_matrix_csv};
pub use lemma::GlossVocabulary;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsolatedSample {
    pub id: String,
    /// `t_raw × d_in`, one frame vector per row.
    pub frames: Matrix,
    pub label: usize,
    pub split: Split,
}

/// Half-open frame interval `[start, end)` labelled with a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrueSpan {
    pub class: usize,
    pub start: usize,
    pub end: usize,
}

impl TrueSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsStream {
    pub id: String,
    pub frames: Matrix,
    /// Subtitle tokens in surface form.
    pub tokens: Vec<String>,
    /// Generator ground truth; empty for real data.
    pub spans: Vec<TrueSpan>,
    pub split: Split,
}

impl NewsStream {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: GlossVocabulary,
    pub isolated: Vec<IsolatedSample>,
    pub streams: Vec<NewsStream>,
}

impl Corpus {
    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn isolated_in(&self, split: Split) -> impl Iterator<Item = &IsolatedSample> {
        self.isolated.iter().filter(move |s| s.split == split)
    }

    pub fn streams_in(&self, split: Split) -> impl Iterator<Item = &NewsStream> {
        self.streams.iter().filter(move |s| s.split == split)
    }

    pub fn frame_dim(&self) -> Option<usize> {
        self.isolated
            .first()
            .map(|s| s.frames.cols())
            .or_else(|| self.streams.first().map(|s| s.frames.cols()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Streams mined for news signs.
    pub train_streams: usize,
    /// Held-out streams for localization.
    pub test_streams: usize,
    pub frame_dim: usize,
    pub iso_length_mean: usize,
    /// Isolated clip lengths are uniform in `mean ± spread`.
    pub iso_length_spread: usize,
    pub news_sign_min: usize,
    pub news_sign_max: usize,
    pub stream_length: usize,
    pub stream_length_spread: usize,
    pub signs_per_stream_min: usize,
    pub signs_per_stream_max: usize,
    /// Length range of the raise/lower gestures around every isolated sign.
    pub demo_min: usize,
    pub demo_max: usize,
    pub template_scale: f64,
    /// News-domain map is `A = I + strength·R/√d_in` with Gaussian `R`.
    pub shift_strength: f64,
    /// Standard deviation of the news-domain offset vector.
    pub shift_offset: f64,
    pub iso_noise: f64,
    pub news_noise: f64,
    /// Per-clip (per-signer) constant offset, both domains.
    pub signer_jitter: f64,
    pub background_scale: f64,
    /// Probability that a stream's subtitle names an extra gloss that is
    /// never signed.
    pub distractor_rate: f64,
    pub distractor_tokens: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 20,
            train_per_class: 15,
            val_per_class: 3,
            test_per_class: 10,
            train_streams: 120,
            test_streams: 80,
            frame_dim: 16,
            iso_length_mean: 64,
            iso_length_spread: 16,
            news_sign_min: 9,
            news_sign_max: 16,
            stream_length: 300,
            stream_length_spread: 20,
            signs_per_stream_min: 1,
            signs_per_stream_max: 3,
            demo_min: 10,
            demo_max: 16,
            template_scale: 1.0,
            shift_strength: 0.5,
            shift_offset: 0.5,
            iso_noise: 0.6,
            news_noise: 0.3,
            signer_jitter: 0.5,
            background_scale: 1.0,
            distractor_rate: 0.15,
            distractor_tokens: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.classes < 2 {
            return bad("classes must be >= 2");
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("per-class sample counts must be >= 1");
        }
        if self.train_streams + self.test_streams == 0 || self.frame_dim == 0 {
            return bad("stream count and frame_dim must be >= 1");
        }
        if self.news_sign_min == 0 || self.news_sign_min > self.news_sign_max {
            return bad("news sign length range is empty");
        }
        if self.demo_min == 0 || self.demo_min > self.demo_max {
            return bad("demonstrating gesture range is empty");
        }
        if self.iso_length_spread + 2 * self.demo_max + 2 > self.iso_length_mean {
            return bad("iso_length_mean too small for the gesture lengths");
        }
        if self.signs_per_stream_min == 0 || self.signs_per_stream_min > self.signs_per_stream_max {
            return bad("signs per stream range is empty");
        }
        if self.signs_per_stream_max > self.classes {
            return bad("signs_per_stream_max exceeds the class count");
        }
        let min_stream = self.stream_length.saturating_sub(self.stream_length_spread);
        if min_stream < self.signs_per_stream_max * (self.news_sign_max + 4) {
            return bad("streams too short for the requested signs");
        }
        for (name, v) in [
            ("iso_noise", self.iso_noise),
            ("news_noise", self.news_noise),
            ("signer_jitter", self.signer_jitter),
            ("shift_offset", self.shift_offset),
            ("background_scale", self.background_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad("distractor_rate must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Smooth path in frame space: a straight line from `start` to `end` plus
/// sinusoidal components, parameterized on `τ ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub waves: Vec<Wave>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wave {
    pub freq: f64,
    pub amp: Vec<f64>,
    pub phase: Vec<f64>,
}

impl Trajectory {
    pub fn at(&self, tau: f64) -> Vec<f64> {
        let mut x: Vec<f64> = self
            .start
            .iter()
            .zip(&self.end)
            .map(|(s, e)| s + (e - s) * tau)
            .collect();
        for w in &self.waves {
            for (k, xk) in x.iter_mut().enumerate() {
                *xk += w.amp[k] * (std::f64::consts::PI * w.freq * tau + w.phase[k]).sin();
            }
        }
        x
    }

    /// The whole path resampled to `n` evenly spaced frames.
    pub fn sample(&self, n: usize) -> Matrix {
        let d = self.start.len();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let tau = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
            data.extend(self.at(tau));
        }
        Matrix::from_vec(n, d, data).expect("trajectory sample shape")
    }
}

/// News-domain appearance change `x ↦ A·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineShift {
    pub matrix: Matrix,
    pub offset: Matrix,
}

impl AffineShift {
    pub fn identity(d: usize) -> Self {
        AffineShift {
            matrix: Matrix::identity(d),
            offset: Matrix::zeros(1, d),
        }
    }

    /// Applies the map to every row of `frames`.
    pub fn apply(&self, frames: &Matrix) -> Matrix {
        frames
            .matmul_nt(&self.matrix)
            .and_then(|m| m.add_row(&self.offset))
            .expect("affine shift dimension")
    }
}

/// Latent generator state, kept for tests and diagnostics.
#[derive(Clone, Debug)]
pub struct SynthWorld {
    pub templates: Vec<Trajectory>,
    pub raise: Trajectory,
    pub lower: Trajectory,
    pub shift: AffineShift,
}

const GLOSS_WORDS: &[&str] = &[
    "book", "drink", "computer", "before", "chair", "go", "clothes", "who", "candy", "cousin",
    "deaf", "fine", "help", "no", "thin", "walk", "year", "yes", "black", "cool", "finish", "hot",
    "like", "many", "mother", "now", "orange", "table", "thanksgiving", "what", "woman", "bed",
    "blue", "bowling", "can", "dog", "family", "fish", "graduate", "hat", "hearing", "kiss",
    "language", "later", "man", "shirt", "study", "tall", "white", "wrong",
];

const FILLER_WORDS: &[&str] = &[
    "the", "a", "and", "today", "weather", "news", "report", "people", "said", "will", "city",
    "government", "after", "there", "this", "from", "minister", "week", "tonight", "local",
    "police", "council", "announced", "expected", "region",
];

fn gloss_name(j: usize) -> String {
    match GLOSS_WORDS.get(j) {
        Some(w) => (*w).to_string(),
        None => format!("word{j}"),
    }
}

fn build_vocabulary(k: usize) -> GlossVocabulary {
    let glosses: Vec<String> = (0..k).map(gloss_name).collect();
    let mut lemmas = BTreeMap::new();
    for g in &glosses {
        for suffix in ["s", "ing", "ed"] {
            lemmas.insert(format!("{g}{suffix}"), g.clone());
        }
    }
    GlossVocabulary::new(glosses, lemmas).expect("generated vocabulary is valid")
}

fn surface_form(gloss: &str, rng: &mut ChaCha8Rng) -> String {
    let base = match rng.random_range(0..4) {
        0 => format!("{gloss}s"),
        1 => format!("{gloss}ing"),
        _ => gloss.to_string(),
    };
    if rng.random_bool(0.3) {
        let mut chars = base.chars();
        match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => base,
        }
    } else {
        base
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; d];
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..d).map(|_| normal.sample(rng)).collect()
}

fn add_noise(m: &mut Matrix, rng: &mut ChaCha8Rng, sigma: f64) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in m.data_mut() {
        *v += normal.sample(rng);
    }
}

fn add_offset(m: &mut Matrix, offset: &[f64]) {
    for r in 0..m.rows() {
        for (v, o) in m.row_mut(r).iter_mut().zip(offset) {
            *v += o;
        }
    }
}

fn random_waves(rng: &mut ChaCha8Rng, d: usize, freqs: &[f64], sigma: f64) -> Vec<Wave> {
    freqs
        .iter()
        .map(|&freq| Wave {
            freq,
            amp: gaussian_vec(rng, d, sigma / freq),
            phase: (0..d)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect(),
        })
        .collect()
}

fn vstack(parts: &[Matrix]) -> Matrix {
    let cols = parts[0].cols();
    let rows = parts.iter().map(Matrix::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Matrix::from_vec(rows, cols, data).expect("vstack shape")
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    generate_world(cfg).map(|(c, _)| c)
}

/// Generates the corpus together with the latent templates and domain map.
pub fn generate_world(cfg: &SynthConfig) -> Result<(Corpus, SynthWorld)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.frame_dim;
    let s = cfg.template_scale;

    let templates: Vec<Trajectory> = (0..cfg.classes)
        .map(|_| {
            let centre = gaussian_vec(&mut rng, d, 0.7 * s);
            Trajectory {
                start: centre.clone(),
                end: centre,
                waves: random_waves(&mut rng, d, &[1.0, 2.0], 0.9 * s),
            }
        })
        .collect();

    let rest = gaussian_vec(&mut rng, d, 0.5 * s);
    let neutral = gaussian_vec(&mut rng, d, 0.5 * s);
    let raise = Trajectory {
        start: rest.clone(),
        end: neutral.clone(),
        waves: random_waves(&mut rng, d, &[1.0], 0.3 * s),
    };
    let lower = Trajectory {
        start: neutral,
        end: rest,
        waves: random_waves(&mut rng, d, &[1.0], 0.3 * s),
    };

    let perturb = Matrix::from_vec(d, d, gaussian_vec(&mut rng, d * d, 1.0))?;
    let shift = AffineShift {
        matrix: Matrix::identity(d)
            .add(&perturb.scale(cfg.shift_strength / (d as f64).sqrt()))?,
        offset: Matrix::row_vector(&gaussian_vec(&mut rng, d, cfg.shift_offset)),
    };

    let vocab = build_vocabulary(cfg.classes);

    let mut isolated = Vec::new();
    for (label, template) in templates.iter().enumerate() {
        for (split, count) in [
            (Split::Train, cfg.train_per_class),
            (Split::Val, cfg.val_per_class),
            (Split::Test, cfg.test_per_class),
        ] {
            for _ in 0..count {
                let total = rng.random_range(
                    cfg.iso_length_mean - cfg.iso_length_spread
                        ..=cfg.iso_length_mean + cfg.iso_length_spread,
                );
                let pre = rng.random_range(cfg.demo_min..=cfg.demo_max);
                let post = rng.random_range(cfg.demo_min..=cfg.demo_max);
                let core = total - pre - post;
                let mut frames = vstack(&[
                    raise.sample(pre),
                    template.sample(core),
                    lower.sample(post),
                ]);
                let signer = gaussian_vec(&mut rng, d, cfg.signer_jitter);
                add_offset(&mut frames, &signer);
                add_noise(&mut frames, &mut rng, cfg.iso_noise);
                isolated.push(IsolatedSample {
                    id: format!("iso{:05}", isolated.len()),
                    frames,
                    label,
                    split,
                });
            }
        }
    }

    let mut streams = Vec::new();
    let splits = std::iter::repeat_n(Split::Train, cfg.train_streams)
        .chain(std::iter::repeat_n(Split::Test, cfg.test_streams));
    for split in splits {
        let id = format!("news{:04}", streams.len());
        streams.push(generate_stream(cfg, &mut rng, id, split, &templates, &shift, &vocab)?);
    }

    let corpus = Corpus {
        vocab,
        isolated,
        streams,
    };
    let world = SynthWorld {
        templates,
        raise,
        lower,
        shift,
    };
    Ok((corpus, world))
}

fn generate_stream(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    id: String,
    split: Split,
    templates: &[Trajectory],
    shift: &AffineShift,
    vocab: &GlossVocabulary,
) -> Result<NewsStream> {
    let d = cfg.frame_dim;
    let len = rng.random_range(
        cfg.stream_length - cfg.stream_length_spread..=cfg.stream_length + cfg.stream_length_spread,
    );

    // Background: piecewise transitions between random poses.
    let mut background = Matrix::zeros(len, d);
    let mut pose = gaussian_vec(rng, d, cfg.background_scale * cfg.template_scale);
    let mut t = 0;
    while t < len {
        let seg = rng.random_range(10..=30).min(len - t);
        let next = gaussian_vec(rng, d, cfg.background_scale * cfg.template_scale);
        let path = Trajectory {
            start: pose,
            end: next.clone(),
            waves: Vec::new(),
        };
        let frames = path.sample(seg);
        for r in 0..seg {
            background.row_mut(t + r).copy_from_slice(frames.row(r));
        }
        pose = next;
        t += seg;
    }

    let n_signs = rng.random_range(cfg.signs_per_stream_min..=cfg.signs_per_stream_max);
    let mut classes: Vec<usize> = (0..cfg.classes).collect();
    classes.shuffle(rng);
    classes.truncate(n_signs);

    let slot = len / n_signs;
    let mut spans = Vec::with_capacity(n_signs);
    for (i, &class) in classes.iter().enumerate() {
        let n = rng.random_range(cfg.news_sign_min..=cfg.news_sign_max);
        let lo = i * slot + 2;
        let hi = (i + 1) * slot - n - 2;
        let start = rng.random_range(lo..=hi);
        let sign = templates[class].sample(n);
        for r in 0..n {
            background.row_mut(start + r).copy_from_slice(sign.row(r));
        }
        spans.push(TrueSpan {
            class,
            start,
            end: start + n,
        });
    }

    let mut frames = shift.apply(&background);
    let signer = gaussian_vec(rng, d, cfg.signer_jitter);
    add_offset(&mut frames, &signer);
    add_noise(&mut frames, rng, cfg.news_noise);

    let mut tokens: Vec<String> = spans
        .iter()
        .map(|s| surface_form(vocab.gloss(s.class), rng))
        .collect();
    if rng.random_bool(cfg.distractor_rate) {
        let unsigned: Vec<usize> = (0..cfg.classes)
            .filter(|c| !classes.contains(c))
            .collect();
        if let Some(&c) = unsigned.choose(rng) {
            tokens.push(surface_form(vocab.gloss(c), rng));
        }
    }
    for _ in 0..cfg.distractor_tokens {
        let w = FILLER_WORDS.choose(rng).expect("filler words");
        tokens.push((*w).to_string());
    }
    tokens.shuffle(rng);

    Ok(NewsStream {
        id,
        frames,
        tokens,
        spans,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 4,
            train_per_class: 3,
            val_per_class: 1,
            test_per_class: 2,
            train_streams: 6,
            test_streams: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn one_sample_per_class_counts() {
        let cfg = SynthConfig {
            classes: 2,
            train_per_class: 1,
            val_per_class: 0,
            test_per_class: 1,
            signs_per_stream_max: 2,
            ..small()
        };
        let c = generate_corpus(&cfg).unwrap();
        let train: Vec<_> = c.isolated_in(Split::Train).map(|s| s.label).collect();
        assert_eq!(train, vec![0, 1]);
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate_corpus(&small()).unwrap(), generate_corpus(&small()).unwrap());
        let other = SynthConfig { seed: 1, ..small() };
        assert_ne!(generate_corpus(&small()).unwrap(), generate_corpus(&other).unwrap());
    }

    #[test]
    fn clean_news_sign_equals_compressed_template() {
        let cfg = SynthConfig {
            shift_strength: 0.0,
            shift_offset: 0.0,
            news_noise: 0.0,
            iso_noise: 0.0,
            signer_jitter: 0.0,
            ..small()
        };
        let (corpus, world) = generate_world(&cfg).unwrap();
        assert_eq!(world.shift, AffineShift::identity(cfg.frame_dim));
        for stream in &corpus.streams {
            for span in &stream.spans {
                let got = stream.frames.slice_rows(span.start, span.end);
                let want = world.templates[span.class].sample(span.len());
                assert!(got.max_abs_diff(&want) == 0.0, "stream {}", stream.id);
            }
        }
    }

    #[test]
    fn spans_and_subtitles_are_consistent() {
        let corpus = generate_corpus(&SynthConfig::default()).unwrap();
        let mut total = 0usize;
        for s in &corpus.isolated {
            total += s.frames.rows();
        }
        let mean = total as f64 / corpus.isolated.len() as f64;
        assert!((mean - 64.0).abs() <= 6.4, "mean isolated length {mean}");
        for stream in &corpus.streams {
            let lemmas = corpus.vocab.lemmatize_tokens(&stream.tokens);
            let mut prev_end = 0;
            for span in &stream.spans {
                assert!((9..=16).contains(&span.len()));
                assert!(span.end <= stream.len());
                assert!(span.start >= prev_end);
                prev_end = span.end;
                assert!(lemmas.contains(&corpus.vocab.gloss(span.class).to_string()));
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate_corpus(&SynthConfig { classes: 1, ..small() }).is_err());
        assert!(generate_corpus(&SynthConfig { iso_noise: -1.0, ..small() }).is_err());
        assert!(generate_corpus(&SynthConfig {
            news_sign_min: 17,
            ..small()
        })
        .is_err());
    }
}
