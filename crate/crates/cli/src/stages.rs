//! One function per subcommand. Each loads its upstream artifacts from the
//! layout, runs the stage and writes its outputs plus a manifest.

use std::fmt::Write as _;

use log::info;

use signbridge::backbone::Classifier;
use signbridge::corpus::{generate_corpus, write_dataset, Corpus, NewsStream, Split};
use signbridge::evaluation::{detections_tsv, map_at_tiou, sign_signature, EvalReport, StreamSpan};
use signbridge::experiment::{detect_all, ground_truth, isolated_test, memory_sources, score_clips};
use signbridge::extraction::{extract, CandidateSet, MemoryScorer, WindowScorer};
use signbridge::memory::PrototypeMemory;
use signbridge::model::FullModel;
use signbridge::training::{train_base, train_full, train_joint, TrainData, TrainReport};
use signbridge::Matrix;

use crate::artifacts::{
    load_candidates, load_classifier, load_corpus, load_full, load_memory, require, write_file, Layout, Manifest,
    ModelKind,
};
use crate::config::PipelineConfig;
use crate::CliResult;

/// Effective configuration plus the paths derived from it.
pub struct Context {
    pub cfg: PipelineConfig,
    pub layout: Layout,
    hash: String,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        let layout = Layout::new(&cfg.dataset_dir, &cfg.output_dir);
        let hash = cfg.hash();
        Context { cfg, layout, hash }
    }

    fn manifest(&self, stage: &str, seed: u64) -> Manifest {
        Manifest::new(stage, &self.hash, seed)
    }

    fn corpus(&self, m: &mut Manifest) -> CliResult<Corpus> {
        let corpus = load_corpus(&self.layout)?;
        m.input_tree(&self.layout.dataset)?;
        Ok(corpus)
    }

    fn save_manifest(&self, m: &Manifest) -> CliResult<()> {
        m.save(&self.layout.manifest(&m.stage))
    }
}

pub fn gen(ctx: &Context) -> CliResult<()> {
    let corpus = generate_corpus(&ctx.cfg.synth)?;
    write_dataset(&ctx.layout.dataset, &corpus)?;
    info!(
        "wrote {} isolated clips and {} streams to {}",
        corpus.isolated.len(),
        corpus.streams.len(),
        ctx.layout.dataset.display()
    );
    let mut m = ctx.manifest("gen", ctx.cfg.synth.seed);
    m.output_tree(&ctx.layout.dataset)?;
    ctx.save_manifest(&m)
}

fn save_classifier(ctx: &Context, kind: ModelKind, clf: &Classifier, mut report: TrainReport, m: &mut Manifest) -> CliResult<()> {
    let ckpt = ctx.layout.checkpoint(kind);
    let tsv = ctx.layout.train_report(kind);
    clf.to_checkpoint().save(&ckpt)?;
    report.checkpoint = Some(ckpt.clone());
    report.save(&tsv)?;
    log_final_loss(kind, &report);
    m.output(&ckpt)?;
    m.output(&tsv)
}

fn log_final_loss(kind: ModelKind, report: &TrainReport) {
    if let Some(loss) = report.epoch_loss.last() {
        info!("{}: final epoch loss {loss:.5} over {} samples", kind.as_str(), report.train_samples);
    }
}

/// Trains F on isolated clips, or with `news_windows` the baseline that adds
/// the mined windows straight into the training set.
pub fn train_base_stage(ctx: &Context, news_windows: bool) -> CliResult<()> {
    let kind = if news_windows { ModelKind::NewsAdded } else { ModelKind::Base };
    let stage = format!("train-{}", kind.as_str());
    let mut m = ctx.manifest(&stage, ctx.cfg.train_base.seed);
    let corpus = ctx.corpus(&mut m)?;
    let d_in = corpus.frame_dim().expect("checked on load");
    let candidates;
    let mut data = TrainData::isolated(&corpus);
    if news_windows {
        let path = ctx.layout.candidates();
        candidates = load_candidates(&path, &corpus)?;
        m.input(&path)?;
        data = data.with_candidates(&candidates);
    }
    let (clf, report) = train_base(&data, d_in, &ctx.cfg.model, &ctx.cfg.train_base)?;
    save_classifier(ctx, kind, &clf, report, &mut m)?;
    ctx.save_manifest(&m)
}

pub fn extract_stage(ctx: &Context) -> CliResult<()> {
    let mut m = ctx.manifest("extract", ctx.cfg.train_base.seed);
    let corpus = ctx.corpus(&mut m)?;
    let base_path = ctx.layout.checkpoint(ModelKind::Base);
    let base = load_classifier(&base_path)?;
    m.input(&base_path)?;
    let candidates = extract(corpus.streams_in(Split::Train), &corpus.vocab, &base, &ctx.cfg.extraction)?;
    info!("mined {} news windows above epsilon {}", candidates.len(), ctx.cfg.extraction.epsilon);
    let out = ctx.layout.candidates();
    candidates.save_tsv(&out)?;
    m.output(&out)?;
    ctx.save_manifest(&m)
}

pub fn align_stage(ctx: &Context) -> CliResult<()> {
    let mut m = ctx.manifest("align", ctx.cfg.train_joint.seed);
    let corpus = ctx.corpus(&mut m)?;
    let base_path = ctx.layout.checkpoint(ModelKind::Base);
    let cand_path = ctx.layout.candidates();
    let base = load_classifier(&base_path)?;
    let candidates = load_candidates(&cand_path, &corpus)?;
    m.input(&base_path)?;
    m.input(&cand_path)?;
    let data = TrainData::isolated(&corpus);
    let (aligned, report) = train_joint(&data, &candidates, &base, &ctx.cfg.model, &ctx.cfg.train_joint)?;
    save_classifier(ctx, ModelKind::Aligned, &aligned, report, &mut m)?;
    ctx.save_manifest(&m)
}

/// The encoder standing in for F̂: the jointly trained one, or F itself when
/// coarse alignment is switched off.
fn aligned_encoder(ctx: &Context, base: &Classifier, m: &mut Manifest) -> CliResult<Classifier> {
    if !ctx.cfg.memory.coarse_alignment {
        return Ok(base.clone());
    }
    let path = ctx.layout.checkpoint(ModelKind::Aligned);
    let clf = load_classifier(&path)?;
    m.input(&path)?;
    Ok(clf)
}

pub fn build_memory_stage(ctx: &Context) -> CliResult<()> {
    let mcfg = &ctx.cfg.memory;
    let mut m = ctx.manifest("build-memory", ctx.cfg.train_joint.seed);
    let corpus = ctx.corpus(&mut m)?;
    let base_path = ctx.layout.checkpoint(ModelKind::Base);
    let base = load_classifier(&base_path)?;
    m.input(&base_path)?;
    let aligned = aligned_encoder(ctx, &base, &mut m)?;
    let candidates = if mcfg.source.uses_news() {
        let path = ctx.layout.candidates();
        let c = load_candidates(&path, &corpus)?;
        m.input(&path)?;
        c
    } else {
        CandidateSet::default()
    };
    let sources = memory_sources(&corpus, &candidates);
    let memory = PrototypeMemory::build(corpus.vocab.glosses(), &sources, &base, &aligned, mcfg.source, mcfg.fallback)?;
    let out = ctx.layout.memory();
    memory.save(&out)?;
    info!("memory: {} prototypes of dim {} from {}", memory.num_classes(), memory.dim(), mcfg.source);
    m.output(&out)?;
    ctx.save_manifest(&m)
}

pub fn train_full_stage(ctx: &Context) -> CliResult<()> {
    let mut m = ctx.manifest("train-full", ctx.cfg.train_full.seed);
    let corpus = ctx.corpus(&mut m)?;
    let base_path = ctx.layout.checkpoint(ModelKind::Base);
    let mem_path = ctx.layout.memory();
    let base = load_classifier(&base_path)?;
    let memory = load_memory(&mem_path)?;
    m.input(&base_path)?;
    m.input(&mem_path)?;
    let data = TrainData::isolated(&corpus);
    let (full, mut report) = train_full(&data, &memory, &base, &ctx.cfg.model, &ctx.cfg.train_full)?;
    let ckpt = ctx.layout.checkpoint(ModelKind::Full);
    let tsv = ctx.layout.train_report(ModelKind::Full);
    full.to_checkpoint().save(&ckpt)?;
    report.checkpoint = Some(ckpt.clone());
    report.save(&tsv)?;
    log_final_loss(ModelKind::Full, &report);
    m.output(&ckpt)?;
    m.output(&tsv)?;
    ctx.save_manifest(&m)
}

/// A trained recognizer loaded from disk.
pub enum Recognizer {
    Plain(Classifier),
    WithMemory(Box<(FullModel, PrototypeMemory)>),
}

impl Recognizer {
    pub fn load(ctx: &Context, kind: ModelKind, checkpoint: Option<&std::path::Path>, m: &mut Manifest) -> CliResult<Self> {
        let path = checkpoint.map_or_else(|| ctx.layout.checkpoint(kind), |p| p.to_path_buf());
        if kind != ModelKind::Full {
            let clf = load_classifier(&path)?;
            m.input(&path)?;
            return Ok(Recognizer::Plain(clf));
        }
        let full = load_full(&path)?;
        let mem_path = ctx.layout.memory();
        let memory = load_memory(&mem_path)?;
        full.check_memory(&memory.matrix)
            .map_err(|e| crate::CliError::data(format!("{}: {e}", mem_path.display())))?;
        m.input(&path)?;
        m.input(&mem_path)?;
        Ok(Recognizer::WithMemory(Box::new((full, memory))))
    }

    pub fn logits(&self, frames: &Matrix) -> signbridge::Result<Matrix> {
        match self {
            Recognizer::Plain(c) => c.logits(frames),
            Recognizer::WithMemory(fm) => fm.0.logits(frames, &fm.1.matrix),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Recognizer::Plain(c) => c.num_classes(),
            Recognizer::WithMemory(fm) => fm.0.num_classes(),
        }
    }
}

impl WindowScorer for Recognizer {
    fn score_windows(&self, frames: &Matrix, windows: &[(usize, usize)]) -> signbridge::Result<Vec<Matrix>> {
        match self {
            Recognizer::Plain(c) => c.score_windows(frames, windows),
            Recognizer::WithMemory(fm) => MemoryScorer {
                model: &fm.0,
                memory: &fm.1,
            }
            .score_windows(frames, windows),
        }
    }
}

fn test_streams(corpus: &Corpus) -> Vec<&NewsStream> {
    corpus.streams_in(Split::Test).collect()
}

fn detections(ctx: &Context, rec: &Recognizer, streams: &[&NewsStream]) -> CliResult<Vec<StreamSpan>> {
    Ok(detect_all(streams, rec, &ctx.cfg.eval.localize)?)
}

/// Recognition accuracy on the isolated test split, plus mAP on the test
/// streams when they carry ground truth.
pub fn eval_stage(ctx: &Context, kind: ModelKind, checkpoint: Option<&std::path::Path>) -> CliResult<EvalReport> {
    let mut m = ctx.manifest(&format!("eval-{}", kind.as_str()), ctx.cfg.train_full.seed);
    let path = checkpoint.map_or_else(|| ctx.layout.checkpoint(kind), |p| p.to_path_buf());
    require(&path)?;
    let corpus = ctx.corpus(&mut m)?;
    let rec = Recognizer::load(ctx, kind, checkpoint, &mut m)?;
    if rec.num_classes() != corpus.num_classes() {
        return Err(crate::CliError::data(format!(
            "{}: model has {} classes, dataset has {}",
            path.display(),
            rec.num_classes(),
            corpus.num_classes()
        )));
    }
    let (clips, labels) = isolated_test(&corpus);
    if clips.is_empty() {
        return Err(crate::CliError::data("dataset has no isolated test clips"));
    }
    let scores = score_clips(&clips, corpus.num_classes(), |f| rec.logits(f))?;
    let mut report = EvalReport::from_scores(kind.as_str(), corpus.vocab.glosses(), &scores, &labels)?;
    let streams = test_streams(&corpus);
    let truth = ground_truth(&streams);
    if !truth.is_empty() {
        let dets = detections(ctx, &rec, &streams)?;
        let thresholds = &ctx.cfg.eval.thresholds;
        report.map = thresholds.iter().copied().zip(map_at_tiou(&dets, &truth, thresholds)).collect();
    }
    let out = ctx.layout.eval_report(kind);
    report.save(&out)?;
    print!("{}", report.table());
    m.output(&out)?;
    ctx.save_manifest(&m)?;
    Ok(report)
}

pub fn localize_stage(ctx: &Context, kind: ModelKind) -> CliResult<()> {
    let mut m = ctx.manifest(&format!("localize-{}", kind.as_str()), ctx.cfg.train_full.seed);
    let corpus = ctx.corpus(&mut m)?;
    let rec = Recognizer::load(ctx, kind, None, &mut m)?;
    let streams = test_streams(&corpus);
    let dets = detections(ctx, &rec, &streams)?;
    let ids: Vec<String> = streams.iter().map(|s| s.id.clone()).collect();
    let out = ctx.layout.detections(kind);
    write_file(&out, &detections_tsv(&dets, &ids))?;
    info!("{}: {} detections over {} streams", kind.as_str(), dets.len(), streams.len());
    let truth = ground_truth(&streams);
    if !truth.is_empty() {
        let maps = map_at_tiou(&dets, &truth, &ctx.cfg.eval.thresholds);
        for (t, v) in ctx.cfg.eval.thresholds.iter().zip(maps) {
            info!("{}: mAP@{t} = {:.2}", kind.as_str(), 100.0 * v);
        }
    }
    m.output(&out)?;
    ctx.save_manifest(&m)
}

/// Attention weights and memory correlations of the first isolated test
/// clips, one CSV file per clip.
pub fn dump_attention_stage(ctx: &Context, clips: usize) -> CliResult<()> {
    let mut m = ctx.manifest("dump-attention", ctx.cfg.train_full.seed);
    let corpus = ctx.corpus(&mut m)?;
    let Recognizer::WithMemory(loaded) = Recognizer::load(ctx, ModelKind::Full, None, &mut m)? else {
        unreachable!("full checkpoint loads with memory")
    };
    let (full, memory) = *loaded;
    let dir = ctx.layout.attention_dir();
    let glosses = corpus.vocab.glosses();
    for s in corpus.isolated_in(Split::Test).take(clips) {
        let trace = full.forward_full(&s.frames, &memory.matrix)?;
        let sig = sign_signature(&trace, full.encoder.downsample);
        let mut out = String::new();
        let w = &mut out;
        writeln!(
            w,
            "# clip={} label={} predicted={} peak={} raw_frames={}-{}",
            s.id,
            glosses[s.label],
            glosses[trace.logits.row_argmax(0)],
            sig.index,
            sig.raw_start,
            sig.raw_end
        )
        .expect("write to string");
        w.push_str("# A\nposition,weight\n");
        for (i, a) in trace.a.row(0).iter().enumerate() {
            writeln!(w, "{i},{a:?}").expect("write to string");
        }
        writeln!(w, "# r\n{}", memory.glosses.join(",")).expect("write to string");
        for i in 0..trace.r.rows() {
            let row: Vec<String> = trace.r.row(i).iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", row.join(",")).expect("write to string");
        }
        let path = dir.join(format!("{}.csv", s.id));
        write_file(&path, &out)?;
        m.output(&path)?;
    }
    info!("wrote attention for {} clips to {}", m.outputs.len(), dir.display());
    ctx.save_manifest(&m)
}

/// Pooled clip embeddings of isolated training clips, true news signs and
/// mined windows under F and F̂, for external projection.
pub fn dump_embeddings_stage(ctx: &Context) -> CliResult<()> {
    let mut m = ctx.manifest("dump-embeddings", ctx.cfg.train_joint.seed);
    let corpus = ctx.corpus(&mut m)?;
    let base_path = ctx.layout.checkpoint(ModelKind::Base);
    let base = load_classifier(&base_path)?;
    m.input(&base_path)?;
    let mut encoders = vec![("base", base)];
    if ctx.cfg.memory.coarse_alignment {
        let path = ctx.layout.checkpoint(ModelKind::Aligned);
        encoders.push(("aligned", load_classifier(&path)?));
        m.input(&path)?;
    }
    let cand_path = ctx.layout.candidates();
    let candidates = if cand_path.exists() {
        m.input(&cand_path)?;
        load_candidates(&cand_path, &corpus)?
    } else {
        CandidateSet::default()
    };
    let glosses = corpus.vocab.glosses();
    for (name, clf) in &encoders {
        let mut out = String::from("domain\tclass\tgloss\tsource\tstart\tend\tembedding\n");
        let mut row = |domain: &str, class: usize, source: &str, start: usize, end: usize, frames: &Matrix| -> CliResult<()> {
            let e = clf.embedding(frames)?;
            let values: Vec<String> = e.data().iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{domain}\t{class}\t{}\t{source}\t{start}\t{end}\t{}", glosses[class], values.join(","))
                .expect("write to string");
            Ok(())
        };
        for s in corpus.isolated_in(Split::Train) {
            row("isolated", s.label, &s.id, 0, s.frames.rows(), &s.frames)?;
        }
        for st in &corpus.streams {
            for t in &st.spans {
                row("news", t.class, &st.id, t.start, t.end, &st.frames.slice_rows(t.start, t.end))?;
            }
        }
        for c in candidates.iter() {
            row("mined", c.class, &c.stream_id, c.start, c.end, &c.frames)?;
        }
        let path = ctx.layout.embeddings(name);
        write_file(&path, &out)?;
        m.output(&path)?;
    }
    ctx.save_manifest(&m)
}

/// Every stage in order. Returns the final report of the full model.
pub fn pipeline(ctx: &Context) -> CliResult<EvalReport> {
    write_file(&ctx.cfg.output_dir.join("config.toml"), &ctx.cfg.to_toml())?;
    gen(ctx)?;
    train_base_stage(ctx, false)?;
    extract_stage(ctx)?;
    train_base_stage(ctx, true)?;
    if ctx.cfg.memory.coarse_alignment {
        align_stage(ctx)?;
    }
    build_memory_stage(ctx)?;
    train_full_stage(ctx)?;
    for kind in [ModelKind::Base, ModelKind::NewsAdded, ModelKind::Aligned] {
        if kind == ModelKind::Aligned && !ctx.cfg.memory.coarse_alignment {
            continue;
        }
        eval_stage(ctx, kind, None)?;
    }
    let report = eval_stage(ctx, ModelKind::Full, None)?;
    for kind in [ModelKind::Base, ModelKind::Full] {
        localize_stage(ctx, kind)?;
    }
    dump_attention_stage(ctx, ctx.cfg.eval.attention_clips)?;
    dump_embeddings_stage(ctx)?;
    Ok(report)
}
