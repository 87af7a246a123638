use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use signbridge::backbone::Classifier;
use signbridge::checkpoint::Checkpoint;
use signbridge::corpus::{read_dataset, Corpus};
use signbridge::extraction::CandidateSet;
use signbridge::memory::PrototypeMemory;
use signbridge::model::FullModel;

use crate::{CliError, CliResult};

/// Which trained recognizer a command works with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Base,
    NewsAdded,
    Aligned,
    Full,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Base, ModelKind::NewsAdded, ModelKind::Aligned, ModelKind::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::NewsAdded => "news-added",
            ModelKind::Aligned => "aligned",
            ModelKind::Full => "full",
        }
    }

    fn dir(self) -> &'static str {
        match self {
            ModelKind::Base => "base",
            ModelKind::NewsAdded => "news_added",
            ModelKind::Aligned => "aligned",
            ModelKind::Full => "full",
        }
    }
}

/// Fixed file layout under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub dataset: PathBuf,
    pub out: PathBuf,
}

impl Layout {
    pub fn new(dataset: &Path, out: &Path) -> Self {
        Layout {
            dataset: dataset.to_path_buf(),
            out: out.to_path_buf(),
        }
    }

    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.out.join(kind.dir()).join("model.ckpt")
    }

    pub fn train_report(&self, kind: ModelKind) -> PathBuf {
        self.out.join(kind.dir()).join("train.tsv")
    }

    pub fn candidates(&self) -> PathBuf {
        self.out.join("candidates").join("candidates.tsv")
    }

    pub fn memory(&self) -> PathBuf {
        self.out.join("memory").join("memory.txt")
    }

    pub fn eval_report(&self, kind: ModelKind) -> PathBuf {
        self.out.join("eval").join(format!("{}.tsv", kind.as_str()))
    }

    pub fn detections(&self, kind: ModelKind) -> PathBuf {
        self.out.join("localize").join(format!("{}.tsv", kind.as_str()))
    }

    pub fn attention_dir(&self) -> PathBuf {
        self.out.join("attention")
    }

    pub fn embeddings(&self, encoder: &str) -> PathBuf {
        self.out.join("embeddings").join(format!("{encoder}.tsv"))
    }

    pub fn manifest(&self, stage: &str) -> PathBuf {
        self.out.join("manifests").join(format!("{stage}.json"))
    }

    pub fn dataset_index(&self) -> PathBuf {
        self.dataset.join("index.tsv")
    }
}

/// Fails with a data error naming `path` when it does not exist.
pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::data(format!("missing file: {}", path.display())))
    }
}

pub fn load_corpus(layout: &Layout) -> CliResult<Corpus> {
    require(&layout.dataset_index())?;
    let corpus = read_dataset(&layout.dataset).map_err(|e| CliError::from(e).as_data())?;
    if corpus.frame_dim().is_none() {
        return Err(CliError::data(format!("dataset {} has no clips", layout.dataset.display())));
    }
    Ok(corpus)
}

pub fn load_classifier(path: &Path) -> CliResult<Classifier> {
    require(path)?;
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::from(e).as_data())?;
    Classifier::from_checkpoint(&ckpt).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_full(path: &Path) -> CliResult<FullModel> {
    require(path)?;
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::from(e).as_data())?;
    FullModel::from_checkpoint(&ckpt).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn load_memory(path: &Path) -> CliResult<PrototypeMemory> {
    require(path)?;
    PrototypeMemory::load(path).map_err(|e| CliError::from(e).as_data())
}

pub fn load_candidates(path: &Path, corpus: &Corpus) -> CliResult<CandidateSet> {
    require(path)?;
    CandidateSet::load(path, &corpus.streams, corpus.num_classes()).map_err(|e| CliError::from(e).as_data())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one stage run. Contains no timestamps so reruns with the same
/// inputs produce the same file.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str, seed: u64) -> Self {
        Manifest {
            stage: stage.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            ..Manifest::default()
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// One digest for a whole directory tree.
    pub fn input_tree(&mut self, dir: &Path) -> CliResult<()> {
        self.inputs.insert(format!("{}/", dir.display()), tree_digest(dir)?);
        Ok(())
    }

    pub fn output_tree(&mut self, dir: &Path) -> CliResult<()> {
        self.outputs.insert(format!("{}/", dir.display()), tree_digest(dir)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_file(path, &text)
    }
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::data(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// SHA-256 over every file's relative path and content hash, in sorted
/// path order.
pub fn tree_digest(dir: &Path) -> CliResult<String> {
    let mut h = Sha256::new();
    for f in files_under(dir)? {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(&f)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

fn files_under(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = fs::read_dir(&d).map_err(|e| CliError::data(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::data(format!("{}: {e}", d.display())))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("d/sub")).unwrap();
        std::fs::write(dir.path().join("d/b.txt"), "b").unwrap();
        std::fs::write(dir.path().join("d/sub/a.txt"), "a").unwrap();
        let mut m = Manifest::new("gen", "abc", 3);
        m.output(&dir.path().join("d/b.txt")).unwrap();
        m.output_tree(&dir.path().join("d")).unwrap();
        let b = m.outputs.iter().find(|(k, _)| k.ends_with("b.txt")).unwrap().1;
        assert_eq!(b, "3e23e8160039594a33894f6564e1b1348bbd7a0088d42c4acb73eeaed59c009d");
        let tree = tree_digest(&dir.path().join("d")).unwrap();
        std::fs::write(dir.path().join("d/sub/a.txt"), "A").unwrap();
        assert_ne!(tree, tree_digest(&dir.path().join("d")).unwrap());
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        m.save(&p).unwrap();
        assert_eq!(first, std::fs::read(&p).unwrap());
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let err = load_classifier(Path::new("/nonexistent/base/model.ckpt")).unwrap_err();
        assert_eq!(err.code, crate::EXIT_DATA);
        assert!(err.message.contains("/nonexistent/base/model.ckpt"));
    }
}
