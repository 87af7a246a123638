//! Dataset directory layout:
//!
//! ```text
//! index.tsv            id, kind (iso|news), class or '-', split, path, t_raw, d_in
//! vocab.txt            one gloss per line; line order is the class index
//! lemmas.tsv           surface form, lemma
//! frames/<id>.csv      one frame per row
//! subtitles/<id>.txt   whitespace-separated tokens
//! spans/<id>.tsv       class, start, end (half-open)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Corpus, GlossVocabulary, IsolatedSample, NewsStream, Split, TrueSpan};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::textio::{parse_csv_row, push_csv_row, read_text, write_text};

const INDEX_HEADER: &str = "id\tkind\tclass\tsplit\tpath\tt_raw\td_in";

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    for r in 0..m.rows() {
        push_csv_row(&mut out, m.row(r));
    }
    write_text(path, &out)
}

/// Reads one frame per line. Rows must all have the same width.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = read_text(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_csv_row(path, i + 1, line)?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("row {rows} has {} values, expected {c}", row.len()),
                ))
            }
            Some(_) => {}
        }
        data.extend(row);
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn frames_path(id: &str) -> String {
    format!("frames/{id}.csv")
}

pub fn write_dataset(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut vocab = String::new();
    for g in corpus.vocab.glosses() {
        vocab.push_str(g);
        vocab.push('\n');
    }
    write_text(&dir.join("vocab.txt"), &vocab)?;

    let mut lemmas = String::new();
    for (surface, lemma) in corpus.vocab.lemma_table() {
        writeln!(lemmas, "{surface}\t{lemma}").expect("write to string");
    }
    write_text(&dir.join("lemmas.tsv"), &lemmas)?;

    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for s in &corpus.isolated {
        let rel = frames_path(&s.id);
        writeln!(
            index,
            "{}\tiso\t{}\t{}\t{}\t{}\t{}",
            s.id,
            s.label,
            s.split.as_str(),
            rel,
            s.frames.rows(),
            s.frames.cols()
        )
        .expect("write to string");
        write_matrix_csv(&dir.join(&rel), &s.frames)?;
    }
    for s in &corpus.streams {
        let rel = frames_path(&s.id);
        writeln!(
            index,
            "{}\tnews\t-\t{}\t{}\t{}\t{}",
            s.id,
            s.split.as_str(),
            rel,
            s.frames.rows(),
            s.frames.cols()
        )
        .expect("write to string");
        write_matrix_csv(&dir.join(&rel), &s.frames)?;
        let mut subs = s.tokens.join(" ");
        subs.push('\n');
        write_text(&dir.join(format!("subtitles/{}.txt", s.id)), &subs)?;
        let mut spans = String::new();
        for sp in &s.spans {
            writeln!(spans, "{}\t{}\t{}", sp.class, sp.start, sp.end).expect("write to string");
        }
        write_text(&dir.join(format!("spans/{}.tsv", s.id)), &spans)?;
    }
    write_text(&dir.join("index.tsv"), &index)
}

fn read_vocab(dir: &Path) -> Result<GlossVocabulary> {
    let vocab_path = dir.join("vocab.txt");
    let glosses: Vec<String> = read_text(&vocab_path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();

    let lemma_path = dir.join("lemmas.tsv");
    let mut lemmas = BTreeMap::new();
    if lemma_path.exists() {
        for (i, line) in read_text(&lemma_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (surface, lemma) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&lemma_path, i + 1, "expected `surface<TAB>lemma`"))?;
            lemmas.insert(surface.to_string(), lemma.to_string());
        }
    }
    GlossVocabulary::new(glosses, lemmas).map_err(|e| Error::parse(&vocab_path, 1, e.to_string()))
}

fn read_spans(path: &Path, classes: usize) -> Result<Vec<TrueSpan>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut spans = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let nums: Option<Vec<usize>> = fields.iter().map(|f| f.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[class, start, end]) if class < classes && start < end => {
                spans.push(TrueSpan { class, start, end })
            }
            _ => return Err(Error::parse(path, i + 1, "expected `class<TAB>start<TAB>end`")),
        }
    }
    Ok(spans)
}

struct IndexRow<'a> {
    id: &'a str,
    kind: &'a str,
    class: &'a str,
    split: Split,
    path: PathBuf,
    t_raw: usize,
    d_in: usize,
}

fn parse_index_row<'a>(index_path: &Path, line_no: usize, line: &'a str, dir: &Path) -> Result<IndexRow<'a>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != 7 {
        return Err(Error::parse(
            index_path,
            line_no,
            format!("expected 7 tab-separated fields, found {}", f.len()),
        ));
    }
    let split = Split::parse(f[3])
        .ok_or_else(|| Error::parse(index_path, line_no, format!("unknown split {:?}", f[3])))?;
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::parse(index_path, line_no, format!("bad {what} {s:?}")))
    };
    Ok(IndexRow {
        id: f[0],
        kind: f[1],
        class: f[2],
        split,
        path: dir.join(f[4]),
        t_raw: num(f[5], "t_raw")?,
        d_in: num(f[6], "d_in")?,
    })
}

pub fn read_dataset(dir: &Path) -> Result<Corpus> {
    let index_path = dir.join("index.tsv");
    let index = read_text(&index_path)?;
    let vocab = read_vocab(dir)?;

    let mut isolated = Vec::new();
    let mut streams = Vec::new();
    for (i, line) in index.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || (i == 0 && line == INDEX_HEADER) {
            continue;
        }
        let row = parse_index_row(&index_path, line_no, line, dir)?;
        let frames = read_matrix_csv(&row.path)?;
        if frames.shape() != (row.t_raw, row.d_in) {
            return Err(Error::parse(
                &index_path,
                line_no,
                format!(
                    "{} is {}x{}, index says {}x{}",
                    row.path.display(),
                    frames.rows(),
                    frames.cols(),
                    row.t_raw,
                    row.d_in
                ),
            ));
        }
        if row.t_raw == 0 {
            return Err(Error::parse(&index_path, line_no, "empty frame sequence"));
        }
        match row.kind {
            "iso" => {
                let label = row
                    .class
                    .parse::<usize>()
                    .ok()
                    .filter(|&c| c < vocab.len())
                    .ok_or_else(|| {
                        Error::parse(&index_path, line_no, format!("bad class {:?}", row.class))
                    })?;
                isolated.push(IsolatedSample {
                    id: row.id.to_string(),
                    frames,
                    label,
                    split: row.split,
                });
            }
            "news" => {
                let subs = read_text(&dir.join(format!("subtitles/{}.txt", row.id)))?;
                let spans = read_spans(&dir.join(format!("spans/{}.tsv", row.id)), vocab.len())?;
                if let Some(bad) = spans.iter().find(|s| s.end > row.t_raw) {
                    return Err(Error::parse(
                        &index_path,
                        line_no,
                        format!("span [{}, {}) exceeds stream length {}", bad.start, bad.end, row.t_raw),
                    ));
                }
                streams.push(NewsStream {
                    id: row.id.to_string(),
                    frames,
                    tokens: subs.split_whitespace().map(String::from).collect(),
                    spans,
                    split: row.split,
                });
            }
            other => {
                return Err(Error::parse(&index_path, line_no, format!("unknown kind {other:?}")))
            }
        }
    }
    Ok(Corpus {
        vocab,
        isolated,
        streams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SynthConfig};

    fn tiny() -> Corpus {
        generate_corpus(&SynthConfig {
            classes: 3,
            train_per_class: 2,
            val_per_class: 1,
            test_per_class: 1,
            train_streams: 3,
            test_streams: 1,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny();
        write_dataset(dir.path(), &corpus).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn missing_matrix_file_named() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny();
        write_dataset(dir.path(), &corpus).unwrap();
        let victim = dir.path().join(format!("frames/{}.csv", corpus.isolated[1].id));
        fs::remove_file(&victim).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::MissingFile(p)) => assert_eq!(p, victim),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_index_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("index.tsv"), "{err}");
    }

    #[test]
    fn ragged_rows_report_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        fs::write(&path, "1,2,3\n4,5,6\n7,8\n").unwrap();
        let err = read_matrix_csv(&path).unwrap_err();
        match &err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(*line, 3);
                assert!(msg.contains("row 2"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_shape_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = tiny();
        write_dataset(dir.path(), &corpus).unwrap();
        let index_path = dir.path().join("index.tsv");
        let text = fs::read_to_string(&index_path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[1].split('\t').map(String::from).collect();
        fields[5] = "999".into();
        lines[1] = fields.join("\t");
        fs::write(&index_path, lines.join("\n") + "\n").unwrap();
        match read_dataset(dir.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
