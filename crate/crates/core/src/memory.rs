//! Prototype memory: one frozen centroid per class, stacked into a `K × d`
//! matrix.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::Classifier;
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::textio::{parse_csv_row, push_csv_row, read_text, write_text};

/// Which clips feed the prototypes, and through which encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    /// Extracted news windows through the jointly trained encoder.
    #[default]
    NewsAligned,
    /// Isolated training clips through the base encoder.
    IsoBase,
    /// Isolated training clips through the jointly trained encoder.
    IsoAligned,
    /// News windows and isolated clips through the jointly trained encoder.
    BothAligned,
}

impl SourceTag {
    pub const ALL: [SourceTag; 4] = [
        SourceTag::NewsAligned,
        SourceTag::IsoBase,
        SourceTag::IsoAligned,
        SourceTag::BothAligned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::NewsAligned => "news-aligned",
            SourceTag::IsoBase => "iso-base",
            SourceTag::IsoAligned => "iso-aligned",
            SourceTag::BothAligned => "both-aligned",
        }
    }

    pub fn uses_news(self) -> bool {
        matches!(self, SourceTag::NewsAligned | SourceTag::BothAligned)
    }

    pub fn uses_isolated(self) -> bool {
        !matches!(self, SourceTag::NewsAligned)
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SourceTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown memory source {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeMemory {
    pub matrix: Matrix,
    pub glosses: Vec<String>,
    pub source: SourceTag,
}

/// Arithmetic mean of `1 × d` clip embeddings.
pub fn build_prototype(gloss: &str, features: &[Matrix]) -> Result<Matrix> {
    let Some(first) = features.first() else {
        return Err(Error::EmptyClasses(vec![gloss.to_string()]));
    };
    let mut acc = Matrix::zeros(1, first.cols());
    for f in features {
        if f.shape() != acc.shape() {
            return Err(Error::Shape {
                op: "build_prototype",
                lhs: acc.shape(),
                rhs: f.shape(),
            });
        }
        acc.add_assign(f);
    }
    Ok(acc.scale(1.0 / features.len() as f64))
}

/// Clips available to memory construction, grouped by class index.
#[derive(Clone, Debug, Default)]
pub struct MemorySources<'a> {
    pub news: Vec<Vec<&'a Matrix>>,
    pub isolated: Vec<Vec<&'a Matrix>>,
}

impl<'a> MemorySources<'a> {
    pub fn new(classes: usize) -> Self {
        MemorySources {
            news: vec![Vec::new(); classes],
            isolated: vec![Vec::new(); classes],
        }
    }
}

impl PrototypeMemory {
    pub fn num_classes(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Stacks per-class feature sets into prototypes. Every empty class is
    /// reported in one error.
    pub fn from_features(glosses: &[String], per_class: &[Vec<Matrix>], source: SourceTag) -> Result<Self> {
        assert_eq!(glosses.len(), per_class.len(), "one feature list per gloss");
        let empty: Vec<String> = glosses
            .iter()
            .zip(per_class)
            .filter(|(_, f)| f.is_empty())
            .map(|(g, _)| g.clone())
            .collect();
        if !empty.is_empty() {
            return Err(Error::EmptyClasses(empty));
        }
        let rows = glosses
            .iter()
            .zip(per_class)
            .map(|(g, f)| build_prototype(g, f))
            .collect::<Result<Vec<_>>>()?;
        let d = rows[0].cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in &rows {
            data.extend_from_slice(r.data());
        }
        Ok(PrototypeMemory {
            matrix: Matrix::from_vec(rows.len(), d, data)?,
            glosses: glosses.to_vec(),
            source,
        })
    }

    /// Embeds the sources selected by `source` and averages per class.
    /// `iso-base` uses `base`; every other tag uses `aligned`. With
    /// `fallback`, news-only classes that came up empty borrow the aligned
    /// isolated clips instead of failing.
    pub fn build(
        glosses: &[String],
        sources: &MemorySources<'_>,
        base: &Classifier,
        aligned: &Classifier,
        source: SourceTag,
        fallback: bool,
    ) -> Result<Self> {
        let k = glosses.len();
        let encoder = if source == SourceTag::IsoBase { base } else { aligned };
        let mut per_class: Vec<Vec<Matrix>> = vec![Vec::new(); k];
        for (class, feats) in per_class.iter_mut().enumerate() {
            if source.uses_news() {
                for clip in &sources.news[class] {
                    feats.push(encoder.embedding(clip)?);
                }
            }
            if source.uses_isolated() {
                for clip in &sources.isolated[class] {
                    feats.push(encoder.embedding(clip)?);
                }
            }
            if feats.is_empty() && fallback && source == SourceTag::NewsAligned {
                log::warn!(
                    "class {} has no news windows; falling back to aligned isolated clips",
                    glosses[class]
                );
                for clip in &sources.isolated[class] {
                    feats.push(aligned.embedding(clip)?);
                }
            }
        }
        Self::from_features(glosses, &per_class, source)
    }

    /// Rows and glosses permuted together: row `i` of the result is row
    /// `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> PrototypeMemory {
        PrototypeMemory {
            matrix: self.matrix.select_rows(order),
            glosses: order.iter().map(|&i| self.glosses[i].clone()).collect(),
            source: self.source,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{} {} {}", self.num_classes(), self.dim(), self.source).expect("write to string");
        for (g, r) in self.glosses.iter().zip(0..self.matrix.rows()) {
            out.push_str(g);
            out.push(',');
            push_csv_row(&mut out, self.matrix.row(r));
        }
        out
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty memory file"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (k, d, source) = match parts.as_slice() {
            [k, d, tag] => (
                k.parse::<usize>().map_err(|_| Error::parse(path, 1, "bad K"))?,
                d.parse::<usize>().map_err(|_| Error::parse(path, 1, "bad d"))?,
                tag.parse::<SourceTag>().map_err(|e| Error::parse(path, 1, e.to_string()))?,
            ),
            _ => return Err(Error::parse(path, 1, "expected `K d source-tag` header")),
        };
        let mut glosses = Vec::with_capacity(k);
        let mut data = Vec::with_capacity(k * d);
        for (i, line) in lines {
            let (gloss, values) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `gloss,values...`"))?;
            let row = parse_csv_row(path, i + 1, values)?;
            if row.len() != d {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected {d} values, found {}", row.len()),
                ));
            }
            glosses.push(gloss.to_string());
            data.extend(row);
        }
        if glosses.len() != k {
            return Err(Error::parse(
                path,
                1,
                format!("header says {k} classes, file has {}", glosses.len()),
            ));
        }
        Ok(PrototypeMemory {
            matrix: Matrix::from_vec(k, d, data)?,
            glosses,
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }
}
