use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Class names plus a surface-form → lemma lookup table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlossVocabulary {
    glosses: Vec<String>,
    lemmas: BTreeMap<String, String>,
}

impl GlossVocabulary {
    pub fn new(glosses: Vec<String>, lemmas: BTreeMap<String, String>) -> Result<Self> {
        if glosses.len() < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 2 glosses, got {}",
                glosses.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &glosses {
            if g.is_empty() || *g != g.to_lowercase() || g.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("gloss {g:?} must be a lowercase word")));
            }
            if !seen.insert(g.as_str()) {
                return Err(Error::Config(format!("duplicate gloss {g:?}")));
            }
        }
        Ok(GlossVocabulary { glosses, lemmas })
    }

    /// Vocabulary with an empty lemma table.
    pub fn from_glosses<S: Into<String>>(glosses: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(glosses.into_iter().map(Into::into).collect(), BTreeMap::new())
    }

    pub fn len(&self) -> usize {
        self.glosses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glosses.is_empty()
    }

    pub fn glosses(&self) -> &[String] {
        &self.glosses
    }

    pub fn gloss(&self, class: usize) -> &str {
        &self.glosses[class]
    }

    pub fn class_of(&self, lemma: &str) -> Option<usize> {
        self.glosses.iter().position(|g| g == lemma)
    }

    pub fn lemma_table(&self) -> &BTreeMap<String, String> {
        &self.lemmas
    }

    pub fn lemmatize(&self, token: &str) -> String {
        let lower = token.to_lowercase();
        match self.lemmas.get(&lower) {
            Some(lemma) => lemma.clone(),
            None => lower,
        }
    }

    /// Lowercases each token and maps it through the lemma table; unknown
    /// tokens pass through lowercased. Order and length are preserved.
    pub fn lemmatize_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens.iter().map(|t| self.lemmatize(t.as_ref())).collect()
    }

    /// Classes whose gloss occurs among the lemmatized tokens, ascending.
    pub fn matched_classes<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        let lemmas: std::collections::BTreeSet<String> =
            self.lemmatize_tokens(tokens).into_iter().collect();
        (0..self.len())
            .filter(|&c| lemmas.contains(&self.glosses[c]))
            .collect()
    }
}
