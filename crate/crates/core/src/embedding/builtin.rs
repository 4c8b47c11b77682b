use std::collections::{BTreeMap, HashMap, HashSet};

use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, EmbeddingError};
use crate::nlp::{is_number, tokenize};

pub const DEFAULT_DIM: usize = 8192;
const NGRAM_MIN: usize = 3;
const NGRAM_MAX: usize = 5;

/// TF-IDF over hashed character 3-5-grams of the stemmed sentence.
///
/// Every number is folded to `#` first: measurements are read by the numeric
/// mapper, and similarity should not hinge on which digits a sentence carries.
///
/// IDF is fitted on a corpus (normally the exemplar sentences) with the smooth
/// form `ln((1 + N) / (1 + df)) + 1`; grams never seen get the maximum weight.
#[derive(Debug, Clone)]
pub struct BuiltinEmbedder {
    dim: usize,
    idf: HashMap<String, f64>,
    unseen_idf: f64,
    backend_id: String,
}

/// Stems joined by spaces. Numbers fold to `#`, and a unit right after a number
/// folds to its dimension, so "1.2 cm" and "12 mm" read alike.
pub fn normalized_phrase(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for t in tokenize(text) {
        let after_number = out.last().is_some_and(|p| p == "#");
        let folded = if is_number(&t.text) {
            "#".to_string()
        } else {
            match crate::units::dimension(&t.text).filter(|_| after_number) {
                Some(crate::units::Dimension::Length) => "length".to_string(),
                Some(crate::units::Dimension::Volume) => "volume".to_string(),
                None => t.stem,
            }
        };
        out.push(folded);
    }
    out.join(" ")
}

fn grams(text: &str) -> Vec<String> {
    let phrase = normalized_phrase(text);
    if phrase.is_empty() {
        return vec![];
    }
    let chars: Vec<char> = format!(" {phrase} ").chars().collect();
    let mut out = Vec::new();
    for n in NGRAM_MIN..=NGRAM_MAX {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl BuiltinEmbedder {
    pub fn fit<I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::fit_with_dim(corpus, DEFAULT_DIM)
    }

    pub fn fit_with_dim<I, S>(corpus: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        assert!(dim > 0, "dim must be positive");
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in corpus {
            n += 1;
            let uniq: HashSet<String> = grams(doc.as_ref()).into_iter().collect();
            for g in uniq {
                *df.entry(g).or_default() += 1;
            }
        }
        let total = (1 + n) as f64;
        let mut hasher = Sha256::new();
        hasher.update(format!("dim={dim};n={n};"));
        let idf = df
            .iter()
            .map(|(g, &d)| {
                hasher.update(format!("{g}\t{d}\n"));
                (g.clone(), (total / (1 + d) as f64).ln() + 1.0)
            })
            .collect();
        let fp = hex::encode(hasher.finalize());
        BuiltinEmbedder {
            dim,
            idf,
            unseen_idf: total.ln() + 1.0,
            backend_id: format!("builtin-chargram3to5-d{dim}-{}", &fp[..12]),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for g in grams(text) {
            let w = self.idf.get(&g).copied().unwrap_or(self.unseen_idf);
            v[(fnv1a(&g) % self.dim as u64) as usize] += w;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingBackend for BuiltinEmbedder {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v = self.vector(t);
                if v.iter().all(|x| *x == 0.0) {
                    Err(EmbeddingError::EmptyText(i))
                } else {
                    Ok(v)
                }
            })
            .collect()
    }
}
