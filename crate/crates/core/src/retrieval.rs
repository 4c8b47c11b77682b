//! Candidate feature classes per sentence: BM25 filter, embedding rescoring, collision resolution.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed, EmbeddingBackend, EmbeddingError, EmbeddingVector, SimilarityError};
use crate::parser::SentenceUnit;
use crate::registry::{AnnotatedExample, Registry};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Doc {
    pub terms: HashMap<String, u32>,
    pub len: usize,
    pub classes: Vec<String>,
}

/// Okapi BM25 over stem bags.
///
/// IDF uses the non-negative form `ln(1 + (N - n + 0.5) / (n + 0.5))`, so a term
/// present in every document still scores above zero.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    params: Bm25Params,
    docs: Vec<Bm25Doc>,
    doc_freq: HashMap<String, usize>,
    avg_doc_len: f64,
}

impl Bm25Index {
    pub fn build<I>(docs: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (Vec<String>, Vec<String>)>,
    {
        // Negated so NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
            return Err(RetrievalError::InvalidParams { k1: params.k1, b: params.b });
        }
        let mut out = Vec::new();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for (stems, classes) in docs {
            let mut terms: HashMap<String, u32> = HashMap::new();
            for s in &stems {
                *terms.entry(s.clone()).or_default() += 1;
            }
            for t in terms.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            out.push(Bm25Doc { terms, len: stems.len(), classes });
        }
        let total: usize = out.iter().map(|d| d.len).sum();
        let avg_doc_len = if out.is_empty() { 0.0 } else { total as f64 / out.len() as f64 };
        Ok(Bm25Index { params, docs: out, doc_freq, avg_doc_len })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn docs(&self) -> &[Bm25Doc] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_freq(term) as f64;
        let big_n = self.docs.len() as f64;
        (1.0 + (big_n - n + 0.5) / (n + 0.5)).ln()
    }

    /// Documents with a positive score, best first (ties by doc id).
    pub fn score<S: AsRef<str>>(&self, query: &[S]) -> Vec<(usize, f64)> {
        let mut uniq: Vec<&str> = Vec::new();
        for q in query {
            if !uniq.contains(&q.as_ref()) {
                uniq.push(q.as_ref());
            }
        }
        let Bm25Params { k1, b } = self.params;
        let mut out = Vec::new();
        for (id, doc) in self.docs.iter().enumerate() {
            let mut s = 0.0;
            for q in &uniq {
                let Some(&tf) = doc.terms.get(*q) else { continue };
                let tf = tf as f64;
                let norm = 1.0 - b + b * doc.len as f64 / self.avg_doc_len;
                s += self.idf(q) * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
            if s > 0.0 {
                out.push((id, s));
            }
        }
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }
}

/// Free-function form of [`Bm25Index::score`].
pub fn bm25_score<S: AsRef<str>>(index: &Bm25Index, query_stems: &[S]) -> Vec<(usize, f64)> {
    index.score(query_stems)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub class_id: String,
    pub lexical_score: f64,
    pub semantic_score: f64,
    /// Corpus index of the most similar exemplar of the class.
    pub best_exemplar: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sentence_ref: usize,
    pub candidates: Vec<Candidate>,
    pub threshold: f64,
}

impl CandidateSet {
    pub fn get(&self, class_id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.class_id == class_id)
    }

    pub fn class_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.class_id.as_str()).collect()
    }
}

/// Unscored retrieval result for one class, before thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class: usize,
    pub lexical_score: f64,
    pub semantic_score: f64,
    pub best_exemplar: usize,
}

/// Exemplar corpus indexed for both retrieval stages.
pub struct Retriever {
    index: Bm25Index,
    class_ids: Vec<String>,
    /// Class indices per exemplar (= per BM25 document).
    doc_classes: Vec<Vec<usize>>,
    /// Exemplar indices per class.
    class_docs: Vec<Vec<usize>>,
    vectors: Vec<EmbeddingVector>,
    stopwords: HashSet<String>,
}

impl Retriever {
    pub fn new(
        registry: &Registry,
        corpus: &[AnnotatedExample],
        backend: &dyn EmbeddingBackend,
        params: Bm25Params,
        stopwords: &[String],
    ) -> Result<Self, RetrievalError> {
        let stopwords: HashSet<String> = stopwords.iter().map(|s| crate::nlp::stem(&s.to_lowercase())).collect();
        let class_ids: Vec<String> = registry.classes().iter().map(|c| c.class_id.clone()).collect();
        let doc_classes: Vec<Vec<usize>> = corpus.iter().map(|e| registry.exemplar_classes(e)).collect();
        let mut class_docs = vec![Vec::new(); class_ids.len()];
        for (d, cs) in doc_classes.iter().enumerate() {
            for &c in cs {
                class_docs[c].push(d);
            }
        }
        let docs = corpus.iter().zip(&doc_classes).map(|(e, cs)| {
            let (_, stems) = crate::nlp::tokenize_and_stem(&e.sentence);
            let stems = stems.into_iter().filter(|s| !stopwords.contains(s)).collect();
            (stems, cs.iter().map(|&c| class_ids[c].clone()).collect())
        });
        let index = Bm25Index::build(docs, params)?;
        let texts: Vec<&str> = corpus.iter().map(|e| e.sentence.as_str()).collect();
        let vectors = embed(backend, &texts)?;
        Ok(Retriever { index, class_ids, doc_classes, class_docs, vectors, stopwords })
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn exemplar_vector(&self, i: usize) -> &EmbeddingVector {
        &self.vectors[i]
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn class_docs(&self, class: usize) -> &[usize] {
        &self.class_docs[class]
    }

    pub fn query_stems(&self, sentence: &SentenceUnit) -> Vec<String> {
        sentence
            .stems
            .iter()
            .filter(|s| !self.stopwords.contains(*s))
            .cloned()
            .collect()
    }

    /// Every lexically matched class with its best cosine, unfiltered.
    pub fn score_classes(
        &self,
        sentence: &SentenceUnit,
        vector: &EmbeddingVector,
    ) -> Result<Vec<ClassScore>, RetrievalError> {
        let mut lexical: BTreeMap<usize, f64> = BTreeMap::new();
        for (doc, s) in self.index.score(&self.query_stems(sentence)) {
            for &c in &self.doc_classes[doc] {
                let e = lexical.entry(c).or_insert(0.0);
                *e = e.max(s);
            }
        }
        let mut out = Vec::new();
        for (class, lexical_score) in lexical {
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for &d in &self.class_docs[class] {
                let c = cosine(vector, &self.vectors[d])?;
                if c > best.0 {
                    best = (c, d);
                }
            }
            out.push(ClassScore { class, lexical_score, semantic_score: best.0, best_exemplar: best.1 });
        }
        Ok(out)
    }

    pub fn select_candidates(
        &self,
        sentence: &SentenceUnit,
        vector: &EmbeddingVector,
        threshold: f64,
    ) -> Result<CandidateSet, RetrievalError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(RetrievalError::InvalidThreshold(threshold));
        }
        let scores = self.score_classes(sentence, vector)?;
        Ok(filter_candidates(sentence.index, &scores, &self.class_ids, threshold))
    }
}

/// Keep classes at or above the threshold, sorted by score then class id.
pub fn filter_candidates(sentence_ref: usize, scores: &[ClassScore], class_ids: &[String], threshold: f64) -> CandidateSet {
    let mut candidates: Vec<Candidate> = scores
        .iter()
        .filter(|s| s.semantic_score >= threshold)
        .map(|s| Candidate {
            class_id: class_ids[s.class].clone(),
            lexical_score: s.lexical_score,
            semantic_score: s.semantic_score,
            best_exemplar: s.best_exemplar,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.semantic_score
            .total_cmp(&a.semantic_score)
            .then_with(|| a.class_id.cmp(&b.class_id))
    });
    CandidateSet { sentence_ref, candidates, threshold }
}

/// Assign each class to the sentence scoring highest for it; ties go to the earlier sentence.
pub fn resolve_collisions(per_sentence: &[CandidateSet]) -> BTreeMap<String, usize> {
    let mut best: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for set in per_sentence {
        for c in &set.candidates {
            match best.get(&c.class_id) {
                Some(&(score, _)) if c.semantic_score <= score => {}
                _ => {
                    best.insert(c.class_id.clone(), (c.semantic_score, set.sentence_ref));
                }
            }
        }
    }
    best.into_iter().map(|(k, (_, s))| (k, s)).collect()
}
