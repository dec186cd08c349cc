//! Multimodal bag-of-words data model: joint vocabulary, documents, corpus
//! files and annotation weighting.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decoded form of a joint vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Token {
    Visual {
        word: usize,
        region: usize,
    },
    /// Index into the annotation word list.
    Annotation(usize),
}

/// Single id space over every (visual word, region) pair followed by every
/// annotation word. Pair ids are row-major: `region * n_visual + word`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointVocabulary {
    n_visual: usize,
    n_regions: usize,
    annotation_words: Vec<String>,
    annotation_index: HashMap<String, usize>,
}

impl JointVocabulary {
    pub fn new(n_visual: usize, n_regions: usize, annotation_words: Vec<String>) -> Result<Self> {
        if n_visual == 0 || n_regions == 0 {
            return Err(Error::Config(format!(
                "vocabulary needs at least one visual word and one region (got {n_visual}, {n_regions})"
            )));
        }
        let mut annotation_index = HashMap::with_capacity(annotation_words.len());
        for (i, w) in annotation_words.iter().enumerate() {
            if annotation_index.insert(w.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate annotation word `{w}`")));
            }
        }
        Ok(Self {
            n_visual,
            n_regions,
            annotation_words,
            annotation_index,
        })
    }

    /// Vocabulary whose annotation words are named `a0`, `a1`, ...
    pub fn with_anonymous_annotations(n_visual: usize, n_regions: usize, n_annotation: usize) -> Result<Self> {
        Self::new(
            n_visual,
            n_regions,
            (0..n_annotation).map(|i| format!("a{i}")).collect(),
        )
    }

    pub fn n_visual(&self) -> usize {
        self.n_visual
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_annotation(&self) -> usize {
        self.annotation_words.len()
    }

    /// Number of visual/region pair ids; also the first annotation id.
    pub fn n_pairs(&self) -> usize {
        self.n_visual * self.n_regions
    }

    /// Total vocabulary size Q.
    pub fn size(&self) -> usize {
        self.n_pairs() + self.n_annotation()
    }

    pub fn annotation_words(&self) -> &[String] {
        &self.annotation_words
    }

    pub fn annotation_ids(&self) -> std::ops::Range<usize> {
        self.n_pairs()..self.size()
    }

    pub fn is_annotation(&self, id: usize) -> bool {
        id >= self.n_pairs() && id < self.size()
    }

    pub fn encode_visual(&self, word: usize, region: usize) -> Result<usize> {
        if word >= self.n_visual || region >= self.n_regions {
            return Err(Error::Data(format!(
                "visual word {word} / region {region} outside {}x{}",
                self.n_visual, self.n_regions
            )));
        }
        Ok(region * self.n_visual + word)
    }

    pub fn encode_annotation(&self, word: &str) -> Option<usize> {
        self.annotation_index.get(word).map(|i| self.n_pairs() + i)
    }

    pub fn decode(&self, id: usize) -> Option<Token> {
        if id < self.n_pairs() {
            Some(Token::Visual {
                word: id % self.n_visual,
                region: id / self.n_visual,
            })
        } else if id < self.size() {
            Some(Token::Annotation(id - self.n_pairs()))
        } else {
            None
        }
    }

    pub fn annotation_word(&self, id: usize) -> Option<&str> {
        match self.decode(id)? {
            Token::Annotation(i) => Some(&self.annotation_words[i]),
            Token::Visual { .. } => None,
        }
    }
}

pub fn build_vocabulary(n_visual: usize, n_regions: usize, annotation_words: &[&str]) -> Result<JointVocabulary> {
    JointVocabulary::new(
        n_visual,
        n_regions,
        annotation_words.iter().map(|s| s.to_string()).collect(),
    )
}

/// Sparse word counts over the joint vocabulary plus optional supervision.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultimodalDocument {
    /// `(id, count)` sorted by id, ids unique, counts > 0.
    counts: Vec<(usize, u32)>,
    labels: Vec<usize>,
    features: Option<Vec<f64>>,
}

impl MultimodalDocument {
    /// Builds a document; repeated ids are summed and zero counts dropped.
    pub fn new(
        counts: impl IntoIterator<Item = (usize, u32)>,
        labels: impl IntoIterator<Item = usize>,
        features: Option<Vec<f64>>,
    ) -> Self {
        let mut counts: Vec<(usize, u32)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        counts.sort_unstable_by_key(|&(id, _)| id);
        counts.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        let mut labels: Vec<usize> = labels.into_iter().collect();
        labels.sort_unstable();
        labels.dedup();
        Self {
            counts,
            labels,
            features,
        }
    }

    pub fn from_tokens(tokens: &[usize]) -> Self {
        Self::new(tokens.iter().map(|&t| (t, 1)), [], None)
    }

    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> Option<&[f64]> {
        self.features.as_deref()
    }

    pub fn set_labels(&mut self, labels: Vec<usize>) {
        *self = Self::new(self.counts.clone(), labels, self.features.take());
    }

    pub fn count_of(&self, id: usize) -> u32 {
        self.counts
            .binary_search_by_key(&id, |&(i, _)| i)
            .map(|k| self.counts[k].1)
            .unwrap_or(0)
    }

    /// Total number of word tokens D_v.
    pub fn len(&self) -> usize {
        self.counts.iter().map(|&(_, c)| c as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Tokens in ascending id order, each repeated by its count.
    pub fn tokens(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        for &(id, c) in &self.counts {
            out.extend(std::iter::repeat_n(id, c as usize));
        }
        out
    }

    /// Copy of the document restricted to visual/region ids.
    pub fn visual_only(&self, vocab: &JointVocabulary) -> Self {
        Self {
            counts: self
                .counts
                .iter()
                .copied()
                .filter(|&(id, _)| !vocab.is_annotation(id))
                .collect(),
            labels: self.labels.clone(),
            features: self.features.clone(),
        }
    }

    pub fn annotation_ids(&self, vocab: &JointVocabulary) -> Vec<usize> {
        self.counts
            .iter()
            .map(|&(id, _)| id)
            .filter(|&id| vocab.is_annotation(id))
            .collect()
    }

    pub fn annotation_token_count(&self, vocab: &JointVocabulary) -> usize {
        self.counts
            .iter()
            .filter(|&&(id, _)| vocab.is_annotation(id))
            .map(|&(_, c)| c as usize)
            .sum()
    }

    pub fn dense_counts(&self, q: usize) -> Vec<f64> {
        let mut x = vec![0.0; q];
        for &(id, c) in &self.counts {
            x[id] = c as f64;
        }
        x
    }

    pub fn validate(&self, vocab: &JointVocabulary, n_classes: usize, n_features: usize) -> Result<()> {
        if let Some(&(id, _)) = self.counts.last() {
            if id >= vocab.size() {
                return Err(Error::Data(format!(
                    "word id {id} outside vocabulary of size {}",
                    vocab.size()
                )));
            }
        }
        if let Some(&y) = self.labels.last() {
            if y >= n_classes {
                return Err(Error::Data(format!("label {y} outside {n_classes} classes")));
            }
        }
        if let Some(f) = &self.features {
            Error::check_dim("global features", n_features, f.len())?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite global feature".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocabulary: JointVocabulary,
    pub documents: Vec<MultimodalDocument>,
    pub n_classes: usize,
    pub n_features: usize,
}

impl Corpus {
    pub fn new(
        vocabulary: JointVocabulary,
        documents: Vec<MultimodalDocument>,
        n_classes: usize,
        n_features: usize,
    ) -> Result<Self> {
        for (i, d) in documents.iter().enumerate() {
            d.validate(&vocabulary, n_classes, n_features)
                .map_err(|e| Error::Data(format!("document {i}: {e}")))?;
        }
        Ok(Self {
            vocabulary,
            documents,
            n_classes,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// True when some document carries more (or fewer) than one label.
    pub fn is_multi_label(&self) -> bool {
        self.documents.iter().any(|d| d.labels().len() != 1)
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            n_visual: self.vocabulary.n_visual(),
            n_regions: self.vocabulary.n_regions(),
            n_annotation: self.vocabulary.n_annotation(),
            n_classes: self.n_classes,
            n_features: self.n_features,
            annotation_words: Some(self.vocabulary.annotation_words().to_vec()),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            vocabulary: self.vocabulary.clone(),
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            n_classes: self.n_classes,
            n_features: self.n_features,
        }
    }
}

/// Per-word weights: 1 for visual/region ids, rho for annotation ids.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    omega: Vec<f64>,
}

impl WeightVector {
    pub fn new(vocab: &JointVocabulary, rho: f64) -> Self {
        let mut omega = vec![1.0; vocab.size()];
        omega[vocab.n_pairs()..].fill(rho);
        Self { omega }
    }

    pub fn from_raw(omega: Vec<f64>) -> Self {
        Self { omega }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn get(&self, id: usize) -> f64 {
        self.omega[id]
    }
}

/// Dense histogram `counts ⊙ omega` over the whole vocabulary.
pub fn to_weighted_histogram(
    doc: &MultimodalDocument,
    omega: &WeightVector,
    vocab: &JointVocabulary,
) -> Result<Vec<f64>> {
    Error::check_dim("weight vector", vocab.size(), omega.len())?;
    let mut x = vec![0.0; omega.len()];
    for &(id, c) in doc.counts() {
        if id >= x.len() {
            return Err(Error::Data(format!("word id {id} outside vocabulary")));
        }
        x[id] = c as f64 * omega.get(id);
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `LABELS | VISUAL | ANNOTATIONS | FEATURES` lines plus a TOML sidecar header.
    TextSparse,
    /// JSON lines: one header record followed by one record per document.
    RecordLines,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-sparse" | "text" => Ok(Self::TextSparse),
            "record-lines" | "jsonl" => Ok(Self::RecordLines),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub n_visual: usize,
    pub n_regions: usize,
    pub n_annotation: usize,
    #[serde(rename = "C")]
    pub n_classes: usize,
    #[serde(rename = "N_f", default)]
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_words: Option<Vec<String>>,
}

impl CorpusHeader {
    pub fn vocabulary(&self) -> Result<JointVocabulary> {
        match &self.annotation_words {
            Some(words) => {
                Error::check_dim("annotation word list", self.n_annotation, words.len())?;
                JointVocabulary::new(self.n_visual, self.n_regions, words.clone())
            }
            None => JointVocabulary::with_anonymous_annotations(self.n_visual, self.n_regions, self.n_annotation),
        }
    }
}

/// Sidecar header location for a text-sparse corpus: `<path>.header`.
pub fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".header");
    PathBuf::from(s)
}

pub fn parse_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match format {
        CorpusFormat::TextSparse => {
            let hp = header_path(path);
            let header_text =
                fs::read_to_string(&hp).map_err(|e| Error::io(format!("reading header {}", hp.display()), e))?;
            let header: CorpusHeader = toml::from_str(&header_text).map_err(|e| Error::Parse {
                path: hp.clone(),
                line: 0,
                field: "header",
                message: e.to_string(),
            })?;
            parse_text_sparse(&text, &header, path)
        }
        CorpusFormat::RecordLines => parse_record_lines(&text, path),
    }
}

pub fn write_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let (body, header) = match format {
        CorpusFormat::TextSparse => (
            format_text_sparse(corpus),
            Some(toml::to_string(&corpus.header()).map_err(|e| Error::Format(e.to_string()))?),
        ),
        CorpusFormat::RecordLines => (format_record_lines(corpus)?, None),
    };
    fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    if let Some(header) = header {
        let hp = header_path(path);
        fs::write(&hp, header).map_err(|e| Error::io(format!("writing {}", hp.display()), e))?;
    }
    Ok(())
}

struct LineCtx<'a> {
    path: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, field: &'static str, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            field,
            message: message.into(),
        }
    }
}

fn parse_count(ctx: &LineCtx<'_>, field: &'static str, s: &str) -> Result<u32> {
    let c: i64 = s.parse().map_err(|_| ctx.err(field, format!("bad count `{s}`")))?;
    if c < 0 {
        return Err(ctx.err(field, format!("negative count {c}")));
    }
    u32::try_from(c).map_err(|_| ctx.err(field, format!("count {c} too large")))
}

fn parse_id(ctx: &LineCtx<'_>, field: &'static str, s: &str) -> Result<usize> {
    s.parse().map_err(|_| ctx.err(field, format!("bad word id `{s}`")))
}

fn check_word(
    ctx: &LineCtx<'_>,
    field: &'static str,
    vocab: &JointVocabulary,
    id: usize,
    annotation: bool,
) -> Result<()> {
    if id >= vocab.size() {
        return Err(ctx.err(field, format!("id {id} >= Q = {}", vocab.size())));
    }
    if vocab.is_annotation(id) != annotation {
        let expected = if annotation { "annotation" } else { "visual/region" };
        return Err(ctx.err(field, format!("id {id} is not a {expected} id")));
    }
    Ok(())
}

fn parse_text_sparse(text: &str, header: &CorpusHeader, path: &Path) -> Result<Corpus> {
    let vocab = header.vocabulary()?;
    let mut documents = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = LineCtx { path, line: i + 1 };
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 4 {
            return Err(ctx.err(
                "record",
                format!("expected 4 `|`-separated fields, found {}", fields.len()),
            ));
        }

        let mut labels = Vec::new();
        for tok in fields[0].split_whitespace() {
            let y: usize = tok
                .parse()
                .map_err(|_| ctx.err("labels", format!("bad label `{tok}`")))?;
            if y >= header.n_classes {
                return Err(ctx.err("labels", format!("label {y} >= C = {}", header.n_classes)));
            }
            labels.push(y);
        }

        let mut counts = Vec::new();
        for tok in fields[1].split_whitespace() {
            let (id, c) = tok
                .split_once(':')
                .ok_or_else(|| ctx.err("visual", format!("expected id:count, found `{tok}`")))?;
            let id = parse_id(&ctx, "visual", id)?;
            check_word(&ctx, "visual", &vocab, id, false)?;
            counts.push((id, parse_count(&ctx, "visual", c)?));
        }
        for tok in fields[2].split_whitespace() {
            let (id, c) = match tok.split_once(':') {
                Some((id, c)) => (id, parse_count(&ctx, "annotations", c)?),
                None => (tok, 1),
            };
            let id = parse_id(&ctx, "annotations", id)?;
            check_word(&ctx, "annotations", &vocab, id, true)?;
            counts.push((id, c));
        }

        let feats: Vec<f64> = fields[3]
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ctx.err("features", format!("bad feature `{t}`")))
            })
            .collect::<Result<_>>()?;
        let features = if feats.is_empty() {
            None
        } else {
            if feats.len() != header.n_features {
                return Err(ctx.err(
                    "features",
                    format!("expected {} values, found {}", header.n_features, feats.len()),
                ));
            }
            Some(feats)
        };
        documents.push(MultimodalDocument::new(counts, labels, features));
    }
    Corpus::new(vocab, documents, header.n_classes, header.n_features)
}

fn format_text_sparse(corpus: &Corpus) -> String {
    let vocab = &corpus.vocabulary;
    let mut out = String::new();
    for doc in &corpus.documents {
        let labels: Vec<String> = doc.labels().iter().map(|y| y.to_string()).collect();
        let mut visual = Vec::new();
        let mut annotations = Vec::new();
        for &(id, c) in doc.counts() {
            if vocab.is_annotation(id) {
                annotations.push(if c == 1 { id.to_string() } else { format!("{id}:{c}") });
            } else {
                visual.push(format!("{id}:{c}"));
            }
        }
        let features: Vec<String> = doc
            .features()
            .map(|f| f.iter().map(|v| format!("{v:?}")).collect())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{} | {} | {} | {}",
            labels.join(" "),
            visual.join(" "),
            annotations.join(" "),
            features.join(" ")
        );
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(CorpusHeader),
    Document {
        #[serde(default)]
        labels: Vec<i64>,
        #[serde(default)]
        visual: Vec<(i64, i64)>,
        #[serde(default)]
        annotations: Vec<(i64, i64)>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<f64>>,
    },
}

fn parse_record_lines(text: &str, path: &Path) -> Result<Corpus> {
    let mut header: Option<(CorpusHeader, JointVocabulary)> = None;
    let mut documents = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = LineCtx { path, line: i + 1 };
        let record: Record = serde_json::from_str(line).map_err(|e| ctx.err("record", e.to_string()))?;
        match record {
            Record::Header(h) => {
                if header.is_some() {
                    return Err(ctx.err("record", "second header record"));
                }
                let vocab = h.vocabulary()?;
                header = Some((h, vocab));
            }
            Record::Document {
                labels,
                visual,
                annotations,
                features,
            } => {
                let (h, vocab) = header
                    .as_ref()
                    .ok_or_else(|| ctx.err("record", "document before header record"))?;
                let mut ys = Vec::with_capacity(labels.len());
                for y in labels {
                    if y < 0 || y as usize >= h.n_classes {
                        return Err(ctx.err("labels", format!("label {y} outside 0..{}", h.n_classes)));
                    }
                    ys.push(y as usize);
                }
                let mut counts = Vec::new();
                for (field, pairs, anno) in [("visual", &visual, false), ("annotations", &annotations, true)] {
                    for &(id, c) in pairs {
                        if id < 0 {
                            return Err(ctx.err(field, format!("negative id {id}")));
                        }
                        if c < 0 {
                            return Err(ctx.err(field, format!("negative count {c}")));
                        }
                        check_word(&ctx, field, vocab, id as usize, anno)?;
                        let c = u32::try_from(c).map_err(|_| ctx.err(field, format!("count {c} too large")))?;
                        counts.push((id as usize, c));
                    }
                }
                if let Some(f) = &features {
                    if f.len() != h.n_features {
                        return Err(ctx.err(
                            "features",
                            format!("expected {} values, found {}", h.n_features, f.len()),
                        ));
                    }
                }
                documents.push(MultimodalDocument::new(counts, ys, features));
            }
        }
    }
    let (h, vocab) = header.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        field: "record",
        message: "missing header record".into(),
    })?;
    Corpus::new(vocab, documents, h.n_classes, h.n_features)
}

fn format_record_lines(corpus: &Corpus) -> Result<String> {
    let vocab = &corpus.vocabulary;
    let mut out = serde_json::to_string(&Record::Header(corpus.header())).map_err(|e| Error::Format(e.to_string()))?;
    out.push('\n');
    for doc in &corpus.documents {
        let (annotations, visual): (Vec<_>, Vec<_>) = doc
            .counts()
            .iter()
            .map(|&(id, c)| (id as i64, c as i64))
            .partition(|&(id, _)| vocab.is_annotation(id as usize));
        let record = Record::Document {
            labels: doc.labels().iter().map(|&y| y as i64).collect(),
            visual,
            annotations,
            features: doc.features().map(|f| f.to_vec()),
        };
        out.push_str(&serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}
