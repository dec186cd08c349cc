//! Metrics, the downstream linear classifier, retrieval, annotation
//! generation and inspection of learned class/word associations.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, JointVocabulary, MultimodalDocument, WeightVector};
use crate::deep::{prepare_input, DeepParams, DeepSettings, Dropout};
use crate::error::{Error, Result};
use crate::math::{log_softmax_in_place, sigmoid, softmax};
use crate::model::{Model, Network};
use crate::nade::{top_k, OrderedDocument, ShallowParams};
use crate::wordtree::WordTree;

/// Ids ordered by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub ids: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedPrediction {
    pub fn from_scored(scored: Vec<(usize, f64)>, k: usize) -> Self {
        let (ids, scores) = top_k(scored, k).into_iter().unzip();
        Self { ids, scores }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// F-measure of a predicted word set against the ground truth, after
/// removing repeats. `None` when the ground truth is empty.
pub fn f_measure(predicted: &[usize], ground_truth: &[usize]) -> Option<f64> {
    let p: BTreeSet<usize> = predicted.iter().copied().collect();
    let g: BTreeSet<usize> = ground_truth.iter().copied().collect();
    if g.is_empty() {
        return None;
    }
    let hit = p.intersection(&g).count();
    // harmonic mean of hit/|P| and hit/|G|, with a single rounding
    Some((2 * hit) as f64 / (p.len() + g.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FMeasureSummary {
    pub mean: f64,
    pub documents: usize,
    /// Documents skipped because their ground truth is empty.
    pub excluded: Vec<usize>,
}

/// Mean F-measure over documents with non-empty ground truth.
pub fn mean_f_measure(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<FMeasureSummary> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut excluded = Vec::new();
    for (i, (p, g)) in pairs.iter().enumerate() {
        match f_measure(p, g) {
            Some(f) => {
                sum += f;
                used += 1;
            }
            None => excluded.push(i),
        }
    }
    if used == 0 {
        return Err(Error::Data("no document has ground-truth annotations".into()));
    }
    Ok(FMeasureSummary {
        mean: sum / used as f64,
        documents: used,
        excluded,
    })
}

/// Item indices by descending score, ties by ascending index.
fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean of precision-at-rank over the relevant items, ranked by descending
/// score. `None` when nothing is relevant.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Result<Option<f64>> {
    Error::check_dim("relevance flags", scores.len(), relevant.len())?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, i) in rank_order(scores).into_iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// `(recall, precision)` after each ranked item.
pub fn pr_curve(scores: &[f64], relevant: &[bool]) -> Result<Vec<(f64, f64)>> {
    Error::check_dim("relevance flags", scores.len(), relevant.len())?;
    let total = relevant.iter().filter(|&&r| r).count();
    if total == 0 {
        return Err(Error::Data("precision-recall curve needs a relevant item".into()));
    }
    let mut hits = 0usize;
    Ok(rank_order(scores)
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            hits += relevant[i] as usize;
            (hits as f64 / total as f64, hits as f64 / (rank + 1) as f64)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub map: f64,
    /// AP per class; `None` for classes with no positive document.
    pub per_class: Vec<Option<f64>>,
}

/// Mean average precision over classes. `scores[doc][class]`, `labels[doc]`
/// the positive classes of each document.
pub fn mean_ap(scores: &[Vec<f64>], labels: &[&[usize]], n_classes: usize) -> Result<MapSummary> {
    Error::check_dim("label lists", scores.len(), labels.len())?;
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let column: Vec<f64> = scores
            .iter()
            .map(|s| {
                Error::check_dim("class scores", n_classes, s.len())?;
                Ok(s[c])
            })
            .collect::<Result<_>>()?;
        let relevant: Vec<bool> = labels.iter().map(|l| l.contains(&c)).collect();
        per_class.push(average_precision(&column, &relevant)?);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Data("no class has a positive document".into()));
    }
    Ok(MapSummary {
        map: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
    })
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    Error::check_dim("true labels", predicted.len(), truth.len())?;
    if predicted.is_empty() {
        return Err(Error::Data("accuracy of an empty label list".into()));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// `exp(-Σ_docs mean_o log p(v) / Σ_docs D)` with `orderings_per_doc`
/// random orderings per document. Empty documents contribute nothing.
pub fn perplexity<R: Rng + ?Sized>(
    corpus: &Corpus,
    params: &ShallowParams,
    tree: &WordTree,
    orderings_per_doc: usize,
    rng: &mut R,
) -> Result<f64> {
    perplexity_with(corpus, orderings_per_doc, rng, |_, ordering| {
        params.doc_log_likelihood(ordering, tree)
    })
}

fn perplexity_with<R: Rng + ?Sized>(
    corpus: &Corpus,
    orderings_per_doc: usize,
    rng: &mut R,
    mut log_likelihood: impl FnMut(&MultimodalDocument, &OrderedDocument) -> Result<f64>,
) -> Result<f64> {
    if orderings_per_doc == 0 {
        return Err(Error::Config(
            "perplexity needs at least one ordering per document".into(),
        ));
    }
    let mut total_ll = 0.0;
    let mut total_words = 0usize;
    for doc in &corpus.documents {
        if doc.is_empty() {
            continue;
        }
        let mut ll = 0.0;
        for _ in 0..orderings_per_doc {
            ll += log_likelihood(doc, &OrderedDocument::shuffled(doc, rng))?;
        }
        total_ll += ll / orderings_per_doc as f64;
        total_words += doc.len();
    }
    if total_words == 0 {
        return Err(Error::Data("perplexity of a corpus with no words".into()));
    }
    Ok((-total_ll / total_words as f64).exp())
}

/// `log p(v)` of a deep model along one ordering: each word is predicted by
/// the output softmax from the histogram of the words before it.
pub fn deep_ordering_log_likelihood(
    params: &DeepParams,
    settings: &DeepSettings,
    vocab: &JointVocabulary,
    doc: &MultimodalDocument,
    ordering: &OrderedDocument,
) -> Result<f64> {
    let omega = WeightVector::new(vocab, settings.rho);
    Error::check_dim("vocabulary", params.vocab_size(), omega.len())?;
    let dropout = if settings.dropout_rate > 0.0 {
        Dropout::Scale(1.0 - settings.dropout_rate)
    } else {
        Dropout::Off
    };
    let mut prefix: Vec<(usize, u32)> = Vec::new();
    let mut ll = 0.0;
    for &w in &ordering.tokens {
        let x = prepare_input(&prefix, &omega, settings.normalize_input);
        let fwd = params.forward(&x, doc.features(), dropout)?;
        ll += params.output_log_probs(fwd.top())[w];
        match prefix.binary_search_by_key(&w, |&(id, _)| id) {
            Ok(i) => prefix[i].1 += 1,
            Err(i) => prefix.insert(i, (w, 1)),
        }
    }
    Ok(ll)
}

/// Perplexity of any generative model; deep models use
/// [`deep_ordering_log_likelihood`].
pub fn model_perplexity<R: Rng + ?Sized>(
    model: &Model,
    corpus: &Corpus,
    orderings_per_doc: usize,
    rng: &mut R,
) -> Result<f64> {
    model.check_corpus(corpus)?;
    match &model.network {
        Network::Shallow { params, tree } => perplexity(corpus, params, tree, orderings_per_doc, rng),
        Network::Deep { params, settings } => perplexity_with(corpus, orderings_per_doc, rng, |doc, ordering| {
            deep_ordering_log_likelihood(params, settings, &corpus.vocabulary, doc, ordering)
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Softmax,
    OneVsRest,
}

/// Linear classifier on raw representations. Standardization learned at
/// fit time is already folded into `weights` and `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub kind: ClassifierKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// L2 penalty on the weights (not the bias), per training example.
    pub l2: f64,
    /// Stop when the largest gradient entry falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            tolerance: 1e-6,
            max_iterations: 5000,
        }
    }
}

impl LinearClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = &self.bias + &self.weights.dot(&Array1::from_vec(x.to_vec()));
        match self.kind {
            ClassifierKind::Softmax => softmax(z.as_slice().expect("contiguous")),
            ClassifierKind::OneVsRest => z.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::nade::argmax(&self.scores(x))
    }
}

/// Regularized maximum-likelihood fit by gradient descent with
/// Barzilai-Borwein steps and a backtracking safeguard. Deterministic: it
/// starts from zero and uses no randomness.
pub fn fit_linear_classifier(
    representations: &[Vec<f64>],
    labels: &[&[usize]],
    n_classes: usize,
    kind: ClassifierKind,
    options: FitOptions,
) -> Result<LinearClassifier> {
    Error::check_dim("label lists", representations.len(), labels.len())?;
    let n = representations.len();
    if n == 0 {
        return Err(Error::Data("no training examples".into()));
    }
    let h = representations[0].len();
    let mut x = Array2::<f64>::zeros((n, h));
    for (i, r) in representations.iter().enumerate() {
        Error::check_dim("representation", h, r.len())?;
        x.row_mut(i).assign(&Array1::from_vec(r.clone()));
    }
    let mut y = Array2::<f64>::zeros((n, n_classes));
    let mut present = BTreeSet::new();
    for (i, l) in labels.iter().enumerate() {
        if kind == ClassifierKind::Softmax && l.len() != 1 {
            return Err(Error::Data(format!(
                "example {i} needs exactly one label for a softmax classifier"
            )));
        }
        for &c in *l {
            if c >= n_classes {
                return Err(Error::Data(format!("example {i} has label {c} >= {n_classes}")));
            }
            y[[i, c]] = 1.0;
            present.insert(c);
        }
    }
    if kind == ClassifierKind::Softmax && present.len() < 2 {
        return Err(Error::Data("classifier needs at least two classes present".into()));
    }
    if kind == ClassifierKind::OneVsRest && y.iter().all(|&v| v == 1.0) {
        return Err(Error::Data("every example carries every label".into()));
    }

    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let xs = (&x - &mean) / &std;

    // theta = [W | b] as a C x (H+1) matrix
    let objective = |theta: &Array2<f64>| -> (f64, Array2<f64>) {
        let w = theta.slice(ndarray::s![.., ..h]);
        let b = theta.column(h);
        let mut z = xs.dot(&w.t());
        z += &b;
        let mut loss = 0.0;
        let mut dz = Array2::<f64>::zeros(z.raw_dim());
        for i in 0..n {
            let zi = z.row(i);
            let yi = y.row(i);
            match kind {
                ClassifierKind::Softmax => {
                    let mut lp = zi.to_vec();
                    log_softmax_in_place(&mut lp);
                    for c in 0..n_classes {
                        loss -= yi[c] * lp[c];
                        dz[[i, c]] = lp[c].exp() - yi[c];
                    }
                }
                ClassifierKind::OneVsRest => {
                    for c in 0..n_classes {
                        let v = zi[c];
                        // log(1 + e^v) - y v
                        loss += v.max(0.0) + (-v.abs()).exp().ln_1p() - yi[c] * v;
                        dz[[i, c]] = 1.0 / (1.0 + (-v).exp()) - yi[c];
                    }
                }
            }
        }
        let nf = n as f64;
        loss /= nf;
        dz /= nf;
        let mut grad = Array2::<f64>::zeros(theta.raw_dim());
        grad.slice_mut(ndarray::s![.., ..h]).assign(&dz.t().dot(&xs));
        grad.column_mut(h).assign(&dz.sum_axis(Axis(0)));
        loss += 0.5 * options.l2 * w.iter().map(|v| v * v).sum::<f64>();
        grad.slice_mut(ndarray::s![.., ..h]).scaled_add(options.l2, &w);
        (loss, grad)
    };

    let mut theta = Array2::<f64>::zeros((n_classes, h + 1));
    let (mut f, mut g) = objective(&theta);
    let mut step = 1.0;
    for _ in 0..options.max_iterations {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < options.tolerance {
            break;
        }
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let mut trial_step = step;
        let (next, f_next, g_next) = loop {
            let cand = &theta - &(&g * trial_step);
            let (fc, gc) = objective(&cand);
            if fc <= f - 1e-4 * trial_step * gg || trial_step < 1e-12 {
                break (cand, fc, gc);
            }
            trial_step *= 0.5;
        };
        let s = &next - &theta;
        let dg = &g_next - &g;
        let sy: f64 = (&s * &dg).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 1e-300 { (ss / sy).clamp(1e-6, 1e6) } else { 1.0 };
        let converged = (f - f_next).abs() <= 1e-15 * f.abs().max(1.0) && ss < 1e-30;
        theta = next;
        f = f_next;
        g = g_next;
        if converged {
            break;
        }
    }

    // fold standardization: w' = w / std, b' = b - w' . mean
    let mut weights = theta.slice(ndarray::s![.., ..h]).to_owned();
    weights /= &std;
    let bias = &theta.column(h) - &weights.dot(&mean);
    if !(weights.iter().all(|v| v.is_finite()) && bias.iter().all(|v| v.is_finite())) {
        return Err(Error::Data("linear classifier fit diverged".into()));
    }
    Ok(LinearClassifier { weights, bias, kind })
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub ranking: RankedPrediction,
    /// Set when `k` exceeded the collection and the full ranking came back.
    pub truncated_k: bool,
}

/// Top-`k` collection items by cosine similarity to the query.
pub fn cosine_retrieve(query: &[f64], collection: &[Vec<f64>], k: usize) -> Result<Retrieval> {
    let scored = collection
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Error::check_dim("collection vector", query.len(), c.len())?;
            Ok((i, cosine_similarity(query, c)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Retrieval {
        ranking: RankedPrediction::from_scored(scored, k),
        truncated_k: k > collection.len(),
    })
}

/// Top-`k` annotation words for the visual words of `doc`. Deep models
/// renormalize the output softmax over annotation ids; shallow models rank
/// by tree probability.
pub fn generate_text(
    model: &Model,
    doc: &MultimodalDocument,
    vocab: &JointVocabulary,
    k: usize,
) -> Result<RankedPrediction> {
    if vocab.n_annotation() == 0 {
        return Err(Error::Config("vocabulary has no annotation words".into()));
    }
    Error::check_dim("vocabulary size Q", model.vocab_size(), vocab.size())?;
    doc.validate(vocab, usize::MAX, model.n_features)?;
    match &model.network {
        Network::Shallow { params, tree } => {
            let scored = params.predict_annotations(doc, vocab, tree, k.min(vocab.n_annotation()))?;
            Ok(RankedPrediction::from_scored(scored, k))
        }
        Network::Deep { params, settings } => {
            let dist = params.annotation_distribution(doc, vocab, settings)?;
            Ok(RankedPrediction::from_scored(dist, k))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Associations {
    pub topics: Vec<usize>,
    pub visual_words: Vec<usize>,
    pub annotation_words: Vec<usize>,
}

/// Hidden units with the largest weight to `class`, and the visual and
/// annotation words with the largest average `W` row over those units.
pub fn class_word_associations(
    params: &ShallowParams,
    vocab: &JointVocabulary,
    class: usize,
    top_topics: usize,
    top_words: usize,
) -> Result<Associations> {
    let h = params.hidden();
    if class >= params.n_classes() {
        return Err(Error::Config(format!(
            "class {class} out of range (C = {})",
            params.n_classes()
        )));
    }
    if top_topics == 0 || top_topics > h {
        return Err(Error::Config(format!(
            "top_topics must be in 1..={h}, got {top_topics}"
        )));
    }
    Error::check_dim("vocabulary size Q", params.vocab_size(), vocab.size())?;
    let u_row = params.u.row(class);
    let topics: Vec<usize> = top_k(u_row.iter().copied().enumerate().collect(), top_topics)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let mut score = Array1::<f64>::zeros(params.vocab_size());
    for &t in &topics {
        score += &params.w.row(t);
    }
    score /= topics.len() as f64;
    let pick = |ids: std::ops::Range<usize>| -> Vec<usize> {
        top_k(ids.map(|i| (i, score[i])).collect(), top_words)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    };
    Ok(Associations {
        topics,
        visual_words: pick(0..vocab.n_pairs()),
        annotation_words: pick(vocab.annotation_ids()),
    })
}

/// One evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub split: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(metric: impl Into<String>, split: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            split: split.into(),
            value,
        }
    }
}

/// JSON object per line.
pub fn format_records(records: &[MetricRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("plain struct") + "\n")
        .collect()
}

pub fn format_table(records: &[MetricRecord]) -> String {
    let mw = records.iter().map(|r| r.metric.len()).max().unwrap_or(0).max(6);
    let sw = records.iter().map(|r| r.split.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<mw$}  {:<sw$}  value\n", "metric", "split");
    for r in records {
        out += &format!("{:<mw$}  {:<sw$}  {:.6}\n", r.metric, r.split, r.value);
    }
    out
}

/// Two-column `recall precision` text.
pub fn write_pr_curve(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    for (r, p) in points {
        writeln!(f, "{r} {p}").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Annotation words predicted per document for the F-measure.
    pub annotations_k: usize,
    pub orderings_per_doc: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            annotations_k: 5,
            orderings_per_doc: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<MetricRecord>,
    /// PR points per class, multi-label corpora only.
    pub pr_curves: Vec<Option<Vec<(f64, f64)>>>,
    /// Documents without ground-truth annotations.
    pub excluded_documents: Vec<usize>,
}

/// Metrics for the model kind: accuracy and annotation F-measure for
/// single-label corpora, MAP for multi-label ones, perplexity for
/// unsupervised models.
pub fn evaluate(model: &Model, corpus: &Corpus, split: &str, options: EvalOptions) -> Result<EvalReport> {
    model.check_corpus(corpus)?;
    let vocab = &corpus.vocabulary;
    let mut records = Vec::new();
    let mut pr_curves = Vec::new();
    let mut excluded = Vec::new();

    if model.kind.is_supervised() {
        let scores = corpus
            .documents
            .iter()
            .map(|d| model.class_scores(d, vocab))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<&[usize]> = corpus.documents.iter().map(|d| d.labels()).collect();
        if corpus.is_multi_label() {
            let summary = mean_ap(&scores, &labels, corpus.n_classes)?;
            records.push(MetricRecord::new("map", split, summary.map));
            for c in 0..corpus.n_classes {
                let column: Vec<f64> = scores.iter().map(|s| s[c]).collect();
                let rel: Vec<bool> = labels.iter().map(|l| l.contains(&c)).collect();
                pr_curves.push(pr_curve(&column, &rel).ok());
            }
        } else {
            let predicted: Vec<usize> = scores.iter().map(|s| crate::nade::argmax(s)).collect();
            let truth: Vec<usize> = labels
                .iter()
                .map(|l| l.first().copied().unwrap_or(usize::MAX))
                .collect();
            records.push(MetricRecord::new("accuracy", split, accuracy(&predicted, &truth)?));
        }
    } else {
        let mut rng = crate::rng::stream(options.seed, crate::rng::ORDERING, &[u64::MAX]);
        records.push(MetricRecord::new(
            "perplexity",
            split,
            model_perplexity(model, corpus, options.orderings_per_doc, &mut rng)?,
        ));
    }

    if vocab.n_annotation() > 0 && options.annotations_k > 0 {
        let mut pairs = Vec::with_capacity(corpus.len());
        for d in &corpus.documents {
            let predicted = generate_text(model, &d.visual_only(vocab), vocab, options.annotations_k)?;
            pairs.push((predicted.ids, d.annotation_ids(vocab)));
        }
        if let Ok(summary) = mean_f_measure(&pairs) {
            records.push(MetricRecord::new(
                format!("f_measure@{}", options.annotations_k),
                split,
                summary.mean,
            ));
            excluded = summary.excluded;
        }
    }
    Ok(EvalReport {
        records,
        pr_curves,
        excluded_documents: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::model::ModelKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f_measure_examples() {
        assert_eq!(f_measure(&[1, 2, 3], &[3, 2, 1]), Some(1.0));
        assert_eq!(f_measure(&[1, 2], &[3, 4]), Some(0.0));
        assert_eq!(f_measure(&[1, 2, 3, 4, 5], &[1, 2, 9]), Some(0.5));
        assert_eq!(f_measure(&[1, 1, 2], &[1, 1]), Some(2.0 * 0.5 / 1.5));
        assert_eq!(f_measure(&[1], &[]), None);
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(),
            Some(1.0)
        );
        assert_eq!(average_precision(&[0.9, 0.1], &[false, true]).unwrap(), Some(0.5));
        assert_eq!(average_precision(&[0.9, 0.1], &[false, false]).unwrap(), None);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn zero_params_give_perplexity_q() {
        let vocab = build_vocabulary(3, 2, &["x", "y"]).unwrap();
        let q = vocab.size();
        let docs = vec![
            MultimodalDocument::new([(0, 2), (6, 1)], [], None),
            MultimodalDocument::new([(5, 4)], [], None),
        ];
        let corpus = Corpus::new(vocab, docs, 0, 0).unwrap();
        let params = ShallowParams::zeros(4, q, 0);
        let tree = WordTree::build(q, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ppl = perplexity(&corpus, &params, &tree, 3, &mut rng).unwrap();
        // Q = 8 is a power of two, so every conditional is 1/8
        assert!((ppl - q as f64).abs() < 1e-12, "{ppl}");
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut reps = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let c = i % 2;
            let centre = if c == 0 { -3.0 } else { 3.0 };
            reps.push(vec![centre + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            labels.push(vec![c]);
        }
        let lr: Vec<&[usize]> = labels.iter().map(|l| l.as_slice()).collect();
        for kind in [ClassifierKind::Softmax, ClassifierKind::OneVsRest] {
            let clf = fit_linear_classifier(&reps, &lr, 2, kind, FitOptions::default()).unwrap();
            let pred: Vec<usize> = reps.iter().map(|r| clf.predict(r)).collect();
            let truth: Vec<usize> = labels.iter().map(|l| l[0]).collect();
            assert_eq!(accuracy(&pred, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_representations_predict_prior() {
        let reps = vec![vec![0.0; 3]; 10];
        let labels: Vec<Vec<usize>> = (0..10).map(|i| vec![usize::from(i >= 7)]).collect();
        let lr: Vec<&[usize]> = labels.iter().map(|l| l.as_slice()).collect();
        let clf = fit_linear_classifier(&reps, &lr, 2, ClassifierKind::Softmax, FitOptions::default()).unwrap();
        let p = clf.scores(&[0.0; 3]);
        assert!((p[0] - 0.7).abs() < 1e-5, "{p:?}");
        assert_eq!(clf.predict(&[0.0; 3]), 0);
    }

    #[test]
    fn single_class_is_rejected() {
        let reps = vec![vec![1.0], vec![2.0]];
        let lr: Vec<&[usize]> = vec![&[0], &[0]];
        assert!(fit_linear_classifier(&reps, &lr, 2, ClassifierKind::Softmax, FitOptions::default()).is_err());
    }

    #[test]
    fn cosine_examples() {
        let coll = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![1.0, 1.0]];
        let r = cosine_retrieve(&[0.0, 2.0], &coll, 5).unwrap();
        assert_eq!(r.ranking.ids[0], 1);
        assert!((r.ranking.scores[0] - 1.0).abs() < 1e-15);
        assert!(r.truncated_k);
        assert_eq!(r.ranking.len(), 3);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn associations_examples() {
        let vocab = build_vocabulary(2, 1, &["a", "b"]).unwrap();
        let mut p = ShallowParams::zeros(1, 4, 2);
        p.w[[0, 1]] = 2.0;
        p.w[[0, 3]] = 1.0;
        let a = class_word_associations(&p, &vocab, 1, 1, 1).unwrap();
        assert_eq!(a.topics, vec![0]);
        assert_eq!(a.visual_words, vec![1]);
        assert_eq!(a.annotation_words, vec![3]);

        let mut p = ShallowParams::zeros(4, 4, 2);
        p.u[[0, 2]] = 1.0;
        let a = class_word_associations(&p, &vocab, 0, 2, 1).unwrap();
        assert_eq!(a.topics[0], 2);
        assert!(class_word_associations(&p, &vocab, 0, 5, 1).is_err());
    }

    #[test]
    fn generate_text_examples() {
        let vocab = build_vocabulary(3, 1, &["only"]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in ModelKind::ALL {
            let hidden = if kind.is_deep() { vec![3, 3] } else { vec![3] };
            let model = crate::model::init_model(
                kind,
                crate::deep::Head::Softmax,
                &hidden,
                4,
                2,
                0,
                1,
                DeepSettings::default(),
                &mut rng.clone(),
                &mut rng,
            )
            .unwrap();
            let doc = MultimodalDocument::new([(0, 2), (2, 1)], [], None);
            let r = generate_text(&model, &doc, &vocab, 1).unwrap();
            assert_eq!(r.ids, vec![3]);
        }

        // zero deep params: all annotation ids tie, so the smallest come first
        let vocab = build_vocabulary(2, 1, &["a", "b", "c", "d"]).unwrap();
        let mut model = crate::model::init_model(
            ModelKind::DeepDocNade,
            crate::deep::Head::Softmax,
            &[3],
            6,
            0,
            0,
            1,
            DeepSettings::default(),
            &mut rng.clone(),
            &mut rng,
        )
        .unwrap();
        let zero = crate::params::ParamSet::zeros_like(&model.params());
        model.set_params(&zero);
        let doc = MultimodalDocument::new([(0, 1)], [], None);
        let r = generate_text(&model, &doc, &vocab, 2).unwrap();
        assert_eq!(r.ids, vec![2, 3]);
        assert!((r.scores[0] - 0.25).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn f_measure_symmetric_for_equal_sizes(p in prop::collection::btree_set(0usize..12, 1..6), g in prop::collection::btree_set(0usize..12, 1..6)) {
            let p: Vec<usize> = p.into_iter().collect();
            let g: Vec<usize> = g.into_iter().collect();
            if p.len() == g.len() {
                prop_assert_eq!(f_measure(&p, &g), f_measure(&g, &p));
            }
        }

        #[test]
        fn ap_rank_only(scores in prop::collection::vec(-5.0f64..5.0, 1..20), flags in prop::collection::vec(any::<bool>(), 20)) {
            let rel = &flags[..scores.len()];
            let a = average_precision(&scores, rel).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
            prop_assert_eq!(a, average_precision(&transformed, rel).unwrap());
        }

        #[test]
        fn cosine_scale_invariant(vs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..10), scale in 0.1f64..10.0, which in 0usize..10) {
            let q = vs[0].clone();
            let a = cosine_retrieve(&q, &vs, vs.len()).unwrap();
            let mut scaled = vs.clone();
            let i = which % vs.len();
            scaled[i].iter_mut().for_each(|x| *x *= scale);
            let b = cosine_retrieve(&q, &scaled, vs.len()).unwrap();
            // scaling can perturb the last bit of a similarity; compare scores loosely
            for (x, y) in a.ranking.ids.iter().zip(&b.ranking.ids) {
                let sx = cosine_similarity(&q, &vs[*x]);
                let sy = cosine_similarity(&q, &vs[*y]);
                prop_assert!((sx - sy).abs() < 1e-12);
            }
        }
    }
}
