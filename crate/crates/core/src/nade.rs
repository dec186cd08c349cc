//! Shallow DocNADE / SupDocNADE with tree-structured word conditionals.
//!
//! Hidden states are `h_i = relu(c + Σ_{k<i} W[:, v_k])` and are computed by
//! carrying the running pre-activation forward, so a full pass over a
//! document costs `O(H · D)` rather than `O(H · D²)`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{JointVocabulary, MultimodalDocument};
use crate::error::{Error, Result};
use crate::math::{count_column_add, dot, log_softmax_in_place, relu, softmax};
use crate::params::{glorot_init, slice1, slice1_mut, slice2, slice2_mut, ParamSet};
use crate::wordtree::WordTree;

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowParams {
    /// H×Q input weights; column `w` is the embedding of word `w`.
    pub w: Array2<f64>,
    /// Hidden bias, length H.
    pub c: Array1<f64>,
    /// T×H tree logistic weights.
    pub v: Array2<f64>,
    /// Tree biases, length T.
    pub b: Array1<f64>,
    /// C×H class weights (C = 0 for the unsupervised model).
    pub u: Array2<f64>,
    /// Class biases, length C.
    pub d: Array1<f64>,
}

impl ParamSet for ShallowParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("W", slice2(&self.w)),
            ("c", slice1(&self.c)),
            ("V", slice2(&self.v)),
            ("b", slice1(&self.b)),
            ("U", slice2(&self.u)),
            ("d", slice1(&self.d)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.w),
            slice1_mut(&mut self.c),
            slice2_mut(&mut self.v),
            slice1_mut(&mut self.b),
            slice2_mut(&mut self.u),
            slice1_mut(&mut self.d),
        ]
    }
}

/// Which words contribute to an extracted representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restrict {
    VisualOnly,
    AllWords,
}

/// An explicit ordering of a document's tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedDocument {
    pub tokens: Vec<usize>,
}

impl OrderedDocument {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }

    /// Tokens in ascending id order.
    pub fn sorted(doc: &MultimodalDocument) -> Self {
        Self { tokens: doc.tokens() }
    }

    /// A uniformly random permutation of the document's tokens.
    pub fn shuffled<R: Rng + ?Sized>(doc: &MultimodalDocument, rng: &mut R) -> Self {
        let mut tokens = doc.tokens();
        tokens.shuffle(rng);
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Loss split into its discriminative and (λ-weighted) generative parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub supervised: f64,
    pub generative: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.supervised + self.generative
    }
}

impl ShallowParams {
    pub fn zeros(hidden: usize, vocab_size: usize, n_classes: usize) -> Self {
        let t = vocab_size.saturating_sub(1);
        Self {
            w: Array2::zeros((hidden, vocab_size)),
            c: Array1::zeros(hidden),
            v: Array2::zeros((t, hidden)),
            b: Array1::zeros(t),
            u: Array2::zeros((n_classes, hidden)),
            d: Array1::zeros(n_classes),
        }
    }

    /// Glorot-uniform weight matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(hidden: usize, vocab_size: usize, n_classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(hidden, vocab_size, n_classes);
        p.w = glorot_init(hidden, vocab_size, rng);
        if vocab_size > 1 {
            p.v = glorot_init(vocab_size - 1, hidden, rng);
        }
        if n_classes > 0 {
            p.u = glorot_init(n_classes, hidden, rng);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.c.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.d.len()
    }

    pub fn check_tree(&self, tree: &WordTree) -> Result<()> {
        Error::check_dim("tree leaves", self.vocab_size(), tree.n_leaves())?;
        Error::check_dim("tree internal nodes", tree.n_internal(), self.v.nrows())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab_size()) {
            Some(t) => Err(Error::Data(format!(
                "token {t} outside vocabulary of size {}",
                self.vocab_size()
            ))),
            None => Ok(()),
        }
    }

    fn add_column(&self, act: &mut Array1<f64>, word: usize, scale: f64) {
        count_column_add();
        act.scaled_add(scale, &self.w.column(word));
    }

    /// All `D + 1` hidden states; row `i` is `h_{i+1}` and the last row is
    /// the full-document representation.
    pub fn hidden_states(&self, doc: &OrderedDocument) -> Result<Array2<f64>> {
        self.check_tokens(&doc.tokens)?;
        let mut out = Array2::zeros((doc.len() + 1, self.hidden()));
        let mut act = self.c.clone();
        for (i, &word) in doc.tokens.iter().enumerate() {
            out.row_mut(i).assign(&act.mapv(relu));
            self.add_column(&mut act, word, 1.0);
        }
        out.row_mut(doc.len()).assign(&act.mapv(relu));
        Ok(out)
    }

    /// `log p(v)` for the given ordering.
    pub fn doc_log_likelihood(&self, doc: &OrderedDocument, tree: &WordTree) -> Result<f64> {
        self.check_tokens(&doc.tokens)?;
        self.check_tree(tree)?;
        let mut act = self.c.clone();
        let mut h = Array1::zeros(self.hidden());
        let mut logp = 0.0;
        for &word in &doc.tokens {
            h.zip_mut_with(&act, |hk, &a| *hk = relu(a));
            logp += tree.word_log_prob_unchecked(h.view(), word, self.v.view(), self.b.view());
            self.add_column(&mut act, word, 1.0);
        }
        Ok(logp)
    }

    fn class_logits(&self, h: ArrayView1<f64>) -> Vec<f64> {
        self.u
            .outer_iter()
            .zip(self.d.iter())
            .map(|(row, &d)| d + dot(row, h))
            .collect()
    }

    /// `softmax(d + U h_y)` where `h_y` uses every token of `doc`.
    pub fn class_posterior(&self, doc: &OrderedDocument) -> Result<Vec<f64>> {
        self.check_tokens(&doc.tokens)?;
        if self.n_classes() < 2 {
            return Err(Error::Config("class posterior needs at least two classes".into()));
        }
        let mut act = self.c.clone();
        for &w in &doc.tokens {
            self.add_column(&mut act, w, 1.0);
        }
        Ok(self.posterior_from_hidden(act.mapv(relu).view()))
    }

    pub fn posterior_from_hidden(&self, h: ArrayView1<f64>) -> Vec<f64> {
        softmax(&self.class_logits(h))
    }

    /// `log p(v, y) = log p(v) + log p(y | v)`.
    pub fn joint_log_prob(&self, doc: &OrderedDocument, label: usize, tree: &WordTree) -> Result<f64> {
        if label >= self.n_classes() {
            return Err(Error::Data(format!(
                "label {label} outside {} classes",
                self.n_classes()
            )));
        }
        let lv = self.doc_log_likelihood(doc, tree)?;
        let mut act = self.c.clone();
        for &w in &doc.tokens {
            self.add_column(&mut act, w, 1.0);
        }
        let mut logits = self.class_logits(act.mapv(relu).view());
        log_softmax_in_place(&mut logits);
        Ok(lv + logits[label])
    }

    /// Adds the gradients of
    /// `L = -log p(y | v) - λ Σ_i log p(v_i | v_<i)` into `grads`.
    ///
    /// With `label = None` only the generative term is used. The backward
    /// pass walks the tokens in reverse, carrying the pre-activation
    /// gradient `δact` that every earlier word's column feeds into.
    pub fn accumulate_gradients(
        &self,
        doc: &OrderedDocument,
        label: Option<usize>,
        tree: &WordTree,
        lambda: f64,
        grads: &mut ShallowParams,
    ) -> Result<LossParts> {
        self.check_tokens(&doc.tokens)?;
        self.check_tree(tree)?;
        if let Some(y) = label {
            if y >= self.n_classes() {
                return Err(Error::Data(format!("label {y} outside {} classes", self.n_classes())));
            }
        }
        let hidden = self.hidden();
        let states = self.hidden_states(doc)?;
        let h_y = states.row(doc.len());
        let mut loss = LossParts::default();

        let mut d_act = Array1::<f64>::zeros(hidden);
        if let Some(y) = label {
            let mut logits = self.class_logits(h_y);
            log_softmax_in_place(&mut logits);
            loss.supervised = -logits[y];
            let mut dd: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
            dd[y] -= 1.0;
            for (k, &ddk) in dd.iter().enumerate() {
                grads.d[k] += ddk;
                grads.u.row_mut(k).scaled_add(ddk, &h_y);
                d_act.scaled_add(ddk, &self.u.row(k));
            }
            d_act.zip_mut_with(&h_y, |g, &h| {
                if h <= 0.0 {
                    *g = 0.0
                }
            });
            grads.c += &d_act;
        }

        let mut d_h = vec![0.0; hidden];
        let mut logp = 0.0;
        for i in (0..doc.len()).rev() {
            let word = doc.tokens[i];
            // W[:, v_i] feeds h_{i+1}..h_D and h_y, i.e. everything in δact so far.
            grads.w.column_mut(word).scaled_add(1.0, &d_act);
            let h_i = states.row(i);
            d_h.fill(0.0);
            logp += tree.accumulate_gradients(
                h_i,
                word,
                self.v.view(),
                self.b.view(),
                lambda,
                grads.v.view_mut(),
                slice1_mut(&mut grads.b),
                &mut d_h,
            );
            for k in 0..hidden {
                if h_i[k] > 0.0 {
                    d_act[k] += d_h[k];
                    grads.c[k] += d_h[k];
                }
            }
        }
        loss.generative = -lambda * logp;
        Ok(loss)
    }

    /// Fresh gradient set for one document (see [`Self::accumulate_gradients`]).
    pub fn supdocnade_gradients(
        &self,
        doc: &OrderedDocument,
        label: Option<usize>,
        tree: &WordTree,
        lambda: f64,
    ) -> Result<(ShallowParams, LossParts)> {
        let mut g = self.zeros_like();
        let loss = self.accumulate_gradients(doc, label, tree, lambda, &mut g)?;
        Ok((g, loss))
    }

    /// Order-free document representation `relu(c + Σ_w n_w W[:, w])`.
    pub fn represent(&self, doc: &MultimodalDocument, vocab: &JointVocabulary, restrict: Restrict) -> Array1<f64> {
        let mut act = self.c.clone();
        for &(id, n) in doc.counts() {
            if restrict == Restrict::VisualOnly && vocab.is_annotation(id) {
                continue;
            }
            act.scaled_add(n as f64, &self.w.column(id));
        }
        act.mapv_inplace(relu);
        act
    }

    /// Top-`k` annotation words as the next observed word given only the
    /// visual words of `doc`, with their tree probabilities. Ties go to the
    /// smaller id.
    pub fn predict_annotations(
        &self,
        doc: &MultimodalDocument,
        vocab: &JointVocabulary,
        tree: &WordTree,
        k: usize,
    ) -> Result<Vec<(usize, f64)>> {
        self.check_tree(tree)?;
        if k > vocab.n_annotation() {
            return Err(Error::Config(format!(
                "asked for {k} annotations but the vocabulary has {}",
                vocab.n_annotation()
            )));
        }
        let h = self.represent(doc, vocab, Restrict::VisualOnly);
        let scored: Vec<(usize, f64)> = vocab
            .annotation_ids()
            .map(|id| {
                let lp = tree.word_log_prob_unchecked(h.view(), id, self.v.view(), self.b.view());
                (id, lp)
            })
            .collect();
        Ok(top_k(scored, k).into_iter().map(|(id, lp)| (id, lp.exp())).collect())
    }

    /// Predicted class from the visual-only representation.
    pub fn predict_class(&self, doc: &MultimodalDocument, vocab: &JointVocabulary) -> usize {
        let h = self.represent(doc, vocab, Restrict::VisualOnly);
        argmax(&self.class_logits(h.view()))
    }

    /// Rows of `U` for each class, as an iterator of length-H views.
    pub fn class_weights(&self) -> impl Iterator<Item = ArrayView1<'_, f64>> {
        self.u.axis_iter(Axis(0))
    }
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Highest `k` scores, descending, ties broken by ascending id.
pub fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
