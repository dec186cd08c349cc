//! DeepDocNADE and SupDeepDocNADE.
//!
//! Each stochastic update splits a document's histogram into an observed
//! prefix (input) and the remaining words (targets), runs a feed-forward
//! stack on the prefix histogram and scores every target word with one
//! shared softmax over the vocabulary. Scaling the summed target loss by
//! `D / (D - d + 1)` gives an unbiased estimate of the expected negative
//! log-likelihood over all word orderings.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{JointVocabulary, MultimodalDocument, WeightVector};
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, log_softmax_in_place, relu, sigmoid};
use crate::params::{glorot_init, slice1, slice1_mut, slice2, slice2_mut, ParamSet};

pub const MAX_LAYERS: usize = 16;

const LAYER_W: [&str; MAX_LAYERS] = [
    "W1", "W2", "W3", "W4", "W5", "W6", "W7", "W8", "W9", "W10", "W11", "W12", "W13", "W14", "W15", "W16",
];
const LAYER_C: [&str; MAX_LAYERS] = [
    "c1", "c2", "c3", "c4", "c5", "c6", "c7", "c8", "c9", "c10", "c11", "c12", "c13", "c14", "c15", "c16",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `H_n × H_{n-1}`, with `H_0 = Q`.
    pub w: Array2<f64>,
    pub c: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepParams {
    pub layers: Vec<Layer>,
    /// `H_1 × N_f` global-feature weights (zero columns when unused).
    pub p: Array2<f64>,
    /// `Q × H_N` output softmax weights.
    pub v_out: Array2<f64>,
    pub b_out: Array1<f64>,
    /// `C × H_N` supervised weights.
    pub u: Array2<f64>,
    pub d: Array1<f64>,
}

impl ParamSet for DeepParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 5);
        for (n, l) in self.layers.iter().enumerate() {
            out.push((LAYER_W[n], slice2(&l.w)));
            out.push((LAYER_C[n], slice1(&l.c)));
        }
        out.push(("P", slice2(&self.p)));
        out.push(("V_out", slice2(&self.v_out)));
        out.push(("b_out", slice1(&self.b_out)));
        out.push(("U", slice2(&self.u)));
        out.push(("d", slice1(&self.d)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 5);
        for l in self.layers.iter_mut() {
            out.push(slice2_mut(&mut l.w));
            out.push(slice1_mut(&mut l.c));
        }
        out.push(slice2_mut(&mut self.p));
        out.push(slice2_mut(&mut self.v_out));
        out.push(slice1_mut(&mut self.b_out));
        out.push(slice2_mut(&mut self.u));
        out.push(slice1_mut(&mut self.d));
        out
    }
}

impl DeepParams {
    pub fn zeros(vocab_size: usize, hidden: &[usize], n_features: usize, n_classes: usize) -> Result<Self> {
        if hidden.is_empty() || hidden.len() > MAX_LAYERS {
            return Err(Error::Config(format!(
                "deep model needs 1..={MAX_LAYERS} hidden layers, got {}",
                hidden.len()
            )));
        }
        if hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = vocab_size;
        for &h in hidden {
            layers.push(Layer {
                w: Array2::zeros((h, prev)),
                c: Array1::zeros(h),
            });
            prev = h;
        }
        let top = prev;
        Ok(Self {
            layers,
            p: Array2::zeros((hidden[0], n_features)),
            v_out: Array2::zeros((vocab_size, top)),
            b_out: Array1::zeros(vocab_size),
            u: Array2::zeros((n_classes, top)),
            d: Array1::zeros(n_classes),
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        vocab_size: usize,
        hidden: &[usize],
        n_features: usize,
        n_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(vocab_size, hidden, n_features, n_classes)?;
        for l in p.layers.iter_mut() {
            l.w = glorot_init(l.w.nrows(), l.w.ncols(), rng);
        }
        if n_features > 0 {
            p.p = glorot_init(hidden[0], n_features, rng);
        }
        p.v_out = glorot_init(vocab_size, p.top_size(), rng);
        p.reset_head(rng);
        Ok(p)
    }

    /// Re-draws the supervised head (`U` Glorot, `d` zero).
    pub fn reset_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (c, h) = self.u.dim();
        self.u = if c > 0 {
            glorot_init(c, h, rng)
        } else {
            Array2::zeros((0, h))
        };
        self.d = Array1::zeros(c);
    }

    /// Copy with a supervised head of `n_classes` outputs, freshly drawn.
    pub fn with_head<R: Rng + ?Sized>(&self, n_classes: usize, rng: &mut R) -> Self {
        let mut p = self.clone();
        p.u = Array2::zeros((n_classes, self.top_size()));
        p.reset_head(rng);
        p
    }

    pub fn vocab_size(&self) -> usize {
        self.b_out.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.c.len()).collect()
    }

    pub fn top_size(&self) -> usize {
        self.layers.last().map(|l| l.c.len()).unwrap_or(0)
    }

    pub fn n_features(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.d.len()
    }
}

/// Supervised output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Single label, multiclass softmax.
    Softmax,
    /// Any label subset, one independent sigmoid per class.
    Sigmoid,
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Head::Softmax),
            "sigmoid" => Ok(Head::Sigmoid),
            other => Err(Error::Config(format!("unknown head `{other}`"))),
        }
    }
}

/// How the histogram is divided into context and targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Draw `d` uniformly, then a uniformly random size-`d-1` sub-multiset:
    /// exactly the distribution of a random ordering's prefix.
    ExactPrefix,
    /// Independently for each word, a uniform number of its copies goes to the
    /// context. Cheaper, but not the ordering-prefix distribution.
    PerWordUniform,
}

/// Input preprocessing and regularization shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepSettings {
    /// Annotation-word weight ρ.
    pub rho: f64,
    pub dropout_rate: f64,
    /// Divide each input histogram by the standard deviation of its entries.
    pub normalize_input: bool,
    pub split_mode: SplitMode,
}

impl Default for DeepSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            dropout_rate: 0.5,
            normalize_input: true,
            split_mode: SplitMode::ExactPrefix,
        }
    }
}

/// Context/target partition of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramSplit {
    /// Unweighted context counts `x(v_{o<d})`, sparse, ascending ids.
    pub input: Vec<(usize, u32)>,
    /// Target counts `x(v_{o≥d})`, sparse, ascending ids, never empty.
    pub output: Vec<(usize, u32)>,
    /// 1-based split position: `d - 1` context tokens.
    pub position: usize,
    /// Document length D_v.
    pub total: usize,
}

impl HistogramSplit {
    /// `D / (D - d + 1)`.
    pub fn rescale(&self) -> f64 {
        self.total as f64 / (self.total - self.position + 1) as f64
    }

    /// Split with an explicit context multiset.
    pub fn from_input(doc: &MultimodalDocument, input: &[(usize, u32)]) -> Result<Self> {
        let mut inp = Vec::new();
        let mut out = Vec::new();
        for &(id, c) in doc.counts() {
            let k = input.iter().find(|&&(i, _)| i == id).map(|&(_, k)| k).unwrap_or(0);
            if k > c {
                return Err(Error::Data(format!("context count {k} exceeds count {c} of word {id}")));
            }
            if k > 0 {
                inp.push((id, k));
            }
            if c > k {
                out.push((id, c - k));
            }
        }
        if out.is_empty() {
            return Err(Error::Data("split leaves no target words".into()));
        }
        let n_in: usize = inp.iter().map(|&(_, k)| k as usize).sum();
        Ok(Self {
            input: inp,
            output: out,
            position: n_in + 1,
            total: doc.len(),
        })
    }
}

/// Random context/target split; `None` for an empty document.
pub fn split_histogram<R: Rng + ?Sized>(
    doc: &MultimodalDocument,
    mode: SplitMode,
    rng: &mut R,
) -> Option<HistogramSplit> {
    let total = doc.len();
    if total == 0 {
        return None;
    }
    let mut input = Vec::new();
    let mut output = Vec::new();
    match mode {
        SplitMode::ExactPrefix => {
            let position = rng.random_range(1..=total);
            // selection sampling: each token joins the context with
            // probability need / remaining, which yields a uniform subset
            let mut need = position - 1;
            let mut remaining = total;
            for &(id, c) in doc.counts() {
                let mut k = 0u32;
                for _ in 0..c {
                    if need > 0 && rng.random_range(0..remaining) < need {
                        k += 1;
                        need -= 1;
                    }
                    remaining -= 1;
                }
                if k > 0 {
                    input.push((id, k));
                }
                if c > k {
                    output.push((id, c - k));
                }
            }
            Some(HistogramSplit {
                input,
                output,
                position,
                total,
            })
        }
        SplitMode::PerWordUniform => loop {
            input.clear();
            output.clear();
            let mut n_in = 0usize;
            for &(id, c) in doc.counts() {
                let k = rng.random_range(0..=c);
                n_in += k as usize;
                if k > 0 {
                    input.push((id, k));
                }
                if c > k {
                    output.push((id, c - k));
                }
            }
            if !output.is_empty() {
                return Some(HistogramSplit {
                    input,
                    output,
                    position: n_in + 1,
                    total,
                });
            }
        },
    }
}

/// Weighted (and optionally variance-normalized) dense input histogram.
pub fn prepare_input(counts: &[(usize, u32)], omega: &WeightVector, normalize: bool) -> Vec<f64> {
    let mut x = vec![0.0; omega.len()];
    for &(id, c) in counts {
        x[id] = c as f64 * omega.get(id);
    }
    if normalize {
        unit_variance(&mut x);
    }
    x
}

/// Divides `x` by the population standard deviation of its entries, unless
/// that deviation is below 1e-12.
pub fn unit_variance(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd >= 1e-12 {
        x.iter_mut().for_each(|v| *v /= sd);
    }
}

/// Dropout behaviour of a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Dropout<'a> {
    Off,
    /// Training: multiply each layer's activations by its 0/1 mask.
    Masks(&'a [Array1<f64>]),
    /// Inference after training with dropout: scale activations by `keep`.
    Scale(f64),
}

pub fn draw_masks<R: Rng + ?Sized>(sizes: &[usize], rate: f64, rng: &mut R) -> Vec<Array1<f64>> {
    sizes
        .iter()
        .map(|&h| {
            Array1::from_shape_simple_fn(h, || {
                if rate > 0.0 && rng.random::<f64>() < rate {
                    0.0
                } else {
                    1.0
                }
            })
        })
        .collect()
}

/// Activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Pre-activations `a^(n)`.
    pub pre: Vec<Array1<f64>>,
    /// Layer outputs after masking or scaling, `h^(n)`.
    pub hidden: Vec<Array1<f64>>,
}

impl Forward {
    pub fn top(&self) -> ArrayView1<'_, f64> {
        self.hidden.last().expect("at least one layer").view()
    }
}

impl DeepParams {
    /// `h^(1) = g(c^(1) + W^(1) x + P f)`, `h^(n) = g(c^(n) + W^(n) h^(n-1))`.
    pub fn forward(&self, input: &[f64], features: Option<&[f64]>, dropout: Dropout<'_>) -> Result<Forward> {
        Error::check_dim("input histogram", self.vocab_size(), input.len())?;
        if let Some(f) = features {
            Error::check_dim("global features", self.n_features(), f.len())?;
        }
        if let Dropout::Masks(m) = dropout {
            Error::check_dim("dropout masks", self.n_layers(), m.len())?;
            for (mask, l) in m.iter().zip(&self.layers) {
                Error::check_dim("dropout mask", l.c.len(), mask.len())?;
            }
        }
        let mut pre = Vec::with_capacity(self.n_layers());
        let mut hidden: Vec<Array1<f64>> = Vec::with_capacity(self.n_layers());
        for (n, layer) in self.layers.iter().enumerate() {
            let mut a = layer.c.clone();
            if n == 0 {
                for (j, &xj) in input.iter().enumerate() {
                    if xj != 0.0 {
                        a.scaled_add(xj, &layer.w.column(j));
                    }
                }
                if let Some(f) = features {
                    a += &self.p.dot(&ArrayView1::from(f));
                }
            } else {
                a += &layer.w.dot(&hidden[n - 1]);
            }
            let mut h = a.mapv(relu);
            match dropout {
                Dropout::Off => {}
                Dropout::Masks(m) => h *= &m[n],
                Dropout::Scale(keep) => h *= keep,
            }
            pre.push(a);
            hidden.push(h);
        }
        Ok(Forward { pre, hidden })
    }

    fn backward(
        &self,
        fwd: &Forward,
        input: &[f64],
        features: Option<&[f64]>,
        dropout: Dropout<'_>,
        top_grad: Array1<f64>,
        grads: &mut DeepParams,
    ) {
        let mut dh = top_grad;
        for n in (0..self.n_layers()).rev() {
            match dropout {
                Dropout::Off => {}
                Dropout::Masks(m) => dh *= &m[n],
                Dropout::Scale(keep) => dh *= keep,
            }
            let mut da = dh;
            da.zip_mut_with(&fwd.pre[n], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
            let g = &mut grads.layers[n];
            g.c += &da;
            if n == 0 {
                for (j, &xj) in input.iter().enumerate() {
                    if xj != 0.0 {
                        g.w.column_mut(j).scaled_add(xj, &da);
                    }
                }
                if let Some(f) = features {
                    for (k, &dak) in da.iter().enumerate() {
                        for (gp, &fj) in grads.p.row_mut(k).iter_mut().zip(f) {
                            *gp += dak * fj;
                        }
                    }
                }
                break;
            }
            let below = &fwd.hidden[n - 1];
            for (k, &dak) in da.iter().enumerate() {
                if dak != 0.0 {
                    g.w.row_mut(k).scaled_add(dak, below);
                }
            }
            dh = self.layers[n].w.t().dot(&da);
        }
    }

    /// Output log-softmax `s = logsoftmax(b_out + V_out h)` over the vocabulary.
    pub fn output_log_probs(&self, h: ArrayView1<f64>) -> Vec<f64> {
        let mut s = (&self.b_out + &self.v_out.dot(&h)).to_vec();
        log_softmax_in_place(&mut s);
        s
    }
}

/// Φ weights for the target words: ρ for annotation ids, 1 otherwise.
pub type TargetWeights = WeightVector;

/// Loss and output-layer gradients of the generative term.
#[derive(Debug, Clone)]
pub struct GenerativeLoss {
    pub loss: f64,
    pub d_v_out: Array2<f64>,
    pub d_b_out: Array1<f64>,
    pub d_hidden: Array1<f64>,
}

/// `(D / (D - d + 1)) · Σ_w out[w] · Φ_w · (-s[w])` with a single softmax
/// evaluation, plus its gradients.
pub fn generative_loss(
    h: ArrayView1<f64>,
    split: &HistogramSplit,
    phi: &TargetWeights,
    params: &DeepParams,
) -> Result<GenerativeLoss> {
    Error::check_dim("top hidden layer", params.top_size(), h.len())?;
    Error::check_dim("target weights", params.vocab_size(), phi.len())?;
    let mut g = params.zeros_like();
    let (loss, dh) = generative_backward(h, split, phi, params, split.rescale(), &mut g);
    Ok(GenerativeLoss {
        loss,
        d_v_out: g.v_out,
        d_b_out: g.b_out,
        d_hidden: dh,
    })
}

/// Accumulates output-layer gradients of `factor · Σ_w out[w] Φ_w (-s[w])`
/// into `grads` and returns the loss and the gradient w.r.t. `h`.
fn generative_backward(
    h: ArrayView1<f64>,
    split: &HistogramSplit,
    phi: &TargetWeights,
    params: &DeepParams,
    factor: f64,
    grads: &mut DeepParams,
) -> (f64, Array1<f64>) {
    let s = params.output_log_probs(h);
    let mut loss = 0.0;
    let mut mass = 0.0;
    for &(id, c) in &split.output {
        let wgt = c as f64 * phi.get(id);
        loss -= wgt * s[id];
        mass += wgt;
    }
    // dL/dz = factor · (mass · softmax(z) - n ⊙ Φ)
    let mut dz: Array1<f64> = s.iter().map(|&lp| factor * mass * lp.exp()).collect();
    for &(id, c) in &split.output {
        dz[id] -= factor * c as f64 * phi.get(id);
    }
    for (q, &dzq) in dz.iter().enumerate() {
        grads.v_out.row_mut(q).scaled_add(dzq, &h);
    }
    grads.b_out += &dz;
    let dh = params.v_out.t().dot(&dz);
    (factor * loss, dh)
}

/// Loss and gradients of the supervised head.
#[derive(Debug, Clone)]
pub struct SupervisedLoss {
    pub loss: f64,
    pub d_u: Array2<f64>,
    pub d_d: Array1<f64>,
    pub d_hidden: Array1<f64>,
}

pub fn supervised_loss(
    h: ArrayView1<f64>,
    labels: &[usize],
    params: &DeepParams,
    head: Head,
) -> Result<SupervisedLoss> {
    Error::check_dim("top hidden layer", params.top_size(), h.len())?;
    let mut g = params.zeros_like();
    let (loss, dh) = supervised_backward(h, labels, params, head, &mut g)?;
    Ok(SupervisedLoss {
        loss,
        d_u: g.u,
        d_d: g.d,
        d_hidden: dh,
    })
}

fn supervised_backward(
    h: ArrayView1<f64>,
    labels: &[usize],
    params: &DeepParams,
    head: Head,
    grads: &mut DeepParams,
) -> Result<(f64, Array1<f64>)> {
    let n_classes = params.n_classes();
    if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::Data(format!("label {y} outside {n_classes} classes")));
    }
    let z = &params.d + &params.u.dot(&h);
    let (loss, dz) = match head {
        Head::Softmax => {
            if labels.len() != 1 {
                return Err(Error::Data(format!(
                    "softmax head needs exactly one label, got {}",
                    labels.len()
                )));
            }
            let mut s = z.to_vec();
            log_softmax_in_place(&mut s);
            let y = labels[0];
            let mut dz: Array1<f64> = s.iter().map(|lp| lp.exp()).collect();
            dz[y] -= 1.0;
            (-s[y], dz)
        }
        Head::Sigmoid => {
            let mut loss = 0.0;
            let mut dz = Array1::zeros(n_classes);
            for (i, &zi) in z.iter().enumerate() {
                let target = if labels.contains(&i) { 1.0 } else { 0.0 };
                loss -= target * log_sigmoid(zi) + (1.0 - target) * log_sigmoid(-zi);
                dz[i] = sigmoid(zi) - target;
            }
            (loss, dz)
        }
    };
    for (k, &dzk) in dz.iter().enumerate() {
        grads.u.row_mut(k).scaled_add(dzk, &h);
    }
    grads.d += &dz;
    Ok((loss, params.u.t().dot(&dz)))
}

/// Frozen stochastic choices of one update.
#[derive(Debug, Clone)]
pub struct UpdateNoise {
    pub split: Option<HistogramSplit>,
    pub generative_masks: Option<Vec<Array1<f64>>>,
    pub supervised_masks: Option<Vec<Array1<f64>>>,
}

impl UpdateNoise {
    pub fn draw<R: Rng + ?Sized>(
        doc: &MultimodalDocument,
        params: &DeepParams,
        settings: &DeepSettings,
        rng: &mut R,
    ) -> Self {
        let split = split_histogram(doc, settings.split_mode, rng);
        let sizes = params.hidden_sizes();
        let (generative_masks, supervised_masks) = if settings.dropout_rate > 0.0 {
            (
                Some(draw_masks(&sizes, settings.dropout_rate, rng)),
                Some(draw_masks(&sizes, settings.dropout_rate, rng)),
            )
        } else {
            (None, None)
        };
        Self {
            split,
            generative_masks,
            supervised_masks,
        }
    }
}

/// Everything a single hybrid update needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct HybridTerms<'a> {
    pub vocab: &'a JointVocabulary,
    pub settings: &'a DeepSettings,
    /// Weight λ of the generative term.
    pub lambda: f64,
    /// `None` trains the unsupervised model.
    pub head: Option<Head>,
}

/// Loss parts of one hybrid update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HybridLoss {
    pub supervised: f64,
    /// λ-weighted, rescaled generative estimate (0 for empty documents).
    pub generative: f64,
}

impl HybridLoss {
    pub fn total(&self) -> f64 {
        self.supervised + self.generative
    }
}

impl DeepParams {
    /// Gradients of one stochastic update with the given frozen noise, added
    /// into `grads`.
    pub fn accumulate_hybrid(
        &self,
        doc: &MultimodalDocument,
        terms: HybridTerms<'_>,
        noise: &UpdateNoise,
        grads: &mut DeepParams,
    ) -> Result<HybridLoss> {
        let omega = WeightVector::new(terms.vocab, terms.settings.rho);
        Error::check_dim("vocabulary", self.vocab_size(), omega.len())?;
        let features = doc.features();
        let mut out = HybridLoss::default();

        if let (Some(split), true) = (&noise.split, terms.lambda != 0.0 || terms.head.is_none()) {
            let x = prepare_input(&split.input, &omega, terms.settings.normalize_input);
            let dropout = noise.generative_masks.as_deref().map_or(Dropout::Off, Dropout::Masks);
            let fwd = self.forward(&x, features, dropout)?;
            let factor = terms.lambda * split.rescale();
            let (loss, dh) = generative_backward(fwd.top(), split, &omega, self, factor, grads);
            out.generative = loss;
            self.backward(&fwd, &x, features, dropout, dh, grads);
        }

        if let Some(head) = terms.head {
            let x = prepare_input(doc.counts(), &omega, terms.settings.normalize_input);
            let dropout = noise.supervised_masks.as_deref().map_or(Dropout::Off, Dropout::Masks);
            let fwd = self.forward(&x, features, dropout)?;
            let (loss, dh) = supervised_backward(fwd.top(), doc.labels(), self, head, grads)?;
            out.supervised = loss;
            self.backward(&fwd, &x, features, dropout, dh, grads);
        }
        Ok(out)
    }

    /// Draws the split and dropout masks from `rng` and returns the
    /// gradients of the hybrid loss.
    pub fn hybrid_gradients<R: Rng + ?Sized>(
        &self,
        doc: &MultimodalDocument,
        terms: HybridTerms<'_>,
        rng: &mut R,
    ) -> Result<(DeepParams, HybridLoss)> {
        let noise = UpdateNoise::draw(doc, self, terms.settings, rng);
        let mut g = self.zeros_like();
        let loss = self.accumulate_hybrid(doc, terms, &noise, &mut g)?;
        Ok((g, loss))
    }

    /// Loss of one update with frozen noise (no gradients).
    pub fn hybrid_loss(
        &self,
        doc: &MultimodalDocument,
        terms: HybridTerms<'_>,
        noise: &UpdateNoise,
    ) -> Result<HybridLoss> {
        let mut scratch = self.zeros_like();
        self.accumulate_hybrid(doc, terms, noise, &mut scratch)
    }

    /// Exact `E_o[-Σ_d Φ_{o_d} log p(v_{o_d} | v_{o<d})]` by enumerating every
    /// distinct ordering of the document's tokens. Dropout is off.
    pub fn exhaustive_ordering_loss(
        &self,
        doc: &MultimodalDocument,
        vocab: &JointVocabulary,
        settings: &DeepSettings,
    ) -> Result<f64> {
        if doc.len() > 6 {
            return Err(Error::Config(format!(
                "exhaustive ordering loss is limited to 6 tokens, document has {}",
                doc.len()
            )));
        }
        if self.vocab_size() > 64 {
            return Err(Error::Config("exhaustive ordering loss is limited to Q <= 64".into()));
        }
        let omega = WeightVector::new(vocab, settings.rho);
        let mut cache: BTreeMap<Vec<(usize, u32)>, Vec<f64>> = BTreeMap::new();
        let mut total = 0.0;
        let mut n_orderings = 0usize;
        let mut tokens = doc.tokens();
        loop {
            let mut prefix: BTreeMap<usize, u32> = BTreeMap::new();
            let mut loss = 0.0;
            for &w in &tokens {
                let key: Vec<(usize, u32)> = prefix.iter().map(|(&k, &v)| (k, v)).collect();
                let s = match cache.get(&key) {
                    Some(s) => s,
                    None => {
                        let x = prepare_input(&key, &omega, settings.normalize_input);
                        let fwd = self.forward(&x, doc.features(), Dropout::Off)?;
                        cache.entry(key).or_insert(self.output_log_probs(fwd.top()))
                    }
                };
                loss -= omega.get(w) * s[w];
                *prefix.entry(w).or_default() += 1;
            }
            total += loss;
            n_orderings += 1;
            if !next_permutation(&mut tokens) {
                break;
            }
        }
        Ok(if n_orderings == 0 {
            0.0
        } else {
            total / n_orderings as f64
        })
    }

    /// Top-layer representation of the whole document, dropout replaced by
    /// activation scaling.
    pub fn represent(
        &self,
        doc: &MultimodalDocument,
        vocab: &JointVocabulary,
        settings: &DeepSettings,
    ) -> Result<Array1<f64>> {
        let omega = WeightVector::new(vocab, settings.rho);
        Error::check_dim("vocabulary", self.vocab_size(), omega.len())?;
        let x = prepare_input(doc.counts(), &omega, settings.normalize_input);
        let dropout = if settings.dropout_rate > 0.0 {
            Dropout::Scale(1.0 - settings.dropout_rate)
        } else {
            Dropout::Off
        };
        let fwd = self.forward(&x, doc.features(), dropout)?;
        Ok(fwd.hidden.last().expect("at least one layer").clone())
    }

    /// Next-word distribution restricted to annotation ids and renormalized,
    /// given only the visual words of `doc`. Returns `(id, probability)` in id
    /// order.
    pub fn annotation_distribution(
        &self,
        doc: &MultimodalDocument,
        vocab: &JointVocabulary,
        settings: &DeepSettings,
    ) -> Result<Vec<(usize, f64)>> {
        if vocab.n_annotation() == 0 {
            return Err(Error::Config("vocabulary has no annotation words".into()));
        }
        let h = self.represent(&doc.visual_only(vocab), vocab, settings)?;
        let logits = &self.b_out + &self.v_out.dot(&h);
        let mut restricted: Vec<f64> = vocab.annotation_ids().map(|id| logits[id]).collect();
        log_softmax_in_place(&mut restricted);
        Ok(vocab
            .annotation_ids()
            .zip(restricted)
            .map(|(id, lp)| (id, lp.exp()))
            .collect())
    }

    /// Class scores from the visual-only representation: softmax
    /// probabilities or per-class sigmoid probabilities.
    pub fn class_scores(
        &self,
        doc: &MultimodalDocument,
        vocab: &JointVocabulary,
        settings: &DeepSettings,
        head: Head,
    ) -> Result<Vec<f64>> {
        let h = self.represent(&doc.visual_only(vocab), vocab, settings)?;
        let z = &self.d + &self.u.dot(&h);
        Ok(match head {
            Head::Softmax => crate::math::softmax(z.as_slice().expect("contiguous")),
            Head::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
        })
    }
}

/// Lexicographic next permutation; `false` once the last one is reached.
fn next_permutation(xs: &mut [usize]) -> bool {
    if xs.len() < 2 {
        return false;
    }
    let mut i = xs.len() - 1;
    while i > 0 && xs[i - 1] >= xs[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = xs.len() - 1;
    while xs[j] <= xs[i - 1] {
        j -= 1;
    }
    xs.swap(i - 1, j);
    xs[i..].reverse();
    true
}
