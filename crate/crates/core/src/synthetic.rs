//! Generated multimodal corpora with known class-conditional word
//! distributions, for end-to-end checks against a Bayes-optimal classifier.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, JointVocabulary, MultimodalDocument};
use crate::error::{Error, Result};
use crate::nade::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AnnotationMode {
    /// `tokens` annotation tokens per document, each drawn from the class's
    /// `per_class` words with probability `signal`, else uniformly.
    Noisy {
        per_class: usize,
        tokens: (usize, usize),
        signal: f64,
    },
    /// Every document carries each of its class's `per_class` words once.
    Deterministic { per_class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_visual: usize,
    pub n_regions: usize,
    /// Visual word/region pairs favoured by each class (disjoint sets).
    pub specific_pairs: usize,
    /// Probability that a visual token comes from the class's favoured set
    /// rather than the uniform background.
    pub visual_signal: f64,
    /// Inclusive range of visual tokens per document.
    pub visual_tokens: (usize, usize),
    pub annotations: AnnotationMode,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 8,
            n_visual: 48,
            n_regions: 4,
            specific_pairs: 24,
            visual_signal: 0.4,
            visual_tokens: (15, 25),
            annotations: AnnotationMode::Noisy {
                per_class: 2,
                tokens: (1, 3),
                signal: 0.8,
            },
        }
    }
}

impl SyntheticSpec {
    /// Five class-specific annotation words emitted by every document.
    pub fn deterministic_annotations() -> Self {
        Self {
            annotations: AnnotationMode::Deterministic { per_class: 5 },
            ..Self::default()
        }
    }

    pub fn n_annotation(&self) -> usize {
        match self.annotations {
            AnnotationMode::Noisy { per_class, .. } | AnnotationMode::Deterministic { per_class } => {
                per_class * self.n_classes
            }
        }
    }
}

/// Class-conditional distributions drawn once from a spec.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: SyntheticSpec,
    vocab: JointVocabulary,
    visual: Vec<Vec<f64>>,
    visual_samplers: Vec<WeightedIndex<f64>>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(spec: SyntheticSpec, rng: &mut R) -> Result<Self> {
        let n_pairs = spec.n_visual * spec.n_regions;
        if spec.n_classes < 2 {
            return Err(Error::Config("generator needs at least two classes".into()));
        }
        if spec.specific_pairs == 0 || spec.specific_pairs * spec.n_classes > n_pairs {
            return Err(Error::Config(format!(
                "{} classes x {} favoured pairs do not fit in {n_pairs} pairs",
                spec.n_classes, spec.specific_pairs
            )));
        }
        if !(0.0..=1.0).contains(&spec.visual_signal) {
            return Err(Error::Config("visual signal must be a probability".into()));
        }
        if spec.visual_tokens.0 > spec.visual_tokens.1 {
            return Err(Error::Config("visual token range is empty".into()));
        }
        if let AnnotationMode::Noisy { tokens, signal, .. } = spec.annotations {
            if tokens.0 > tokens.1 || !(0.0..=1.0).contains(&signal) {
                return Err(Error::Config("bad annotation settings".into()));
            }
        }
        let vocab = JointVocabulary::with_anonymous_annotations(spec.n_visual, spec.n_regions, spec.n_annotation())?;

        let mut pairs: Vec<usize> = (0..n_pairs).collect();
        pairs.shuffle(rng);
        let background = (1.0 - spec.visual_signal) / n_pairs as f64;
        let visual: Vec<Vec<f64>> = pairs
            .chunks(spec.specific_pairs)
            .take(spec.n_classes)
            .map(|favoured| {
                let mut p = vec![background; n_pairs];
                for &id in favoured {
                    p[id] += spec.visual_signal / spec.specific_pairs as f64;
                }
                p
            })
            .collect();
        let visual_samplers = visual
            .iter()
            .map(|p| WeightedIndex::new(p).expect("positive weights"))
            .collect();
        Ok(Self {
            spec,
            vocab,
            visual,
            visual_samplers,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn vocabulary(&self) -> &JointVocabulary {
        &self.vocab
    }

    /// Annotation ids owned by `class`.
    pub fn class_annotations(&self, class: usize) -> Vec<usize> {
        let per = self.spec.n_annotation() / self.spec.n_classes;
        let base = self.vocab.n_pairs() + class * per;
        (base..base + per).collect()
    }

    pub fn sample_document<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> MultimodalDocument {
        let (lo, hi) = self.spec.visual_tokens;
        let n = rng.random_range(lo..=hi);
        let mut tokens: Vec<usize> = (0..n).map(|_| self.visual_samplers[class].sample(rng)).collect();
        let own = self.class_annotations(class);
        match self.spec.annotations {
            AnnotationMode::Deterministic { .. } => tokens.extend(own),
            AnnotationMode::Noisy {
                tokens: (lo, hi),
                signal,
                ..
            } => {
                let all = self.vocab.annotation_ids();
                for _ in 0..rng.random_range(lo..=hi) {
                    let id = if rng.random::<f64>() < signal {
                        own[rng.random_range(0..own.len())]
                    } else {
                        rng.random_range(all.clone())
                    };
                    tokens.push(id);
                }
            }
        }
        let counts = tokens.into_iter().map(|t| (t, 1));
        MultimodalDocument::new(counts, [class], None)
    }

    /// `n` documents with classes cycling `0, 1, ..., C-1, 0, ...`.
    pub fn sample_corpus<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Corpus {
        let docs = (0..n)
            .map(|i| self.sample_document(i % self.spec.n_classes, rng))
            .collect();
        Corpus::new(self.vocab.clone(), docs, self.spec.n_classes, 0).expect("generated documents are valid")
    }

    /// Class posterior from the visual words under the true generator,
    /// with uniform class prior.
    pub fn bayes_posterior(&self, doc: &MultimodalDocument) -> Vec<f64> {
        let mut logp: Vec<f64> = self
            .visual
            .iter()
            .map(|p| {
                doc.counts()
                    .iter()
                    .filter(|(id, _)| !self.vocab.is_annotation(*id))
                    .map(|&(id, c)| c as f64 * p[id].ln())
                    .sum()
            })
            .collect();
        crate::math::log_softmax_in_place(&mut logp);
        logp.into_iter().map(f64::exp).collect()
    }

    pub fn bayes_classify(&self, doc: &MultimodalDocument) -> usize {
        argmax(&self.bayes_posterior(doc))
    }

    /// Monte Carlo accuracy of the Bayes classifier from visual words.
    pub fn bayes_accuracy<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> f64 {
        let hits = (0..samples)
            .filter(|&i| {
                let class = i % self.spec.n_classes;
                self.bayes_classify(&self.sample_document(class, rng)) == class
            })
            .count();
        hits as f64 / samples as f64
    }
}
