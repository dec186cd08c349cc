//! Stochastic gradient training: initialization, epochs, parameter
//! averaging, pretraining followed by supervised fine-tuning, and
//! checkpoints.
//!
//! All randomness is drawn from named streams indexed by
//! `(phase, epoch, position)`, so an epoch's updates depend only on the
//! parameters it starts from. This is what makes checkpoint resume exact.

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, JointVocabulary, MultimodalDocument};
use crate::deep::{DeepSettings, Head, HybridTerms, SplitMode, UpdateNoise};
use crate::error::{Error, Result};
use crate::model::{
    init_model, read_len, read_tensors, with_fresh_head, write_tensors, AnyParams, Model, ModelKind, Network,
};
use crate::nade::OrderedDocument;
use crate::params::ParamSet;
use crate::rng;

/// Unsupervised pretraining phase index.
pub const PHASE_PRETRAIN: u64 = 0;
/// Supervised training phase index.
pub const PHASE_SUPERVISED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub head: Head,
    /// One size for shallow models, one per layer for deep models.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Weight λ of the generative term in supervised models.
    pub lambda: f64,
    /// Annotation weight ρ (deep models).
    pub rho: f64,
    /// Dropout on every hidden layer (deep models).
    pub dropout_rate: f64,
    pub epochs: usize,
    /// Unsupervised epochs before supervised training.
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub averaging_decay: f64,
    pub seed: u64,
    pub normalize_input: bool,
    pub split_mode: SplitMode,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::SupDocNade,
            head: Head::Softmax,
            hidden: vec![50],
            learning_rate: 0.01,
            lambda: 1.0,
            rho: 1.0,
            dropout_rate: 0.5,
            epochs: 10,
            pretrain_epochs: 0,
            batch_size: 1,
            averaging_decay: 0.999,
            seed: 1,
            normalize_input: true,
            split_mode: SplitMode::ExactPrefix,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("annotation weight must be >= 0, got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.averaging_decay) {
            return bad(format!(
                "averaging decay must be in [0, 1), got {}",
                self.averaging_decay
            ));
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch size and worker count must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden sizes must be non-empty and positive".into());
        }
        if !self.model_kind.is_deep() && self.hidden.len() != 1 {
            return bad(format!("{} takes a single hidden size", self.model_kind));
        }
        if self.head == Head::Sigmoid && self.model_kind != ModelKind::SupDeepDocNade {
            return bad(format!(
                "sigmoid head is only available for supdeepdocnade, not {}",
                self.model_kind
            ));
        }
        Ok(())
    }

    pub fn deep_settings(&self) -> DeepSettings {
        DeepSettings {
            rho: self.rho,
            dropout_rate: self.dropout_rate,
            normalize_input: self.normalize_input,
            split_mode: self.split_mode,
        }
    }
}

/// Current parameters plus their exponentially decaying average.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedParams<P> {
    pub current: P,
    pub averaged: P,
    pub decay: f64,
}

impl<P: ParamSet> AveragedParams<P> {
    /// Starts with `averaged = current`.
    pub fn new(current: P, decay: f64) -> Self {
        Self {
            averaged: current.clone(),
            current,
            decay,
        }
    }

    /// `averaged ← decay · averaged + (1 - decay) · current`.
    pub fn polyak_update(&mut self) {
        self.averaged.blend_towards(&self.current, self.decay);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub phase: u64,
    pub epoch: usize,
    /// Mean per-document training loss (supervised + weighted generative).
    pub mean_loss: f64,
    pub mean_supervised: f64,
    pub mean_generative: f64,
    pub documents: usize,
    pub wall_seconds: f64,
}

impl EpochStats {
    pub fn log_line(&self) -> String {
        format!("{}\t{:.10}\t{:.3}", self.epoch, self.mean_loss, self.wall_seconds)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct DocLoss {
    supervised: f64,
    generative: f64,
}

/// Single-owner training state for one configuration.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    /// Structure (tree, settings) and the current parameters.
    model: Model,
    state: AveragedParams<AnyParams>,
    phase: u64,
    epoch: usize,
}

impl Trainer {
    /// Fresh model of `config.model_kind`.
    pub fn new(config: TrainConfig, vocab: &JointVocabulary, n_classes: usize, n_features: usize) -> Result<Self> {
        config.validate()?;
        let kind = config.model_kind;
        if kind.is_supervised() && n_classes < 2 {
            return Err(Error::Config(format!(
                "{kind} needs at least two classes, corpus has {n_classes}"
            )));
        }
        let mut body = rng::stream(config.seed, rng::INIT, &[0]);
        let mut head = rng::stream(config.seed, rng::INIT, &[1]);
        let model = init_model(
            kind,
            config.head,
            &config.hidden,
            vocab.size(),
            n_classes,
            n_features,
            config.seed,
            config.deep_settings(),
            &mut body,
            &mut head,
        )?;
        let phase = if kind.is_supervised() {
            PHASE_SUPERVISED
        } else {
            PHASE_PRETRAIN
        };
        Ok(Self::from_model(config, model, phase))
    }

    /// Continues training from an existing model; averaging restarts.
    pub fn from_model(config: TrainConfig, model: Model, phase: u64) -> Self {
        let state = AveragedParams::new(model.params(), config.averaging_decay);
        Self {
            config,
            model,
            state,
            phase,
            epoch: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn phase(&self) -> u64 {
        self.phase
    }

    pub fn averaged(&self) -> &AveragedParams<AnyParams> {
        &self.state
    }

    /// Model with the current (non-averaged) parameters.
    pub fn current_model(&self) -> Model {
        let mut m = self.model.clone();
        m.set_params(&self.state.current);
        m
    }

    /// Model with the averaged parameters, used for inference.
    pub fn averaged_model(&self) -> Model {
        let mut m = self.model.clone();
        m.set_params(&self.state.averaged);
        m
    }

    fn doc_gradients(
        &self,
        doc: &MultimodalDocument,
        doc_index: usize,
        position: usize,
        vocab: &JointVocabulary,
        grads: &mut AnyParams,
    ) -> Result<Option<DocLoss>> {
        let kind = self.model.kind;
        let supervised = kind.is_supervised();
        let lambda = if supervised { self.config.lambda } else { 1.0 };
        if !supervised && doc.is_empty() {
            return Ok(None);
        }
        let mut rng = rng::stream(
            self.config.seed,
            rng::ORDERING,
            &[self.phase, self.epoch as u64, position as u64],
        );
        match (&self.model.network, &self.state.current, grads) {
            (Network::Shallow { tree, .. }, AnyParams::Shallow(params), AnyParams::Shallow(g)) => {
                let label = if supervised {
                    match doc.labels() {
                        [y] => Some(*y),
                        other => {
                            return Err(Error::Data(format!(
                                "document {doc_index} has {} labels; {kind} needs exactly one",
                                other.len()
                            )))
                        }
                    }
                } else {
                    None
                };
                let ordering = OrderedDocument::shuffled(doc, &mut rng);
                let loss = params.accumulate_gradients(&ordering, label, tree, lambda, g)?;
                Ok(Some(DocLoss {
                    supervised: loss.supervised,
                    generative: loss.generative,
                }))
            }
            (Network::Deep { settings, .. }, AnyParams::Deep(params), AnyParams::Deep(g)) => {
                let terms = HybridTerms {
                    vocab,
                    settings,
                    lambda,
                    head: supervised.then_some(self.model.head),
                };
                let noise = UpdateNoise::draw(doc, params, settings, &mut rng);
                let loss = params
                    .accumulate_hybrid(doc, terms, &noise, g)
                    .map_err(|e| Error::Data(format!("document {doc_index}: {e}")))?;
                Ok(Some(DocLoss {
                    supervised: loss.supervised,
                    generative: loss.generative,
                }))
            }
            _ => unreachable!("parameter family matches network"),
        }
    }

    /// Gradients for a contiguous slice of the visiting order, summed in
    /// order. Returns per-document losses.
    fn batch_gradients(
        &self,
        corpus: &Corpus,
        order: &[usize],
        start: usize,
        grads: &mut AnyParams,
    ) -> Result<Vec<(usize, DocLoss)>> {
        let mut out = Vec::with_capacity(order.len());
        for (k, &idx) in order.iter().enumerate() {
            if let Some(loss) = self.doc_gradients(&corpus.documents[idx], idx, start + k, &corpus.vocabulary, grads)? {
                if !(loss.supervised + loss.generative).is_finite() {
                    return Err(Error::NonFinite {
                        epoch: self.epoch + 1,
                        doc_index: idx,
                    });
                }
                out.push((idx, loss));
            }
        }
        Ok(out)
    }

    /// One pass over `corpus` in a seeded shuffled order.
    pub fn sgd_epoch(&mut self, corpus: &Corpus) -> Result<EpochStats> {
        if corpus.is_empty() {
            return Err(Error::Data("cannot train on an empty corpus".into()));
        }
        self.model.check_corpus(corpus)?;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng::stream(
            self.config.seed,
            rng::SHUFFLE,
            &[self.phase, self.epoch as u64],
        ));

        let mut sums = DocLoss::default();
        let mut n_docs = 0usize;
        let workers = self.config.workers;
        let mut grads = self.state.current.zeros_like();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let start = b * self.config.batch_size;
            grads.fill(0.0);
            let losses = if workers > 1 && chunk.len() > 1 {
                let per = chunk.len().div_ceil(workers);
                let results: Vec<Result<(AnyParams, Vec<(usize, DocLoss)>)>> = std::thread::scope(|s| {
                    let handles: Vec<_> = chunk
                        .chunks(per)
                        .enumerate()
                        .map(|(w, part)| {
                            let this = &*self;
                            s.spawn(move || {
                                let mut g = this.state.current.zeros_like();
                                let l = this.batch_gradients(corpus, part, start + w * per, &mut g)?;
                                Ok((g, l))
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .collect()
                });
                let mut all = Vec::new();
                for r in results {
                    let (g, l) = r?;
                    grads.add_scaled(&g, 1.0);
                    all.extend(l);
                }
                all
            } else {
                self.batch_gradients(corpus, chunk, start, &mut grads)?
            };
            for (_, l) in &losses {
                sums.supervised += l.supervised;
                sums.generative += l.generative;
            }
            n_docs += losses.len();
            if !losses.is_empty() {
                self.state
                    .current
                    .add_scaled(&grads, -self.config.learning_rate / losses.len() as f64);
            }
            self.state.polyak_update();
        }
        self.epoch += 1;
        let n = n_docs.max(1) as f64;
        Ok(EpochStats {
            phase: self.phase,
            epoch: self.epoch,
            mean_loss: (sums.supervised + sums.generative) / n,
            mean_supervised: sums.supervised / n,
            mean_generative: sums.generative / n,
            documents: n_docs,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Runs epochs until `target_epochs` are done, writing a checkpoint after
    /// each one when `checkpoint_dir` is given.
    pub fn train_until(
        &mut self,
        corpus: &Corpus,
        target_epochs: usize,
        checkpoint_dir: Option<&Path>,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>> {
        let mut history = Vec::new();
        while self.epoch < target_epochs {
            let stats = self.sgd_epoch(corpus)?;
            if let Some(dir) = checkpoint_dir {
                self.checkpoint().save(&checkpoint_path(dir, self.phase, self.epoch))?;
            }
            on_epoch(&stats);
            history.push(stats);
        }
        Ok(history)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            phase: self.phase,
            epoch: self.epoch,
            model: self.current_model(),
            averaged: self.state.averaged.clone(),
        }
    }

    pub fn resume(ckpt: Checkpoint) -> Self {
        let current = ckpt.model.params();
        Self {
            state: AveragedParams {
                current,
                averaged: ckpt.averaged,
                decay: ckpt.config.averaging_decay,
            },
            config: ckpt.config,
            model: ckpt.model,
            phase: ckpt.phase,
            epoch: ckpt.epoch,
        }
    }
}

pub fn checkpoint_path(dir: &Path, phase: u64, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-p{phase}-e{epoch:04}.bin"))
}

/// Training state after a completed epoch.
///
/// Layout: magic `b"DNCKPT\0\0"`, u32 version, u64-length-prefixed JSON
/// config, u64 phase, u64 epoch, u64-length-prefixed model container with
/// the current parameters, then the averaged parameter tensors. Random
/// streams are fully determined by `(config.seed, phase, epoch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub phase: u64,
    pub epoch: usize,
    pub model: Model,
    pub averaged: AnyParams,
}

const CKPT_MAGIC: &[u8; 8] = b"DNCKPT\0\0";

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let io = |r: std::io::Result<()>| r.expect("writing to a Vec cannot fail");
        io(out.write_all(CKPT_MAGIC));
        io(out.write_u32::<LittleEndian>(crate::model::FORMAT_VERSION));
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        io(out.write_u64::<LittleEndian>(cfg.len() as u64));
        io(out.write_all(&cfg));
        io(out.write_u64::<LittleEndian>(self.phase));
        io(out.write_u64::<LittleEndian>(self.epoch as u64));
        let model = self.model.to_bytes();
        io(out.write_u64::<LittleEndian>(model.len() as u64));
        io(out.write_all(&model));
        io(write_tensors(&mut out, &self.averaged.tensors()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated checkpoint: {e}"));
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
        if version != crate::model::FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = read_len(&mut r)?;
        let mut cfg = vec![0u8; n];
        r.read_exact(&mut cfg).map_err(fmt)?;
        let config: TrainConfig = serde_json::from_slice(&cfg).map_err(|e| Error::Format(e.to_string()))?;
        let phase = r.read_u64::<LittleEndian>().map_err(fmt)?;
        let epoch = read_len(&mut r)?;
        let n = read_len(&mut r)?;
        let mut mb = vec![0u8; n];
        r.read_exact(&mut mb).map_err(fmt)?;
        let model = Model::from_bytes(&mb)?;
        let mut averaged = model.params();
        read_tensors(&mut r, &mut averaged)?;
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            config,
            phase,
            epoch,
            model,
            averaged,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model with averaged parameters.
    pub model: Model,
    pub history: Vec<EpochStats>,
}

/// Trains `config.model_kind` on `corpus` from initialization.
pub fn train(corpus: &Corpus, config: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    pretrain_then_finetune(None, corpus, config, checkpoint_dir, |_| {})
}

/// Unsupervised epochs on `unlabeled` (if given and `pretrain_epochs > 0`),
/// then training of the configured model on `labeled`, starting from the
/// pretrained body with a fresh supervised head.
pub fn pretrain_then_finetune(
    unlabeled: Option<&Corpus>,
    labeled: &Corpus,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let kind = config.model_kind;
    let mut history = Vec::new();
    let mut trainer = Trainer::new(
        config.clone(),
        &labeled.vocabulary,
        labeled.n_classes,
        labeled.n_features,
    )?;

    if let (Some(unlabeled), true) = (unlabeled, config.pretrain_epochs > 0 && kind.is_supervised()) {
        if unlabeled.vocabulary != labeled.vocabulary {
            return Err(Error::Data("pretraining and fine-tuning vocabularies differ".into()));
        }
        let pre_config = TrainConfig {
            model_kind: kind.unsupervised(),
            head: Head::Softmax,
            ..config.clone()
        };
        let mut pre = Trainer::new(pre_config, &unlabeled.vocabulary, 0, unlabeled.n_features)?;
        history.extend(pre.train_until(unlabeled, config.pretrain_epochs, checkpoint_dir, &mut on_epoch)?);
        let mut head_rng = rng::stream(config.seed, rng::INIT, &[1]);
        let body = pre.averaged_model();
        let model = with_fresh_head(&body, kind, config.head, labeled.n_classes, &mut head_rng);
        trainer = Trainer::from_model(config.clone(), model, PHASE_SUPERVISED);
    }

    history.extend(trainer.train_until(labeled, config.epochs, checkpoint_dir, &mut on_epoch)?);
    Ok(TrainOutcome {
        model: trainer.averaged_model(),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::nade::ShallowParams;

    fn tiny_corpus() -> Corpus {
        let vocab = build_vocabulary(4, 1, &["a", "b"]).unwrap();
        let docs = vec![
            MultimodalDocument::new([(0, 3), (1, 1), (4, 1)], [0], None),
            MultimodalDocument::new([(2, 2), (3, 2), (5, 1)], [1], None),
            MultimodalDocument::new([(0, 1), (1, 2)], [0], None),
            MultimodalDocument::new([], [1], None),
        ];
        Corpus::new(vocab, docs, 2, 0).unwrap()
    }

    #[test]
    fn polyak_cases() {
        let p = ShallowParams::zeros(1, 2, 0);
        let mut avg = AveragedParams::new(p.clone(), 0.0);
        avg.current.c[0] = 3.0;
        avg.polyak_update();
        assert_eq!(avg.averaged.c[0], 3.0);

        // decay 0.5, current sequence (0, 1) starting from 0
        let mut avg = AveragedParams::new(p.clone(), 0.5);
        avg.polyak_update();
        avg.current.c[0] = 1.0;
        avg.polyak_update();
        assert_eq!(avg.averaged.c[0], 0.5);
        assert_eq!(avg.current.c[0], 1.0);

        let mut avg = AveragedParams::new(p, 0.9);
        avg.current.c[0] = 1.0;
        let mut gap = 1.0;
        for _ in 0..20 {
            avg.polyak_update();
            let new_gap = (avg.current.c[0] - avg.averaged.c[0]).abs();
            assert!((new_gap - 0.9 * gap).abs() < 1e-12);
            gap = new_gap;
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let corpus = tiny_corpus();
        for kind in ModelKind::ALL {
            let config = TrainConfig {
                model_kind: kind,
                hidden: if kind.is_deep() { vec![3, 2] } else { vec![3] },
                learning_rate: 0.0,
                ..TrainConfig::default()
            };
            let mut t = Trainer::new(config, &corpus.vocabulary, 2, 0).unwrap();
            let before = t.current_model();
            let stats = t.sgd_epoch(&corpus).unwrap();
            assert!(stats.mean_loss.is_finite() && stats.mean_loss > 0.0);
            assert_eq!(t.current_model(), before);
            assert_eq!(t.averaged_model(), before);
        }
    }

    #[test]
    fn single_document_runs_are_bit_identical() {
        let corpus = tiny_corpus().subset(&[0]);
        let config = TrainConfig {
            hidden: vec![4],
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&corpus, &config, None).unwrap();
        let b = train(&corpus, &config, None).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    }

    #[test]
    fn workers_are_deterministic_for_fixed_count() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            hidden: vec![4],
            epochs: 2,
            batch_size: 4,
            workers: 2,
            ..TrainConfig::default()
        };
        let a = train(&corpus, &config, None).unwrap();
        let b = train(&corpus, &config, None).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    }

    #[test]
    fn rejects_bad_configs() {
        let corpus = tiny_corpus();
        let bad = [
            TrainConfig {
                dropout_rate: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                averaging_decay: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                head: Head::Sigmoid,
                model_kind: ModelKind::DocNade,
                ..TrainConfig::default()
            },
            TrainConfig {
                hidden: vec![3, 3],
                model_kind: ModelKind::SupDocNade,
                ..TrainConfig::default()
            },
        ];
        for c in bad {
            assert!(Trainer::new(c, &corpus.vocabulary, 2, 0).is_err());
        }
    }

    #[test]
    fn multi_label_document_is_rejected_by_softmax_models() {
        let vocab = build_vocabulary(2, 1, &[]).unwrap();
        let corpus = Corpus::new(vocab, vec![MultimodalDocument::new([(0, 1)], [0, 1], None)], 2, 0).unwrap();
        let config = TrainConfig {
            hidden: vec![2],
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(config, &corpus.vocabulary, 2, 0).unwrap();
        assert!(matches!(t.sgd_epoch(&corpus), Err(Error::Data(_))));
    }

    #[test]
    fn non_finite_loss_names_document() {
        let corpus = tiny_corpus();
        let config = TrainConfig {
            hidden: vec![3],
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(config, &corpus.vocabulary, 2, 0).unwrap();
        if let AnyParams::Shallow(p) = &mut t.state.current {
            p.d[0] = f64::NAN;
        }
        match t.sgd_epoch(&corpus) {
            Err(Error::NonFinite { epoch: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = tiny_corpus();
        for kind in ModelKind::ALL {
            let config = TrainConfig {
                model_kind: kind,
                hidden: if kind.is_deep() { vec![3, 2] } else { vec![3] },
                ..TrainConfig::default()
            };
            let mut t = Trainer::new(config, &corpus.vocabulary, 2, 0).unwrap();
            t.sgd_epoch(&corpus).unwrap();
            let ck = t.checkpoint();
            assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
        }
    }
}
