//! Trained models and their on-disk container.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   b"DOCNADE\0"
//! u32     format version
//! u8      model kind    (0 docnade, 1 supdocnade, 2 deepdocnade, 3 supdeepdocnade)
//! u8      head          (0 softmax, 1 sigmoid)
//! u64     Q, C, N_f
//! shallow: u64 H, u64 T, u64 tree seed, u8 tree shuffled
//! deep:    u64 N, N × u64 layer sizes, f64 rho, f64 dropout, u8 normalize, u8 split mode
//! u64     tensor count, then per tensor: u64 length, length × f64
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, JointVocabulary, MultimodalDocument};
use crate::deep::{DeepParams, DeepSettings, Head, SplitMode};
use crate::error::{Error, Result};
use crate::nade::{Restrict, ShallowParams};
use crate::params::ParamSet;
use crate::wordtree::WordTree;

pub const MAGIC: &[u8; 8] = b"DOCNADE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DocNade,
    SupDocNade,
    DeepDocNade,
    SupDeepDocNade,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::DocNade,
        ModelKind::SupDocNade,
        ModelKind::DeepDocNade,
        ModelKind::SupDeepDocNade,
    ];

    pub fn is_deep(self) -> bool {
        matches!(self, ModelKind::DeepDocNade | ModelKind::SupDeepDocNade)
    }

    pub fn is_supervised(self) -> bool {
        matches!(self, ModelKind::SupDocNade | ModelKind::SupDeepDocNade)
    }

    /// The model trained during unsupervised pretraining.
    pub fn unsupervised(self) -> ModelKind {
        if self.is_deep() {
            ModelKind::DeepDocNade
        } else {
            ModelKind::DocNade
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::DocNade => "docnade",
            ModelKind::SupDocNade => "supdocnade",
            ModelKind::DeepDocNade => "deepdocnade",
            ModelKind::SupDeepDocNade => "supdeepdocnade",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::DocNade => 0,
            ModelKind::SupDocNade => 1,
            ModelKind::DeepDocNade => 2,
            ModelKind::SupDeepDocNade => 3,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Format(format!("unknown model kind tag {tag}")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Network weights with whatever fixed structure they need at inference.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Shallow { params: ShallowParams, tree: WordTree },
    Deep { params: DeepParams, settings: DeepSettings },
}

/// Parameters only, for gradient/averaging bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyParams {
    Shallow(ShallowParams),
    Deep(DeepParams),
}

impl ParamSet for AnyParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            AnyParams::Shallow(p) => p.tensors(),
            AnyParams::Deep(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            AnyParams::Shallow(p) => p.tensors_mut(),
            AnyParams::Deep(p) => p.tensors_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub head: Head,
    pub n_classes: usize,
    pub n_features: usize,
    pub network: Network,
}

impl Model {
    pub fn vocab_size(&self) -> usize {
        match &self.network {
            Network::Shallow { params, .. } => params.vocab_size(),
            Network::Deep { params, .. } => params.vocab_size(),
        }
    }

    pub fn params(&self) -> AnyParams {
        match &self.network {
            Network::Shallow { params, .. } => AnyParams::Shallow(params.clone()),
            Network::Deep { params, .. } => AnyParams::Deep(params.clone()),
        }
    }

    pub fn set_params(&mut self, new: &AnyParams) {
        match (&mut self.network, new) {
            (Network::Shallow { params, .. }, AnyParams::Shallow(p)) => params.clone_from(p),
            (Network::Deep { params, .. }, AnyParams::Deep(p)) => params.clone_from(p),
            _ => panic!("parameter family mismatch"),
        }
    }

    /// Checks that a corpus can be scored by this model.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        Error::check_dim("vocabulary size Q", self.vocab_size(), corpus.vocabulary.size())?;
        if self.kind.is_supervised() {
            Error::check_dim("class count C", self.n_classes, corpus.n_classes)?;
        }
        if self.kind.is_deep() && self.n_features > 0 {
            Error::check_dim("global feature length N_f", self.n_features, corpus.n_features)?;
        }
        Ok(())
    }

    /// Representation used for downstream tasks, from visual words only.
    pub fn represent(&self, doc: &MultimodalDocument, vocab: &JointVocabulary) -> Result<Vec<f64>> {
        Ok(match &self.network {
            Network::Shallow { params, .. } => params.represent(doc, vocab, Restrict::VisualOnly).to_vec(),
            Network::Deep { params, settings } => params.represent(&doc.visual_only(vocab), vocab, settings)?.to_vec(),
        })
    }

    /// Class probabilities (softmax) or per-class probabilities (sigmoid)
    /// from the visual words.
    pub fn class_scores(&self, doc: &MultimodalDocument, vocab: &JointVocabulary) -> Result<Vec<f64>> {
        if !self.kind.is_supervised() {
            return Err(Error::Config(format!("{} has no supervised head", self.kind)));
        }
        match &self.network {
            Network::Shallow { params, .. } => {
                let h = params.represent(doc, vocab, Restrict::VisualOnly);
                Ok(params.posterior_from_hidden(h.view()))
            }
            Network::Deep { params, settings } => params.class_scores(doc, vocab, settings, self.head),
        }
    }

    // -- serialization ----------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        out.write_u8(self.kind.tag())?;
        out.write_u8(match self.head {
            Head::Softmax => 0,
            Head::Sigmoid => 1,
        })?;
        out.write_u64::<LittleEndian>(self.vocab_size() as u64)?;
        out.write_u64::<LittleEndian>(self.n_classes as u64)?;
        out.write_u64::<LittleEndian>(self.n_features as u64)?;
        let tensors = match &self.network {
            Network::Shallow { params, tree } => {
                out.write_u64::<LittleEndian>(params.hidden() as u64)?;
                out.write_u64::<LittleEndian>(tree.n_internal() as u64)?;
                out.write_u64::<LittleEndian>(tree.seed().unwrap_or(0))?;
                out.write_u8(tree.seed().is_some() as u8)?;
                params.tensors()
            }
            Network::Deep { params, settings } => {
                out.write_u64::<LittleEndian>(params.n_layers() as u64)?;
                for h in params.hidden_sizes() {
                    out.write_u64::<LittleEndian>(h as u64)?;
                }
                out.write_f64::<LittleEndian>(settings.rho)?;
                out.write_f64::<LittleEndian>(settings.dropout_rate)?;
                out.write_u8(settings.normalize_input as u8)?;
                out.write_u8(match settings.split_mode {
                    SplitMode::ExactPrefix => 0,
                    SplitMode::PerWordUniform => 1,
                })?;
                params.tensors()
            }
        };
        write_tensors(out, &tensors)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let model = Self::read_from(&mut r)?;
        if r.position() as usize != bytes.len() {
            return Err(Error::Format("trailing bytes after model".into()));
        }
        Ok(model)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated model: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(fmt)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = ModelKind::from_tag(r.read_u8().map_err(fmt)?)?;
        let head = match r.read_u8().map_err(fmt)? {
            0 => Head::Softmax,
            1 => Head::Sigmoid,
            t => return Err(Error::Format(format!("unknown head tag {t}"))),
        };
        let q = read_len(r)?;
        let n_classes = read_len(r)?;
        let n_features = read_len(r)?;
        let network = if kind.is_deep() {
            let n = read_len(r)?;
            if n == 0 || n > crate::deep::MAX_LAYERS {
                return Err(Error::Format(format!("bad layer count {n}")));
            }
            let sizes = (0..n).map(|_| read_len(r)).collect::<Result<Vec<_>>>()?;
            let rho = r.read_f64::<LittleEndian>().map_err(fmt)?;
            let dropout_rate = r.read_f64::<LittleEndian>().map_err(fmt)?;
            let normalize_input = r.read_u8().map_err(fmt)? != 0;
            let split_mode = match r.read_u8().map_err(fmt)? {
                0 => SplitMode::ExactPrefix,
                1 => SplitMode::PerWordUniform,
                t => return Err(Error::Format(format!("unknown split mode tag {t}"))),
            };
            let mut params = DeepParams::zeros(q, &sizes, n_features, n_classes)?;
            read_tensors(r, &mut params)?;
            Network::Deep {
                params,
                settings: DeepSettings {
                    rho,
                    dropout_rate,
                    normalize_input,
                    split_mode,
                },
            }
        } else {
            let h = read_len(r)?;
            let t = read_len(r)?;
            let seed = r.read_u64::<LittleEndian>().map_err(fmt)?;
            let shuffled = r.read_u8().map_err(fmt)? != 0;
            let tree = if shuffled {
                WordTree::build(q, seed)?
            } else {
                WordTree::unshuffled(q)?
            };
            Error::check_dim("tree internal nodes", tree.n_internal(), t)?;
            let mut params = ShallowParams::zeros(h, q, n_classes);
            read_tensors(r, &mut params)?;
            Network::Shallow { params, tree }
        };
        Ok(Model {
            kind,
            head,
            n_classes,
            n_features,
            network,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable dump: dimensions plus every tensor by name.
    pub fn to_text(&self) -> String {
        let mut tensors = serde_json::Map::new();
        let params = self.params();
        for (name, data) in params.tensors() {
            tensors.insert(name.to_string(), serde_json::json!(data));
        }
        let mut dims = serde_json::json!({
            "Q": self.vocab_size(),
            "C": self.n_classes,
            "N_f": self.n_features,
        });
        match &self.network {
            Network::Shallow { params, tree } => {
                dims["H"] = params.hidden().into();
                dims["T"] = tree.n_internal().into();
                dims["tree_seed"] = tree.seed().into();
            }
            Network::Deep { params, settings } => {
                dims["layers"] = serde_json::json!(params.hidden_sizes());
                dims["settings"] = serde_json::to_value(settings).expect("plain struct");
            }
        }
        let doc = serde_json::json!({
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "head": self.head,
            "dims": dims,
            "tensors": tensors,
        });
        serde_json::to_string_pretty(&doc).expect("plain json")
    }
}

pub(crate) fn write_tensors<W: Write>(out: &mut W, tensors: &[(&str, &[f64])]) -> std::io::Result<()> {
    out.write_u64::<LittleEndian>(tensors.len() as u64)?;
    for (_, data) in tensors {
        out.write_u64::<LittleEndian>(data.len() as u64)?;
        for &x in *data {
            out.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub(crate) fn read_tensors<R: Read, P: ParamSet>(r: &mut R, params: &mut P) -> Result<()> {
    let fmt = |e: std::io::Error| Error::Format(format!("truncated tensor data: {e}"));
    let n = read_len(r)?;
    let targets = params.tensors_mut();
    Error::check_dim("tensor count", targets.len(), n)?;
    for t in targets {
        let len = read_len(r)?;
        Error::check_dim("tensor length", t.len(), len)?;
        for x in t.iter_mut() {
            *x = r.read_f64::<LittleEndian>().map_err(fmt)?;
        }
    }
    Ok(())
}

pub(crate) fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
}

/// Builds an initialized model: body weights from one stream, supervised
/// head from another, so pretraining and direct training share a body.
pub fn init_model<R: Rng + ?Sized>(
    kind: ModelKind,
    head: Head,
    hidden: &[usize],
    vocab_size: usize,
    n_classes: usize,
    n_features: usize,
    tree_seed: u64,
    settings: DeepSettings,
    body_rng: &mut R,
    head_rng: &mut R,
) -> Result<Model> {
    let classes = if kind.is_supervised() { n_classes } else { 0 };
    let network = if kind.is_deep() {
        let mut params = DeepParams::init(vocab_size, hidden, n_features, 0, body_rng)?;
        if classes > 0 {
            params = params.with_head(classes, head_rng);
        }
        Network::Deep { params, settings }
    } else {
        let [h] = hidden else {
            return Err(Error::Config(format!(
                "{kind} has exactly one hidden layer, got {} sizes",
                hidden.len()
            )));
        };
        let mut params = ShallowParams::init(*h, vocab_size, 0, body_rng);
        if classes > 0 {
            attach_shallow_head(&mut params, classes, head_rng);
        }
        Network::Shallow {
            params,
            tree: WordTree::build(vocab_size, tree_seed)?,
        }
    };
    Ok(Model {
        kind,
        head,
        n_classes: classes,
        n_features: if kind.is_deep() { n_features } else { 0 },
        network,
    })
}

pub(crate) fn attach_shallow_head<R: Rng + ?Sized>(params: &mut ShallowParams, n_classes: usize, rng: &mut R) {
    params.u = crate::params::glorot_init(n_classes, params.hidden(), rng);
    params.d = ndarray::Array1::zeros(n_classes);
}

/// Same body with a freshly drawn supervised head, as used when an
/// unsupervised model seeds supervised fine-tuning.
pub fn with_fresh_head<R: Rng + ?Sized>(
    model: &Model,
    kind: ModelKind,
    head: Head,
    n_classes: usize,
    rng: &mut R,
) -> Model {
    let network = match &model.network {
        Network::Shallow { params, tree } => {
            let mut params = params.clone();
            attach_shallow_head(&mut params, n_classes, rng);
            Network::Shallow {
                params,
                tree: tree.clone(),
            }
        }
        Network::Deep { params, settings } => Network::Deep {
            params: params.with_head(n_classes, rng),
            settings: *settings,
        },
    };
    Model {
        kind,
        head,
        n_classes,
        n_features: model.n_features,
        network,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model(kind: ModelKind) -> Model {
        let mut a = rng::stream(1, rng::INIT, &[0]);
        let mut b = rng::stream(1, rng::INIT, &[1]);
        let hidden: &[usize] = if kind.is_deep() { &[4, 3] } else { &[4] };
        init_model(
            kind,
            Head::Softmax,
            hidden,
            9,
            3,
            2,
            5,
            DeepSettings::default(),
            &mut a,
            &mut b,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip() {
        for kind in ModelKind::ALL {
            let m = model(kind);
            let bytes = m.to_bytes();
            assert_eq!(&bytes[..8], MAGIC);
            let back = Model::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let bytes = model(ModelKind::SupDocNade).to_bytes();
        assert!(Model::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Model::from_bytes(&extra).is_err());
    }

    #[test]
    fn text_export_names_tensors() {
        let t = model(ModelKind::SupDeepDocNade).to_text();
        let v: serde_json::Value = serde_json::from_str(&t).unwrap();
        for name in ["W1", "c1", "W2", "c2", "P", "V_out", "b_out", "U", "d"] {
            assert!(v["tensors"].get(name).is_some(), "{name}");
        }
        assert_eq!(v["dims"]["Q"], 9);
    }
}
