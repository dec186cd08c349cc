//! DocNADE-family autoregressive topic models for multimodal bag-of-words
//! data: shallow tree-output models with exact backprop, deep models trained
//! on random histogram splits, plus training, evaluation and model files.

pub mod corpus;
pub mod deep;
pub mod error;
pub mod eval;
pub mod math;
pub mod model;
pub mod nade;
pub mod params;
pub mod rng;
pub mod synthetic;
pub mod trainer;
pub mod wordtree;

pub use corpus::{Corpus, CorpusFormat, JointVocabulary, MultimodalDocument, WeightVector};
pub use error::{Error, Result};
pub use nade::{OrderedDocument, Restrict, ShallowParams};
pub use params::ParamSet;
pub use wordtree::WordTree;
