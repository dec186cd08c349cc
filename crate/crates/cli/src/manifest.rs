//! Run manifests and the run directories named after them.

use std::path::{Path, PathBuf};

use docnade::corpus::header_path;
use docnade::trainer::TrainConfig;
use docnade::{CorpusFormat, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ARTIFACT_VERSION: u32 = docnade::model::FORMAT_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: PathBuf,
    /// SHA-256 of the file (and its header, for text-sparse corpora).
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    pub format: String,
    pub corpora: Vec<(String, InputFile)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<InputFile>,
    /// Command-specific options not covered by the training config.
    #[serde(default)]
    pub options: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, format: CorpusFormat) -> Self {
        Self {
            command: command.into(),
            artifact_version: ARTIFACT_VERSION,
            seed,
            config: None,
            format: match format {
                CorpusFormat::TextSparse => "text-sparse".into(),
                CorpusFormat::RecordLines => "record-lines".into(),
            },
            corpora: Vec::new(),
            model: None,
            options: serde_json::Value::Null,
        }
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        self.format.parse()
    }

    pub fn add_corpus(&mut self, role: &str, path: &Path, format: CorpusFormat) -> Result<()> {
        let mut hasher = Sha256::new();
        hasher.update(read(path)?);
        if format == CorpusFormat::TextSparse {
            hasher.update(read(&header_path(path))?);
        }
        self.corpora.push((
            role.into(),
            InputFile {
                path: path.to_path_buf(),
                sha256: hex::encode(hasher.finalize()),
            },
        ));
        Ok(())
    }

    pub fn corpus(&self, role: &str) -> Option<&Path> {
        self.corpora
            .iter()
            .find(|(r, _)| r == role)
            .map(|(_, f)| f.path.as_path())
    }

    pub fn set_model(&mut self, path: &Path) -> Result<()> {
        self.model = Some(InputFile {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(read(path)?)),
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// `<root>/<command>-<first 16 hex digits of the manifest hash>`, created
    /// with the manifest written inside.
    pub fn create_run_dir(&self, root: &Path) -> Result<PathBuf> {
        let dir = root.join(format!("{}-{}", self.command, &self.hash()[..16]));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        write(&dir.join("manifest.json"), self.to_json())?;
        Ok(dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
