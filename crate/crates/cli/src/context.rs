use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use adda_core::data::{apply_shift, preprocess, split, DatasetContainer, PreprocessConfig, SyntheticShiftSpec};
use adda_core::models::{load_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use adda_core::pipeline::{hex, Domain, RunConfig};
use adda_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Fraction kept for training when a dataset has no `-train`/`-test` pair.
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

#[derive(Serialize)]
struct Versions {
    adda: &'static str,
    checkpoint_format: u16,
}

/// Written as `manifest.json` next to every command's outputs. Holds what
/// is needed to repeat the run: the arguments, the effective configuration
/// and digests of every file read.
#[derive(Serialize)]
pub struct Manifest {
    command: String,
    args: Vec<String>,
    config: RunConfig,
    config_hash: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    versions: Versions,
}

pub struct Context {
    pub cfg: RunConfig,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    manifest: Manifest,
}

impl Context {
    pub fn new(command: &str, cfg: RunConfig, data_dir: PathBuf, out: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
        let manifest = Manifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            versions: Versions {
                adda: adda_core::VERSION,
                checkpoint_format: CHECKPOINT_VERSION,
            },
        };
        Ok(Context {
            cfg,
            data_dir,
            out,
            manifest,
        })
    }

    pub fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest
            .inputs
            .insert(path.display().to_string(), hex(&Sha256::digest(bytes)));
    }

    fn hash_file(&mut self, path: &Path) -> Result<()> {
        let bytes = read_bytes(path)?;
        self.record_input(path, &bytes);
        Ok(())
    }

    /// Splits a dataset reference into directory and name. Bare names live
    /// in the data directory; anything with a path component is taken as is.
    pub fn locate(&self, reference: &str) -> (PathBuf, String) {
        let p = Path::new(reference);
        match (p.parent(), p.file_name()) {
            (Some(parent), Some(name)) if !parent.as_os_str().is_empty() => {
                (parent.to_path_buf(), name.to_string_lossy().into_owned())
            }
            _ => (self.data_dir.clone(), reference.to_string()),
        }
    }

    /// Loads exactly the IDX pair `<reference>-images.idx` / `-labels.idx`.
    pub fn load_dataset(&mut self, reference: &str) -> Result<DatasetContainer> {
        let (dir, name) = self.locate(reference);
        self.hash_file(&DatasetContainer::image_path(&dir, &name))?;
        self.hash_file(&DatasetContainer::labels_path(&dir, &name))?;
        DatasetContainer::load(&dir, &name)
    }

    /// Raw train and test splits of a domain. Uses `<name>-train` and
    /// `<name>-test` when both exist, otherwise a seeded split of `<name>`.
    pub fn load_splits(&mut self, reference: &str) -> Result<(DatasetContainer, DatasetContainer)> {
        let (dir, name) = self.locate(reference);
        let (train, test) = (format!("{name}-train"), format!("{name}-test"));
        if DatasetContainer::image_path(&dir, &train).exists() && DatasetContainer::image_path(&dir, &test).exists() {
            let prefix = |n: &str| dir.join(n).display().to_string();
            Ok((self.load_dataset(&prefix(&train))?, self.load_dataset(&prefix(&test))?))
        } else {
            let whole = self.load_dataset(reference)?;
            split(&whole, TRAIN_FRACTION, self.cfg.seed)
        }
    }

    /// Loads, caps, shifts and preprocesses a domain.
    pub fn load_domain(
        &mut self,
        reference: &str,
        train_cap: Option<usize>,
        shift: Option<&SyntheticShiftSpec>,
    ) -> Result<Domain> {
        let (train, test) = self.load_splits(reference)?;
        let cap = |ds: DatasetContainer, cap: Option<usize>| match cap {
            Some(c) if c < ds.len() => {
                let name = ds.name.clone();
                ds.slice(0, c, name)
            }
            _ => ds,
        };
        let (mut train, mut test) = (cap(train, train_cap), cap(test, self.cfg.test_cap));
        if let Some(spec) = shift {
            train = apply_shift(&train, spec)?;
            test = apply_shift(&test, spec)?;
        }
        let pre = PreprocessConfig::default();
        Ok(Domain {
            name: self.locate(reference).1,
            train: preprocess(&train, &pre)?,
            test: preprocess(&test, &pre)?,
        })
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<Checkpoint> {
        let bytes = read_bytes(path)?;
        self.record_input(path, &bytes);
        load_checkpoint(&bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(mut self) -> Result<()> {
        self.manifest.outputs.sort();
        let path = self.out.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_error(&path, e))
    }
}
