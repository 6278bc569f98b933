use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use snf_core::analysis::Provenance;
use snf_core::corpus::{load_corpus_dir, LanguageCorpus};
use snf_core::lape::SelectionConfig;
use snf_core::model::{fingerprint, load_checkpoint};
use snf_core::{short_hash, Error, ModelBundle, Result};

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(path, s)
}

/// Hash of the settings that determine a command's results. Paths are left
/// out so reruns into other directories agree.
pub fn config_hash<T: Serialize>(settings: &T) -> String {
    short_hash(&serde_json::to_vec(settings).expect("settings serialize"))
}

pub fn provenance(seed: u64, model_fingerprint: &str, config_hash: &str) -> Provenance {
    Provenance {
        seed,
        model_fingerprint: model_fingerprint.to_string(),
        config_hash: config_hash.to_string(),
    }
}

pub struct Checkpoint {
    pub model: ModelBundle<f32>,
    pub fingerprint: String,
}

pub fn load_model(path: &Path) -> Result<Checkpoint> {
    let model = load_checkpoint(path)?;
    let fingerprint = fingerprint(&model);
    Ok(Checkpoint { model, fingerprint })
}

pub fn parse_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

/// The requested languages of a corpus directory, in the requested order, or
/// every language in name order.
pub fn select_corpora(root: &Path, languages: Option<&str>) -> Result<Vec<LanguageCorpus>> {
    let mut all: BTreeMap<String, LanguageCorpus> = load_corpus_dir(root)?;
    match languages {
        None => Ok(all.into_values().collect()),
        Some(list) => parse_list(list)
            .into_iter()
            .map(|l| {
                all.remove(&l)
                    .ok_or_else(|| Error::Data(format!("language {l:?} not found under {}", root.display())))
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelectionArgs {
    /// Fraction of all FFN neurons kept, in (0, 1].
    #[arg(long, default_value_t = SelectionConfig::default().k_percent)]
    pub k_percent: f64,
    /// Minimum peak firing probability for a candidate neuron.
    #[arg(long, default_value_t = SelectionConfig::default().tau_activity)]
    pub tau_activity: f64,
    /// Minimum firing probability for membership in a language's subnetwork.
    #[arg(long, default_value_t = SelectionConfig::default().tau_selectivity)]
    pub tau_selectivity: f64,
}

impl SelectionArgs {
    pub fn config(&self) -> SelectionConfig {
        SelectionConfig {
            k_percent: self.k_percent,
            tau_activity: self.tau_activity,
            tau_selectivity: self.tau_selectivity,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}
