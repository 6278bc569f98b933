use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use snf_core::corpus::Split;
use snf_core::sparse_ft::perplexity;
use snf_core::Result;

use crate::common::{config_hash, load_model, provenance, select_corpora, write};

/// Reports perplexity on the validation and probe splits.
#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpora: PathBuf,
    /// Comma-separated languages; default all.
    #[arg(long)]
    pub languages: Option<String>,
    /// Recorded in the provenance header.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Settings<'a> {
    languages: &'a [String],
    splits: [Split; 2],
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let ck = load_model(&args.checkpoint)?;
    let corpora = select_corpora(&args.corpora, args.languages.as_deref())?;
    let languages: Vec<String> = corpora.iter().map(|c| c.lang_id.clone()).collect();
    let splits = [Split::Validation, Split::Probe];
    let hash = config_hash(&Settings {
        languages: &languages,
        splits,
    });
    let mut csv = provenance(args.seed, &ck.fingerprint, &hash).header();
    csv.push_str("lang,split,perplexity\n");
    for c in &corpora {
        for split in splits {
            let ppl = perplexity(&ck.model, c, split)?;
            csv.push_str(&format!("{},{},{ppl}\n", c.lang_id, split.name()));
        }
    }
    write(&args.out, csv)
}
