use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use snf_core::corpus::{synth_documents, synth_parallel, toy_specs, write_corpus_dir, write_parallel_dir, SynthSpec, TOY_PRETRAIN_BYTES,
    TOY_TARGET_BYTES};
use snf_core::Result;

use crate::common::{config_hash, write_json};

/// Writes the default toy setting: four pretraining languages, one target.
#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bytes generated per pretraining language.
    #[arg(long, default_value_t = TOY_PRETRAIN_BYTES)]
    pub pretrain_bytes: usize,
    /// Bytes generated for the target language.
    #[arg(long, default_value_t = TOY_TARGET_BYTES)]
    pub target_bytes: usize,
    #[arg(long, default_value_t = 100)]
    pub parallel_sentences: usize,
    #[arg(long, default_value_t = 48)]
    pub sentence_len: usize,
}

#[derive(Serialize)]
struct Settings<'a> {
    seed: u64,
    pretrain: &'a [SynthSpec],
    target: &'a SynthSpec,
    pretrain_bytes: usize,
    target_bytes: usize,
    parallel_sentences: usize,
    sentence_len: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    settings: Settings<'a>,
    pretrain_languages: Vec<&'a str>,
    target_language: &'a str,
    config_hash: String,
}

pub fn run(args: &SynthArgs) -> Result<()> {
    let (pretrain, target) = toy_specs(args.seed);
    let corpora = args.out.join("corpora");
    for spec in &pretrain {
        write_corpus_dir(&corpora, &spec.lang_id, &synth_documents(spec, args.pretrain_bytes)?)?;
    }
    write_corpus_dir(&corpora, &target.lang_id, &synth_documents(&target, args.target_bytes)?)?;

    let mut all = pretrain.clone();
    all.push(target.clone());
    let parallel = synth_parallel(&all, args.parallel_sentences, args.sentence_len, args.seed)?;
    for (spec, sentences) in all.iter().zip(&parallel) {
        write_parallel_dir(&args.out.join("parallel"), &spec.lang_id, sentences)?;
    }

    let settings = Settings {
        seed: args.seed,
        pretrain: &pretrain,
        target: &target,
        pretrain_bytes: args.pretrain_bytes,
        target_bytes: args.target_bytes,
        parallel_sentences: args.parallel_sentences,
        sentence_len: args.sentence_len,
    };
    let hash = config_hash(&settings);
    let manifest = Manifest {
        settings,
        pretrain_languages: pretrain.iter().map(|s| s.lang_id.as_str()).collect(),
        target_language: &target.lang_id,
        config_hash: hash,
    };
    write_json(&args.out.join("synth.json"), &manifest)?;
    log::info!("wrote {} languages to {}", all.len(), corpora.display());
    Ok(())
}
