use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use snf_core::lape::SubnetworkSpec;
use snf_core::model::{fingerprint, save_checkpoint};
use snf_core::sparse_ft::{build_mask, finetune, log_to_jsonl};
use snf_core::{Error, Mode, ParamMask, Result, TrainConfig};

use crate::common::{config_hash, Checkpoint, create_dir, load_model, provenance, select_corpora, write, write_json, OutArgs};
use crate::train_args::TrainArgs;

/// Fine-tunes a checkpoint on one language with a parameter mask.
#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Subnetwork spec; required for target and random modes.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub corpora: PathBuf,
    /// Language to fine-tune on; default the spec's language.
    #[arg(long)]
    pub lang: Option<String>,
    /// target, random, ffn_only or full.
    #[arg(long, default_value_t = Mode::Target)]
    pub mode: Mode,
    /// Seeds batch order and the random mask.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct Settings<'a> {
    mode: Mode,
    lang: &'a str,
    base_fingerprint: &'a str,
    spec_neurons: Option<usize>,
    train: &'a TrainConfig,
}

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    model_fingerprint: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    settings: Settings<'a>,
    trainable_count: usize,
    total_count: usize,
    steps: usize,
    best_step: usize,
    best_val_loss: f64,
    initial_val_loss: f64,
}

/// The mask a mode trains; only target and random need a spec.
pub fn mask_for(ck: &Checkpoint, spec: Option<&SubnetworkSpec>, mode: Mode, seed: u64) -> Result<ParamMask> {
    let cfg = &ck.model.config;
    match (spec, mode) {
        (Some(s), mode) => build_mask(cfg, s, mode, seed),
        (None, Mode::Full | Mode::FfnOnly) => {
            let empty = SubnetworkSpec {
                lang: String::new(),
                model_fingerprint: ck.fingerprint.clone(),
                k_percent: 0.0,
                tau_activity: 0.0,
                tau_selectivity: 0.0,
                neurons: Vec::new(),
                stats_fingerprint: None,
                seed: None,
                config_hash: None,
            };
            build_mask(cfg, &empty, mode, seed)
        }
        (None, mode) => Err(Error::Config(format!("mode {mode} needs --spec"))),
    }
}

/// Rejects a spec identified on a different model.
pub fn check_spec(spec: &SubnetworkSpec, ck: &Checkpoint, path: &Path) -> Result<()> {
    if spec.model_fingerprint != ck.fingerprint {
        return Err(Error::Consistency(format!(
            "spec {} was identified on model {}, checkpoint {} is {}",
            spec.lang,
            spec.model_fingerprint,
            path.display(),
            ck.fingerprint
        )));
    }
    Ok(())
}

pub fn run(args: &FinetuneArgs) -> Result<()> {
    let ck = load_model(&args.checkpoint)?;
    let spec = args.spec.as_deref().map(SubnetworkSpec::load).transpose()?;
    if let Some(s) = &spec {
        check_spec(s, &ck, &args.checkpoint)?;
    }
    let cfg = args.train.apply(TrainConfig::for_mode(args.mode), args.seed);
    cfg.validate()?;

    let mask = mask_for(&ck, spec.as_ref(), args.mode, args.seed)?;
    let lang = match (&args.lang, &spec) {
        (Some(l), _) => l.clone(),
        (None, Some(s)) => s.lang.clone(),
        (None, None) => return Err(Error::Config("--lang is required without --spec".into())),
    };
    let corpus = select_corpora(&args.corpora, Some(&lang))?.remove(0);

    let settings = Settings {
        mode: args.mode,
        lang: &lang,
        base_fingerprint: &ck.fingerprint,
        spec_neurons: spec.as_ref().map(|s| s.len()),
        train: &cfg,
    };
    let hash = config_hash(&settings);
    let run = finetune(&ck.model, &corpus, &mask, &cfg)?;

    let out = &args.out.out;
    create_dir(out)?;
    save_checkpoint(&run.best, &out.join("best.snfg"))?;
    write(&out.join("finetune_log.jsonl"), log_to_jsonl(&run.log))?;
    let best_fp = fingerprint(&run.best);
    let prov = provenance(args.seed, &ck.fingerprint, &hash);
    write(&out.join("mask_summary.csv"), prov.header() + &mask.summary_csv())?;
    let report = Report {
        seed: args.seed,
        model_fingerprint: &best_fp,
        config_hash: &hash,
        settings,
        trainable_count: mask.trainable_count(),
        total_count: mask.total_count(),
        steps: run.steps,
        best_step: run.best_step,
        best_val_loss: run.best_val_loss,
        initial_val_loss: run.initial_val_loss,
    };
    write_json(&out.join("finetune.json"), &report)?;
    log::info!(
        "{} on {lang}: {} trainable, val loss {:.4} -> {:.4} at step {}",
        args.mode,
        mask.trainable_count(),
        run.initial_val_loss,
        run.best_val_loss,
        run.best_step
    );
    Ok(())
}
