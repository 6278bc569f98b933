use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use snf_core::model::{fingerprint, save_checkpoint};
use snf_core::sparse_ft::{log_to_jsonl, pretrain};
use snf_core::{Error, ModelBundle, ModelConfig, Result, TrainConfig};

use crate::common::{config_hash, create_dir, read, select_corpora, write, write_json, OutArgs};
use crate::train_args::TrainArgs;

/// Trains a base model from scratch on several languages.
#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Directory laid out as <lang>/*.txt.
    #[arg(long)]
    pub corpora: PathBuf,
    /// Comma-separated languages to train on; default all.
    #[arg(long)]
    pub languages: Option<String>,
    /// Model configuration JSON; default the toy model.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Seeds weight initialization and batch order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct Settings<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    languages: &'a [String],
}

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    model_fingerprint: String,
    config_hash: String,
    #[serde(flatten)]
    settings: Settings<'a>,
    steps: usize,
    final_val_loss: Option<f64>,
}

pub fn run(args: &PretrainArgs) -> Result<()> {
    let mut model_cfg = match &args.model_config {
        Some(p) => serde_json::from_slice::<ModelConfig>(&read(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => ModelConfig::toy(),
    };
    model_cfg.seed = args.seed;
    model_cfg.validate()?;
    let cfg = args.train.apply(TrainConfig::pretrain(), args.seed);
    cfg.validate()?;

    let corpora = select_corpora(&args.corpora, args.languages.as_deref())?;
    if corpora.len() < 2 {
        return Err(Error::Data(format!(
            "pretraining needs at least 2 languages, {} has {}",
            args.corpora.display(),
            corpora.len()
        )));
    }
    let languages: Vec<String> = corpora.iter().map(|c| c.lang_id.clone()).collect();
    let settings = Settings {
        model: &model_cfg,
        train: &cfg,
        languages: &languages,
    };
    let hash = config_hash(&settings);

    let run = pretrain(ModelBundle::init(model_cfg.clone())?, &corpora, &cfg)?;
    let out = &args.out.out;
    create_dir(out)?;
    save_checkpoint(&run.model, &out.join("base.snfg"))?;
    write(&out.join("pretrain_log.jsonl"), log_to_jsonl(&run.log))?;
    let report = Report {
        seed: args.seed,
        model_fingerprint: fingerprint(&run.model),
        config_hash: hash,
        settings,
        steps: run.steps,
        final_val_loss: run.log.last().and_then(|e| e.val_loss),
    };
    write_json(&out.join("pretrain.json"), &report)?;
    log::info!("base model {} after {} steps", report.model_fingerprint, run.steps);
    Ok(())
}
