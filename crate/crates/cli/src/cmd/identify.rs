use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use snf_core::corpus::Split;
use snf_core::lape::{collect_stats, lape_scores, select_subnetworks, ActivationStats, SelectionConfig};
use snf_core::{Error, Result};

use crate::common::{config_hash, create_dir, load_model, select_corpora, write_json, OutArgs, SelectionArgs};

/// Collects firing statistics on probe splits and selects per-language
/// subnetworks. With `--stats`, re-runs selection on a saved dump instead.
#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long, required_unless_present = "stats")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "stats")]
    pub corpora: Option<PathBuf>,
    /// Comma-separated languages; default all.
    #[arg(long)]
    pub languages: Option<String>,
    /// A stats.json written by an earlier run.
    #[arg(long, conflicts_with_all = ["checkpoint", "corpora", "languages"])]
    pub stats: Option<PathBuf>,
    /// Recorded in every spec.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct Settings<'a> {
    selection: &'a SelectionConfig,
    languages: &'a [String],
    stats_fingerprint: String,
}

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    model_fingerprint: &'a str,
    config_hash: &'a str,
    #[serde(flatten)]
    settings: Settings<'a>,
    no_candidates: bool,
    sizes: Vec<(&'a str, usize)>,
}

fn gather_stats(args: &IdentifyArgs) -> Result<ActivationStats> {
    if let Some(path) = &args.stats {
        let stats = ActivationStats::load(path)?;
        if stats.model_fingerprint.is_empty() {
            return Err(Error::Consistency(format!("{} carries no model fingerprint", path.display())));
        }
        return Ok(stats);
    }
    let ck = load_model(args.checkpoint.as_ref().expect("clap requires a checkpoint"))?;
    let corpora = select_corpora(args.corpora.as_ref().expect("clap requires corpora"), args.languages.as_deref())?;
    let probes: Vec<(String, Vec<Vec<u8>>)> = corpora
        .into_iter()
        .map(|c| {
            if c.split_bytes(Split::Probe) == 0 {
                return Err(Error::Data(format!("{}: empty probe split", c.lang_id)));
            }
            Ok((c.lang_id, c.probe))
        })
        .collect::<Result<_>>()?;
    collect_stats(&ck.model, &probes)
}

pub fn run(args: &IdentifyArgs) -> Result<()> {
    let cfg = args.selection.config();
    cfg.validate()?;
    let stats = gather_stats(args)?;
    let table = lape_scores(&stats)?;
    let selection = select_subnetworks(&table, &stats, &cfg)?;

    let settings = Settings {
        selection: &cfg,
        languages: &stats.languages,
        stats_fingerprint: stats.fingerprint(),
    };
    let hash = config_hash(&settings);
    let out = &args.out.out;
    create_dir(&out.join("specs"))?;
    if args.stats.is_none() {
        stats.save(&out.join("stats.json"))?;
    }
    for spec in &selection.specs {
        let mut spec = spec.clone();
        spec.seed = Some(args.seed);
        spec.config_hash = Some(hash.clone());
        spec.save(&out.join("specs").join(format!("{}.json", spec.lang)))?;
        log::info!("{}: {} neurons", spec.lang, spec.len());
    }
    let report = Report {
        seed: args.seed,
        model_fingerprint: &stats.model_fingerprint,
        config_hash: &hash,
        settings,
        no_candidates: selection.no_candidates,
        sizes: selection.specs.iter().map(|s| (s.lang.as_str(), s.len())).collect(),
    };
    write_json(&out.join("identify.json"), &report)
}
