use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use snf_core::analysis::{
    cross_lingual_similarity, deltas_csv, histogram_csv, layer_histogram, overlap, overlap_csv, similarity_csv, weight_deltas, Pooling,
};
use snf_core::corpus::load_parallel_dir;
use snf_core::lape::SubnetworkSpec;
use snf_core::{Error, Mode, Result};

use crate::cmd::finetune::{check_spec, mask_for};
use crate::common::{config_hash, load_model, parse_list, provenance, write};

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Selected neurons per layer.
    Layers(LayersArgs),
    /// Pairwise intersection and Jaccard index of subnetworks.
    Overlap(OverlapArgs),
    /// Absolute weight changes between two checkpoints.
    Deltas(DeltasArgs),
    /// Cross-lingual cosine similarity of hidden states on parallel text.
    Similarity(SimilarityArgs),
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Repeat once per language.
    #[arg(long = "spec", required = true)]
    pub specs: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DeltasArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    /// Restrict to the entries this spec's mask trains.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Mask mode; given alone, restricts to that mode's mask.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Seed of the random mask.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    Mean,
    LastToken,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Mean => Pooling::Mean,
            PoolingArg::LastToken => Pooling::LastToken,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of <lang>.txt files, aligned line by line.
    #[arg(long)]
    pub parallel: PathBuf,
    /// Comma-separated languages; default all.
    #[arg(long)]
    pub languages: Option<String>,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: &AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Layers(a) => layers(a),
        AnalyzeCommand::Overlap(a) => overlap_cmd(a),
        AnalyzeCommand::Deltas(a) => deltas(a),
        AnalyzeCommand::Similarity(a) => similarity(a),
    }
}

fn layers(args: &LayersArgs) -> Result<()> {
    let ck = load_model(&args.checkpoint)?;
    let spec = SubnetworkSpec::load(&args.spec)?;
    check_spec(&spec, &ck, &args.checkpoint)?;
    let counts = layer_histogram(&spec, ck.model.config.n_layers)?;
    let hash = config_hash(&("layers", &spec.lang, spec.config_hash.as_deref()));
    write(&args.out, histogram_csv(&counts, &provenance(args.seed, &ck.fingerprint, &hash)))
}

fn overlap_cmd(args: &OverlapArgs) -> Result<()> {
    let specs: Vec<SubnetworkSpec> = args.specs.iter().map(|p| SubnetworkSpec::load(p)).collect::<Result<_>>()?;
    let m = overlap(&specs)?;
    let langs: Vec<&str> = specs.iter().map(|s| s.lang.as_str()).collect();
    let hash = config_hash(&("overlap", &langs));
    write(&args.out, overlap_csv(&m, &provenance(args.seed, &specs[0].model_fingerprint, &hash)))
}

#[derive(Serialize)]
struct DeltaSettings<'a> {
    after: &'a str,
    spec: Option<&'a str>,
    mode: Option<Mode>,
    seed: u64,
}

fn deltas(args: &DeltasArgs) -> Result<()> {
    let before = load_model(&args.before)?;
    let after = load_model(&args.after)?;
    let spec = args.spec.as_deref().map(SubnetworkSpec::load).transpose()?;
    if let Some(s) = &spec {
        check_spec(s, &before, &args.before)?;
    }
    let mask = match (&spec, args.mode) {
        (None, None) => None,
        (Some(_), None) => Some(mask_for(&before, spec.as_ref(), Mode::Target, args.seed)?),
        (_, Some(mode)) => Some(mask_for(&before, spec.as_ref(), mode, args.seed)?),
    };
    let stats = weight_deltas(&before.model, &after.model, mask.as_ref())?;
    let hash = config_hash(&DeltaSettings {
        after: &after.fingerprint,
        spec: spec.as_ref().map(|s| s.lang.as_str()),
        mode: mask.as_ref().map(|m| m.mode),
        seed: args.seed,
    });
    write(&args.out, deltas_csv(&stats, &provenance(args.seed, &before.fingerprint, &hash)))
}

fn similarity(args: &SimilarityArgs) -> Result<()> {
    let ck = load_model(&args.checkpoint)?;
    let mut all = load_parallel_dir(&args.parallel)?;
    let bundle: Vec<(String, Vec<Vec<u8>>)> = match &args.languages {
        None => all.into_iter().collect(),
        Some(list) => parse_list(list)
            .into_iter()
            .map(|l| {
                let s = all
                    .remove(&l)
                    .ok_or_else(|| Error::Data(format!("language {l:?} not found under {}", args.parallel.display())))?;
                Ok((l, s))
            })
            .collect::<Result<_>>()?,
    };
    let pooling: Pooling = args.pooling.into();
    let report = cross_lingual_similarity(&ck.model, &bundle, pooling)?;
    if report.degenerate > 0 {
        log::warn!("{} cosines taken on zero-norm states", report.degenerate);
    }
    let langs: Vec<&str> = bundle.iter().map(|(l, _)| l.as_str()).collect();
    let hash = config_hash(&("similarity", &langs, pooling));
    write(&args.out, similarity_csv(&report, &provenance(args.seed, &ck.fingerprint, &hash)))
}
