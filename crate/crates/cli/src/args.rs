use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "hdrtv", version, about = "SDRTV-to-HDRTV formation model, networks and LUT tools")]
#[command(args_override_self = true)]
pub struct Cli {
    /// INI file with a [global] section and one section per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (falls back to HDRTV_THREADS, then all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Fixed reduction orders. Every reduction already runs in a fixed
    /// order, so this is recorded in the manifest and changes nothing else.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Synthesize scenes and form a paired SDR/HDR patch dataset.
    Synth(SynthArgs),
    /// Build a dataset from equally named SDR and HDR PNG frames.
    Ingest(IngestArgs),
    /// Train the global color mapping network.
    TrainAgcm(TrainAgcmArgs),
    /// Train local enhancement on the outputs of a trained AGCM.
    TrainLe(TrainLeArgs),
    /// Train highlight generation on the outputs of AGCM (and LE).
    TrainHg(TrainHgArgs),
    /// Convert SDR frames with a model chain, or apply one later stage.
    Infer(InferArgs),
    /// PSNR, SSIM and ΔE_ITP of predictions against references.
    Eval(EvalArgs),
    /// Sample a trained AGCM into a .cube 3D LUT.
    ExportLut(ExportLutArgs),
    /// Apply a .cube LUT to an image.
    ApplyLut(ApplyLutArgs),
    /// Write a LUT as a colored PLY point cloud.
    Lutcloud(LutcloudArgs),
    /// Write the color-transition test card.
    Testcard(TestcardArgs),
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Output dataset (.htvd).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write full frames as sdr/NAME.png and hdr/NAME.png here.
    #[arg(long)]
    pub png_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 48)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 32)]
    pub stride: usize,
    #[arg(long, default_value_t = 128)]
    pub cond_size: usize,
    #[arg(long, default_value_t = 10)]
    pub hdr_bits: u8,
    /// Log-uniform range of the SDR exposure key multiplier.
    #[arg(long, default_value_t = 0.5)]
    pub sdr_jitter_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub sdr_jitter_max: f64,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    #[arg(long)]
    pub sdr_dir: PathBuf,
    #[arg(long)]
    pub hdr_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub patch_size: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub cond_size: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainCommon {
    /// Training dataset (.htvd).
    #[arg(long)]
    pub data: PathBuf,
    /// Output checkpoint (.htvw).
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to OUT.log.csv.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of source images held out for validation (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 250)]
    pub val_every: usize,
    #[arg(long, default_value_t = 50)]
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Identity,
    Kaiming,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TrainAgcmArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Color condition blocks; 0 trains the base network alone.
    #[arg(long, default_value_t = 4)]
    pub cond_blocks: usize,
    #[arg(long, value_enum, default_value_t = InitArg::Identity)]
    pub init: InitArg,
    /// Condition input side used at inference.
    #[arg(long, default_value_t = 128)]
    pub cond_size: usize,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TrainLeArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    /// Trained AGCM checkpoint whose outputs feed the LE.
    #[arg(long)]
    pub agcm: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub blocks: usize,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TrainHgArgs {
    #[command(flatten)]
    pub common: TrainCommon,
    #[arg(long)]
    pub agcm: PathBuf,
    /// Optional LE checkpoint between the AGCM and the HG.
    #[arg(long)]
    pub le: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 0.95)]
    pub gamma_mask: f64,
    /// Weight of the masked L1 loss.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct InferArgs {
    /// Model chain, AGCM first: agcm, agcm+le, agcm+hg or agcm+le+hg.
    #[arg(long, conflicts_with = "stage")]
    pub chain: Option<String>,
    /// Apply a single later stage (le or hg) to 16-bit PQ/bt2020 input.
    #[arg(long)]
    pub stage: Option<String>,
    /// Checkpoints in chain order; repeat the flag or separate by commas.
    #[arg(long, required = true, value_delimiter = ',')]
    pub ckpt: Vec<PathBuf>,
    /// Input PNG or directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PNG, or directory when the input is one.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// Predicted PNG or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference PNG or directory; files pair up by name.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ExportLutArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// SDR frame that supplies the condition vector (conditioned models).
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[arg(long, default_value_t = 33)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TagArg {
    /// PQ, bt2020, 16-bit PNG.
    Hdr,
    /// Gamma 2.2, bt709, 8-bit PNG.
    Sdr,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct ApplyLutArgs {
    #[arg(long)]
    pub lut: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tagging of the output.
    #[arg(long, value_enum, default_value_t = TagArg::Hdr)]
    pub tag: TagArg,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct LutcloudArgs {
    /// AGCM checkpoint to sample.
    #[arg(long, conflicts_with = "lut", required_unless_present = "lut")]
    pub ckpt: Option<PathBuf>,
    /// Existing .cube file instead of a checkpoint.
    #[arg(long)]
    pub lut: Option<PathBuf>,
    #[arg(long)]
    pub cond: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
#[command(args_override_self = true)]
pub struct TestcardArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 896)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
}
