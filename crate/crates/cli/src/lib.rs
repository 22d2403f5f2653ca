//! Command-line front end: one subcommand per pipeline stage, with stage
//! artifacts as plain files in a work directory.

pub mod config;
pub mod exit;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ftm_core::mapper::{DistanceStrategy, ExportFormat};
use ftm_core::photo::DuplicateMode;

use crate::config::PipelineConfig;
use crate::exit::CliError;
use crate::stages::{Stages, SynthEvalOptions};

#[derive(Debug, Parser)]
#[command(
    name = "ftm",
    version,
    about = "Building attributes from geotagged street photos and OSM footprints"
)]
pub struct Cli {
    /// TOML config; relative paths inside resolve against its directory.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding stage artifacts.
    #[arg(long, global = true)]
    pub work: Option<PathBuf>,
    /// Worker threads for per-photo stages.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

type Step<'a> = (&'a str, &'a dyn Fn() -> Result<String, CliError>);

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read photo metadata and OSM buildings into the work directory.
    Ingest(IngestArgs),
    /// Drop photos with shared positions or no compass direction.
    FilterMeta(MetaArgs),
    /// Keep photos that look like street views and show a building.
    FilterContent(ContentArgs),
    /// Match each photo to the building on its line of sight.
    Match(MatchArgs),
    /// Filter scene-text detections by score, stopwords and repetition.
    FilterStr(StrArgs),
    /// Label kept texts as house number, year, other number or text.
    Classify(ClassifyArgs),
    /// Print image counts per building function.
    Aggregate,
    /// Write the per-building attribute map.
    Export(ExportArgs),
    /// Cross-check the matcher against a brute-force oracle on synthetic scenes.
    SynthEval(SynthArgs),
    /// Print a reproducible random sample of photos with kept text.
    AuditSample(AuditArgs),
    /// Run every stage from ingest to export.
    Pipeline(Box<PipelineArgs>),
}

#[derive(Debug, Args, Default)]
pub struct IngestArgs {
    /// Photo metadata JSONL (instead of `endpoint`).
    #[arg(long)]
    pub photos: Option<PathBuf>,
    /// Photo metadata REST endpoint; the key comes from FTM_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// min_lat,min_lon,max_lat,max_lon for the REST query.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    pub bbox: Option<Vec<f64>>,
    /// OSM XML or GeoJSON building extract.
    #[arg(long)]
    pub osm: Option<PathBuf>,
    /// Tag-to-function table replacing the bundled one.
    #[arg(long)]
    pub mapping_table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DuplicateArg {
    Global,
    PerUploader,
}

#[derive(Debug, Args, Default)]
pub struct MetaArgs {
    /// Duplicate positions across all uploaders or within one uploader.
    #[arg(long, value_enum)]
    pub duplicate_mode: Option<DuplicateArg>,
}

#[derive(Debug, Args, Default)]
pub struct ContentArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long)]
    pub objects: Option<PathBuf>,
    /// Minimum best cosine similarity to a seed [assumed default: 0.7].
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    /// Building must cover more than this image fraction [assumed default: 0.1].
    #[arg(long)]
    pub size_threshold: Option<f64>,
    /// Building detection confidence must exceed this [assumed default: 0.8].
    #[arg(long)]
    pub confidence_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Intersection,
    Centroid,
}

#[derive(Debug, Args, Default)]
pub struct MatchArgs {
    /// Sight-line length in meters [assumed default: 200].
    #[arg(long)]
    pub max_range: Option<f64>,
    /// Pick the nearest hit along the ray or the nearest centroid.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
}

#[derive(Debug, Args, Default)]
pub struct StrArgs {
    /// Raw STR detections JSONL.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Text score must exceed this [default: 0.8].
    #[arg(long)]
    pub text_threshold: Option<f64>,
    /// Box score must exceed this [default: 0.8].
    #[arg(long)]
    pub box_threshold: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ClassifyArgs {
    /// Latest year read as a construction date [default: this year].
    #[arg(long)]
    pub current_year: Option<u32>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Default)]
pub enum FormatArg {
    #[default]
    Geojson,
    Csv,
}

impl From<FormatArg> for ExportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Geojson => ExportFormat::GeoJson,
            FormatArg::Csv => ExportFormat::Csv,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct ExportArgs {
    #[arg(long, value_enum, default_value_t)]
    pub format: FormatArg,
    /// Output file [default: map.geojson or map.csv in the work directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of scenes.
    #[arg(long, default_value_t = 1000)]
    pub seeds: u64,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub start: u64,
    #[arg(long, default_value_t = 30)]
    pub buildings: usize,
    /// Side of the square scene in meters.
    #[arg(long, default_value_t = 200.0)]
    pub area: f64,
    /// Write one JSON line per scene here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Only photos with at least one numeric text.
    #[arg(long)]
    pub numeric_only: bool,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub meta: MetaArgs,
    #[command(flatten)]
    pub content: ContentArgs,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub strpost: StrArgs,
    #[command(flatten)]
    pub classify: ClassifyArgs,
    #[command(flatten)]
    pub export: ExportArgs,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl IngestArgs {
    fn apply(&self, c: &mut PipelineConfig) -> Result<(), CliError> {
        set_opt(&mut c.photos, self.photos.clone());
        set_opt(&mut c.endpoint, self.endpoint.clone());
        set_opt(&mut c.osm, self.osm.clone());
        set_opt(&mut c.mapping_table, self.mapping_table.clone());
        if let Some(b) = &self.bbox {
            let b: [f64; 4] = b
                .as_slice()
                .try_into()
                .map_err(|_| CliError::Config("--bbox takes four numbers".into()))?;
            c.bbox = Some(b);
        }
        Ok(())
    }
}

impl MetaArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(
            &mut c.duplicate_mode,
            self.duplicate_mode.map(|m| match m {
                DuplicateArg::Global => DuplicateMode::Global,
                DuplicateArg::PerUploader => DuplicateMode::PerUploader,
            }),
        );
    }
}

impl ContentArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.features, self.features.clone());
        set_opt(&mut c.seeds, self.seeds.clone());
        set_opt(&mut c.objects, self.objects.clone());
        set(&mut c.similarity_threshold, self.similarity_threshold);
        set(&mut c.size_threshold, self.size_threshold);
        set(&mut c.confidence_threshold, self.confidence_threshold);
    }
}

impl MatchArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.max_range, self.max_range);
        set(
            &mut c.match_strategy,
            self.strategy.map(|s| match s {
                StrategyArg::Intersection => DistanceStrategy::Intersection,
                StrategyArg::Centroid => DistanceStrategy::Centroid,
            }),
        );
    }
}

impl StrArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.detections, self.detections.clone());
        set(&mut c.text_threshold, self.text_threshold);
        set(&mut c.box_threshold, self.box_threshold);
    }
}

impl ClassifyArgs {
    fn apply(&self, c: &mut PipelineConfig) {
        set_opt(&mut c.current_year, self.current_year);
    }
}

/// Loads the config and lays flags over it; a flag always wins.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut c = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut c.work_dir, cli.work.clone());
    set(&mut c.workers, cli.workers);
    match &cli.command {
        Command::Ingest(a) => a.apply(&mut c)?,
        Command::FilterMeta(a) => a.apply(&mut c),
        Command::FilterContent(a) => a.apply(&mut c),
        Command::Match(a) => a.apply(&mut c),
        Command::FilterStr(a) => a.apply(&mut c),
        Command::Classify(a) => a.apply(&mut c),
        Command::Pipeline(a) => {
            a.ingest.apply(&mut c)?;
            a.meta.apply(&mut c);
            a.content.apply(&mut c);
            a.matching.apply(&mut c);
            a.strpost.apply(&mut c);
            a.classify.apply(&mut c);
        }
        Command::Aggregate
        | Command::Export(_)
        | Command::SynthEval(_)
        | Command::AuditSample(_) => {}
    }
    c.validate()?;
    Ok(c)
}

/// Runs the selected subcommand and returns what it prints.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let stages = Stages::new(resolve_config(cli)?);
    match &cli.command {
        Command::Ingest(_) => stages.ingest(),
        Command::FilterMeta(_) => stages.filter_meta(),
        Command::FilterContent(_) => stages.filter_content(),
        Command::Match(_) => stages.match_photos(),
        Command::FilterStr(_) => stages.filter_str(),
        Command::Classify(_) => stages.classify(),
        Command::Aggregate => stages.aggregate(),
        Command::Export(a) => stages.export(a.format.into(), a.out.as_deref()),
        Command::SynthEval(a) => stages.synth_eval(&SynthEvalOptions {
            seeds: a.seeds,
            start: a.start,
            buildings: a.buildings,
            area: a.area,
            out: a.out.clone(),
        }),
        Command::AuditSample(a) => stages.audit_sample(a.n, a.seed, a.numeric_only),
        Command::Pipeline(a) => {
            let mut out = String::new();
            let steps: [Step<'_>; 8] = [
                ("ingest", &|| stages.ingest()),
                ("filter-meta", &|| stages.filter_meta()),
                ("filter-content", &|| stages.filter_content()),
                ("match", &|| stages.match_photos()),
                ("filter-str", &|| stages.filter_str()),
                ("classify", &|| stages.classify()),
                ("aggregate", &|| stages.aggregate()),
                ("export", &|| {
                    stages.export(a.export.format.into(), a.export.out.as_deref())
                }),
            ];
            for (name, step) in steps {
                out.push_str(&format!("== {name}\n"));
                out.push_str(&step()?);
            }
            Ok(out)
        }
    }
}
