//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data error.
//!
//! Settings come from, in increasing priority: built-in defaults, a JSON config
//! file (`--config`), and flags. Config file fields, all optional:
//!
//! ```json
//! {
//!   "bbox": {"min": {"lat": 37.5, "lon": -122.35}, "max": {"lat": 37.58, "lon": -122.24}},
//!   "max_move_m": 50, "temporal_link_radius_m": 5, "snap_tol_m": 15,
//!   "holdout_years": [2023, 2024], "spatial_holdout_frac": 0.1,
//!   "max_paths_per_node": 32, "max_samples_per_sequence": 13,
//!   "lookaround_perms": "4", "seed": 0, "shard": {"index": 0, "count": 1},
//!   "metadata": "meta.csv", "osm": "roads.osm", "images": "panos/", "output": "out/",
//!   "views": "hashed", "region_vocab": false
//! }
//! ```

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::env::{rollout, write_trace, Env, EnvConfig, Start, DEFAULT_SNAP_RADIUS_M};
use crate::eval::{self, AdherenceRecord, BucketKey, GeorefRecord, MagnitudeRecord, NllRecord, WidthConvention};
use crate::geo::{BBox, GeoPoint};
use crate::panograph::{
    build_graph, load_metadata, split_graph, GraphConfig, NavGraph, NodeId, Split, DEFAULT_TEMPORAL_LINK_RADIUS_M,
    MAX_MOVE_M,
};
use crate::project::{project_lookaround, project_view, Equirect, ViewSpec, LOOKAROUND_OFFSETS};
use crate::roadnet::{ParseConfig, RoadNetwork, DEFAULT_SNAP_TOL_M};
use crate::seqgen::{generate, HashedViews, SeqConfig, SeqError, Shard, ViewSource};
use crate::synth::SyntheticViews;
use crate::tokenize::{build_vocab, read_jsonl, Modality, StubTokenizer, TokenVocab, VocabConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const DEFAULT_HOLDOUT_YEARS: [u16; 2] = [2023, 2024];
pub const DEFAULT_SPATIAL_HOLDOUT_FRAC: f64 = 0.1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn data_at<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "panonav", version, about = "Street-level panorama navigation dataset tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the navigation graph from panorama metadata and a road extract.
    BuildGraph(BuildGraphArgs),
    /// Generate tokenized train/test sentence shards from a graph.
    Gen(GenArgs),
    /// Render perspective views from an equirectangular panorama.
    Project(ProjectArgs),
    /// Print the vocabulary layout and validate token JSONL files.
    TokenizeCheck(TokenizeCheckArgs),
    /// Compute an evaluation table from JSONL records.
    Eval(EvalArgs),
    /// Roll out the graph-walking policy in the environment and write a trace.
    EnvTrace(EnvTraceArgs),
}

/// Optional pipeline settings shared by the config file and flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub bbox: Option<BBox>,
    pub max_move_m: Option<f64>,
    pub temporal_link_radius_m: Option<f64>,
    pub snap_tol_m: Option<f64>,
    pub holdout_years: Option<Vec<u16>>,
    pub spatial_holdout_frac: Option<f64>,
    pub max_paths_per_node: Option<usize>,
    pub max_samples_per_sequence: Option<usize>,
    /// A count, or "all".
    pub lookaround_perms: Option<String>,
    pub seed: Option<u64>,
    pub shard: Option<Shard>,
    pub metadata: Option<PathBuf>,
    pub osm: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub views: Option<ViewKind>,
    pub region_vocab: Option<bool>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(data_at(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: PipelineConfig) -> PipelineConfig {
        macro_rules! pick {
            ($($f:ident),*) => { PipelineConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            bbox,
            max_move_m,
            temporal_link_radius_m,
            snap_tol_m,
            holdout_years,
            spatial_holdout_frac,
            max_paths_per_node,
            max_samples_per_sequence,
            lookaround_perms,
            seed,
            shard,
            metadata,
            osm,
            images,
            output,
            views,
            region_vocab
        )
    }

    fn require(&self, field: Option<&PathBuf>, name: &str) -> Result<PathBuf, CliError> {
        field
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("missing --{name} (or \"{}\" in the config file)", name.replace('-', "_"))))
    }

    pub fn graph_config(&self) -> Result<GraphConfig, CliError> {
        let cfg = GraphConfig {
            max_move_m: self.max_move_m.unwrap_or(MAX_MOVE_M),
            temporal_link_radius_m: self.temporal_link_radius_m.unwrap_or(DEFAULT_TEMPORAL_LINK_RADIUS_M),
            snap_tol_m: self.snap_tol_m.unwrap_or(DEFAULT_SNAP_TOL_M),
            bbox: self.bbox,
        };
        if !(cfg.max_move_m > 0.0 && cfg.max_move_m <= MAX_MOVE_M) {
            return Err(CliError::Usage(format!("max_move_m must be in (0, {MAX_MOVE_M}]")));
        }
        if !(cfg.temporal_link_radius_m >= 0.0 && cfg.snap_tol_m >= 0.0) {
            return Err(CliError::Usage("radii must be non-negative".into()));
        }
        Ok(cfg)
    }

    pub fn seq_config(&self) -> Result<SeqConfig, CliError> {
        let d = SeqConfig::default();
        let lookaround_perms = match self.lookaround_perms.as_deref() {
            None => d.lookaround_perms,
            Some("all") => None,
            Some(n) => Some(
                n.parse::<usize>()
                    .ok()
                    .filter(|&k| (1..=24).contains(&k))
                    .ok_or_else(|| CliError::Usage(format!("lookaround_perms must be 1..=24 or \"all\", got {n:?}")))?,
            ),
        };
        let cfg = SeqConfig {
            max_paths_per_node: self.max_paths_per_node.unwrap_or(d.max_paths_per_node),
            max_samples_per_sequence: self.max_samples_per_sequence.unwrap_or(d.max_samples_per_sequence),
            lookaround_perms,
            seed: self.seed.unwrap_or(d.seed),
        };
        if cfg.max_paths_per_node == 0 || cfg.max_samples_per_sequence < 2 {
            return Err(CliError::Usage(SeqError::BadLimits.to_string()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    /// Hash (node, heading) into image ids; no rendering.
    Hashed,
    /// Procedural panoramas rendered per node.
    Synthetic,
    /// Panorama files under the images directory, projected and stub-tokenized.
    Images,
}

fn parse_bbox(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let [a, b, c, d] = v[..] else {
        return Err("expected min_lat,min_lon,max_lat,max_lon".into());
    };
    BBox::new(GeoPoint { lat: a, lon: b }, GeoPoint { lat: c, lon: d }).map_err(|e| e.to_string())
}

fn parse_shard(s: &str) -> Result<Shard, String> {
    let (i, n) = s.split_once('/').ok_or("expected INDEX/COUNT, e.g. 0/4")?;
    let (i, n) = (i.parse().map_err(|_| "bad shard index")?, n.parse().map_err(|_| "bad shard count")?);
    Shard::new(i, n).ok_or_else(|| format!("shard index must be < count, got {i}/{n}"))
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON config file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildGraphArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Panorama metadata, CSV or JSONL.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Road extract: OSM XML, GeoJSON or segment JSON.
    #[arg(long)]
    osm: Option<PathBuf>,
    /// Graph JSON to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// min_lat,min_lon,max_lat,max_lon
    #[arg(long, value_parser = parse_bbox)]
    bbox: Option<BBox>,
    #[arg(long)]
    max_move_m: Option<f64>,
    #[arg(long)]
    temporal_link_radius_m: Option<f64>,
    #[arg(long)]
    snap_tol_m: Option<f64>,
    /// Comma-separated capture years held out for the temporal test split.
    #[arg(long, value_delimiter = ',')]
    holdout_years: Option<Vec<u16>>,
    #[arg(long)]
    spatial_holdout_frac: Option<f64>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    graph: PathBuf,
    /// Output directory for shards and manifests.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    /// Look-around orders per node: 1..=24 or "all".
    #[arg(long)]
    lookaround_perms: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// INDEX/COUNT; origins whose id % COUNT == INDEX.
    #[arg(long, value_parser = parse_shard)]
    shard: Option<Shard>,
    #[arg(long, value_enum)]
    views: Option<ViewKind>,
    /// Panorama directory for `--views images`.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Fit the coordinate vocabulary to the graph's box instead of the default region.
    #[arg(long)]
    region_vocab: bool,
    /// Side of the rendered views for `--views images`.
    #[arg(long, default_value_t = 512)]
    view_size: u32,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Equirectangular panorama (PNG or JPEG).
    #[arg(long)]
    input: PathBuf,
    /// Heading of the panorama's horizontal center, degrees from north.
    #[arg(long, default_value_t = 0.0)]
    base_heading: f64,
    /// Absolute view headings; repeatable. Defaults to the four look-around views.
    #[arg(long = "heading")]
    headings: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pitch: f64,
    #[arg(long, default_value_t = 90.0)]
    fov: f64,
    #[arg(long, default_value_t = 512)]
    size: u32,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TokenizeCheckArgs {
    /// Vocabulary manifest to check against; the default layout otherwise.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Write the vocabulary manifest here.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    /// Token JSONL files to validate.
    #[arg(long)]
    jsonl: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Metric {
    Georef,
    Adherence,
    Perplexity,
    Magnitude,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Bucket {
    Year,
    Month,
    Distance,
    DMonth,
    DYear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Convention {
    Half,
    Full,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_enum)]
    metric: Metric,
    #[arg(long)]
    input: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Road extract, needed for adherence.
    #[arg(long)]
    osm: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Convention::Half)]
    convention: Convention,
    #[arg(long, value_enum, default_value_t = Bucket::Year)]
    bucket: Bucket,
    /// Distance bucket width in meters.
    #[arg(long, default_value_t = 5.0)]
    bucket_width: f64,
}

#[derive(Debug, Args)]
struct EnvTraceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    osm: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Start node id; random under the seed when absent.
    #[arg(long)]
    start: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SNAP_RADIUS_M)]
    snap_radius_m: f64,
    /// Trace JSONL destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write adherence records for `eval --metric adherence`.
    #[arg(long)]
    adherence_out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::BuildGraph(a) => cmd_build_graph(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Project(a) => cmd_project(a),
        Command::TokenizeCheck(a) => cmd_tokenize_check(a),
        Command::Eval(a) => cmd_eval(a),
        Command::EnvTrace(a) => cmd_env_trace(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("usage error: {m}"),
                CliError::Data(m) => eprintln!("error: {m}"),
            }
            e.exit_code()
        }
    }
}

fn file_config(common: &CommonArgs) -> Result<PipelineConfig, CliError> {
    common.config.as_deref().map_or(Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(data_at(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(data_at(path))?))
}

fn load_network(path: &Path, bbox: Option<BBox>) -> Result<RoadNetwork, CliError> {
    let cfg = ParseConfig {
        bbox,
        ..ParseConfig::default()
    };
    RoadNetwork::from_path(path, &cfg).map_err(data_at(path))
}

fn cmd_build_graph(a: BuildGraphArgs) -> Result<(), CliError> {
    let flags = PipelineConfig {
        bbox: a.bbox,
        max_move_m: a.max_move_m,
        temporal_link_radius_m: a.temporal_link_radius_m,
        snap_tol_m: a.snap_tol_m,
        holdout_years: a.holdout_years,
        spatial_holdout_frac: a.spatial_holdout_frac,
        metadata: a.metadata,
        osm: a.osm,
        output: a.out,
        ..PipelineConfig::default()
    };
    let cfg = file_config(&a.common)?.overlay(flags);
    let metadata = cfg.require(cfg.metadata.as_ref(), "metadata")?;
    let osm = cfg.require(cfg.osm.as_ref(), "osm")?;
    let out = cfg.require(cfg.output.as_ref(), "out")?;
    let gcfg = cfg.graph_config()?;
    let frac = cfg.spatial_holdout_frac.unwrap_or(DEFAULT_SPATIAL_HOLDOUT_FRAC);
    if !(frac > 0.0 && frac < 1.0) {
        return Err(CliError::Usage(format!("spatial_holdout_frac must be in (0, 1), got {frac}")));
    }
    let years = cfg.holdout_years.clone().unwrap_or(DEFAULT_HOLDOUT_YEARS.to_vec());

    let nodes = load_metadata(&metadata).map_err(data_at(&metadata))?;
    let net = load_network(&osm, gcfg.bbox)?;
    let g = build_graph(nodes, &net, &gcfg).map_err(data)?;
    let g = split_graph(g, &years, frac).map_err(data)?;
    let mut w = create(&out)?;
    w.write_all(g.to_json().as_bytes()).map_err(data_at(&out))?;
    w.flush().map_err(data_at(&out))?;
    println!("{}", serde_json::to_string(&g.stats()).expect("stats serialize"));
    for d in g.dropped() {
        eprintln!("dropped {}: {}", d.id, serde_json::to_string(&d.reason).expect("reason serializes"));
    }
    Ok(())
}

/// Per-split counts written to each shard manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub file: String,
    pub sequences: u64,
    pub tokens: u64,
    pub panoramas: u64,
    /// One per emitted sample.
    pub projected_images: u64,
    /// Distinct (panorama, heading) renders behind those samples.
    pub unique_views: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub version: u32,
    pub shard: Shard,
    pub seq: SeqConfig,
    pub vocab_total: usize,
    pub train: SplitManifest,
    pub test: SplitManifest,
}

pub fn shard_stem(shard: Shard) -> String {
    format!("{:05}-of-{:05}", shard.index, shard.count)
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let flags = PipelineConfig {
        max_paths_per_node: a.max_paths,
        max_samples_per_sequence: a.max_len,
        lookaround_perms: a.lookaround_perms,
        seed: a.seed,
        shard: a.shard,
        images: a.images,
        output: a.out,
        views: a.views,
        region_vocab: a.region_vocab.then_some(true),
        ..PipelineConfig::default()
    };
    let cfg = file_config(&a.common)?.overlay(flags);
    let out = cfg.require(cfg.output.as_ref(), "out")?;
    let seq = cfg.seq_config()?;
    let shard = cfg.shard.unwrap_or(Shard::ALL);
    if Shard::new(shard.index, shard.count).is_none() {
        return Err(CliError::Usage(format!("bad shard {}/{}", shard.index, shard.count)));
    }
    let g = NavGraph::load(&a.graph).map_err(data_at(&a.graph))?;
    let vocab = if cfg.region_vocab.unwrap_or(false) {
        let b = g.bbox();
        build_vocab(&VocabConfig::with_region((b.min.lat, b.max.lat), (b.min.lon, b.max.lon))).map_err(data)?
    } else {
        TokenVocab::default()
    };
    let views: Box<dyn ViewSource> = match cfg.views.unwrap_or(ViewKind::Hashed) {
        ViewKind::Hashed => Box::new(HashedViews),
        ViewKind::Synthetic => Box::new(SyntheticViews::default()),
        ViewKind::Images => {
            let dir = cfg.require(cfg.images.as_ref(), "images")?;
            Box::new(crate::project::ProjectedViews::new(dir, StubTokenizer, a.view_size, a.view_size))
        }
    };
    std::fs::create_dir_all(&out).map_err(data_at(&out))?;
    if shard.index == 0 {
        let p = out.join("vocab.json");
        std::fs::write(&p, vocab.manifest_json()).map_err(data_at(&p))?;
    }
    let stem = shard_stem(shard);
    let mut parts = Vec::new();
    for (name, keep) in [("train", false), ("test", true)] {
        let sub = g.induced(|s: Split| s.is_test() == keep);
        let file = format!("{name}-{stem}.jsonl");
        let path = out.join(&file);
        let mut w = create(&path)?;
        let mut tokens = 0u64;
        let counts = generate(&sub, views.as_ref(), &seq, shard, |sentence| {
            let ids = vocab.encode_sentence(&sentence).map_err(|e| SeqError::Sink(e.to_string()))?;
            tokens += ids.len() as u64;
            serde_json::to_writer(&mut w, &ids).map_err(|e| SeqError::Sink(e.to_string()))?;
            w.write_all(b"\n").map_err(|e| SeqError::Sink(e.to_string()))
        })
        .map_err(data_at(&path))?;
        w.flush().map_err(data_at(&path))?;
        parts.push(SplitManifest {
            file,
            sequences: counts.sequences,
            tokens,
            panoramas: counts.panoramas,
            projected_images: counts.samples,
            unique_views: counts.unique_views,
        });
    }
    let test = parts.pop().expect("two parts");
    let train = parts.pop().expect("two parts");
    let manifest = ShardManifest {
        version: 1,
        shard,
        seq,
        vocab_total: vocab.total,
        train,
        test,
    };
    let p = out.join(format!("manifest-{stem}.json"));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&p, &text).map_err(data_at(&p))?;
    print!("{text}");
    Ok(())
}

fn cmd_project(a: ProjectArgs) -> Result<(), CliError> {
    if !(a.fov > 0.0 && a.fov < 180.0) {
        return Err(CliError::Usage(format!("--fov must be in (0, 180), got {}", a.fov)));
    }
    if a.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let pano = Equirect::open(&a.input, a.base_heading).map_err(data)?;
    std::fs::create_dir_all(&a.out_dir).map_err(data_at(&a.out_dir))?;
    let rendered: Vec<(f64, image::RgbImage)> = if a.headings.is_empty() && a.pitch == 0.0 && a.fov == 90.0 {
        let views = project_lookaround(&pano, a.size, a.size).map_err(data)?;
        LOOKAROUND_OFFSETS.iter().map(|o| a.base_heading + o).zip(views).collect()
    } else {
        let headings = if a.headings.is_empty() {
            LOOKAROUND_OFFSETS.iter().map(|o| a.base_heading + o).collect()
        } else {
            a.headings.clone()
        };
        headings
            .into_iter()
            .map(|h| {
                let spec = ViewSpec {
                    heading: h,
                    pitch: a.pitch,
                    fov: a.fov,
                    width: a.size,
                    height: a.size,
                };
                project_view(&pano, &spec).map(|v| (h, v)).map_err(data)
            })
            .collect::<Result<_, _>>()?
    };
    for (h, view) in rendered {
        let p = a.out_dir.join(format!("view_{:05.1}.png", crate::geo::normalize_deg(h)));
        view.save(&p).map_err(data_at(&p))?;
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_tokenize_check(a: TokenizeCheckArgs) -> Result<(), CliError> {
    let vocab = match &a.vocab {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(data_at(p))?;
            serde_json::from_str::<TokenVocab>(&text).map_err(data_at(p))?
        }
        None => TokenVocab::default(),
    };
    println!("{:<12} {:>7} {:>6}", "modality", "offset", "size");
    for m in Modality::ALL {
        let l = vocab.layout(m);
        println!("{:<12} {:>7} {:>6}", m.to_string(), l.offset, l.size);
    }
    println!("{:<12} {:>7} {:>6}", "special", vocab.special_offset, vocab.special_count);
    println!("total {}", vocab.total);
    if let Some(p) = &a.manifest_out {
        std::fs::write(p, vocab.manifest_json()).map_err(data_at(p))?;
    }
    for p in &a.jsonl {
        let f = File::open(p).map_err(data_at(p))?;
        let lines = read_jsonl(BufReader::new(f), &vocab).map_err(data_at(p))?;
        let mut samples = 0;
        for (i, ids) in lines.iter().enumerate() {
            samples += vocab
                .decode_sentence(ids)
                .map_err(|e| CliError::Data(format!("{}: line {}: {e}", p.display(), i + 1)))?
                .len();
        }
        println!("{}: {} sentences, {} samples ok", p.display(), lines.len(), samples);
    }
    Ok(())
}

fn read_input<T: serde::de::DeserializeOwned + eval::Validate>(path: &Path) -> Result<Vec<T>, CliError> {
    let f = File::open(path).map_err(data_at(path))?;
    eval::read_records(BufReader::new(f)).map_err(data_at(path))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let mut csv = Vec::new();
    let summary = match a.metric {
        Metric::Georef => {
            let recs: Vec<GeorefRecord> = read_input(&a.input)?;
            let t = a.thresholds.clone().unwrap_or_else(eval::default_error_thresholds);
            let rows = eval::error_cdf(&recs, &t).map_err(data)?;
            eval::write_csv(&rows, &mut csv).map_err(data)?;
            let at10 = eval::error_cdf(&recs, &[10.0]).map_err(data)?[0].fraction;
            format!("{} predictions; {:.1}% within 10 m", recs.len(), 100.0 * at10)
        }
        Metric::Magnitude => {
            let recs: Vec<MagnitudeRecord> = read_input(&a.input)?;
            let d: Vec<f64> = recs.iter().map(|r| r.distance).collect();
            let t = a.thresholds.clone().unwrap_or_else(eval::default_magnitude_thresholds);
            eval::write_csv(&eval::action_magnitude_cdf(&d, &t).map_err(data)?, &mut csv).map_err(data)?;
            let moving = d.iter().filter(|&&x| x > 0.0).count();
            format!("{} actions; {} nonzero", d.len(), moving)
        }
        Metric::Adherence => {
            let osm = a
                .osm
                .as_ref()
                .ok_or_else(|| CliError::Usage("--osm is required for adherence".into()))?;
            let recs: Vec<AdherenceRecord> = read_input(&a.input)?;
            let net = load_network(osm, None)?;
            let widths = a.widths.clone().unwrap_or(eval::DEFAULT_LANE_WIDTHS_M.to_vec());
            let conv = match a.convention {
                Convention::Half => WidthConvention::HalfWidth,
                Convention::Full => WidthConvention::FullWidth,
            };
            let rows = eval::road_adherence(&recs, &net, &widths, conv).map_err(data)?;
            eval::write_csv(&rows, &mut csv).map_err(data)?;
            rows.iter()
                .map(|r| format!("{:>5.1} m: {:6.2}%", r.width, r.all_pct))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Metric::Perplexity => {
            let recs: Vec<NllRecord> = read_input(&a.input)?;
            let key = match a.bucket {
                Bucket::Year => BucketKey::Year,
                Bucket::Month => BucketKey::Month,
                Bucket::Distance => BucketKey::Distance { width: a.bucket_width },
                Bucket::DMonth => BucketKey::DeltaMonth,
                Bucket::DYear => BucketKey::DeltaYear,
            };
            let rows = eval::perplexity_by_bucket(&recs, key).map_err(data)?;
            eval::write_csv(&rows, &mut csv).map_err(data)?;
            format!("{} records in {} buckets", recs.len(), rows.len())
        }
    };
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(&csv).and_then(|_| w.flush()).map_err(data_at(p))?;
            println!("{summary}");
        }
        None => {
            std::io::stdout().write_all(&csv).map_err(data)?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn cmd_env_trace(a: EnvTraceArgs) -> Result<(), CliError> {
    let flags = PipelineConfig {
        osm: a.osm,
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let cfg = file_config(&a.common)?.overlay(flags);
    let osm = cfg.require(cfg.osm.as_ref(), "osm")?;
    if !(a.snap_radius_m > 0.0) {
        return Err(CliError::Usage("--snap-radius-m must be positive".into()));
    }
    let g = NavGraph::load(&a.graph).map_err(data_at(&a.graph))?;
    let net = load_network(&osm, None)?;
    let env = Env::new(
        &g,
        &net,
        EnvConfig {
            snap_radius_m: a.snap_radius_m,
        },
    );
    let start = a.start.map_or(Start::Random, |id| Start::Node(NodeId(id)));
    let mut s = env.reset(start, cfg.seed.unwrap_or(0)).map_err(data)?;
    let trace = rollout(&env, &mut s, a.steps);
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            write_trace(&trace, &mut w).map_err(data_at(p))?;
            w.flush().map_err(data_at(p))?;
        }
        None => write_trace(&trace, &mut std::io::stdout().lock()).map_err(data)?,
    }
    if let Some(p) = &a.adherence_out {
        let mut w = create(p)?;
        for r in &trace {
            let rec = AdherenceRecord {
                resulting_state: r.state.pos,
                action_distance: r.result.realized_action.distance,
            };
            serde_json::to_writer(&mut w, &rec).map_err(data)?;
            w.write_all(b"\n").map_err(data_at(p))?;
        }
        w.flush().map_err(data_at(p))?;
    }
    let valid = trace.iter().filter(|r| r.result.valid).count();
    eprintln!("{} steps, {} valid", trace.len(), valid);
    Ok(())
}
