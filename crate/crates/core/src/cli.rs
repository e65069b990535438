//! Batch driver behind the `patchcut` binary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_feature_grid, FILE_EXTENSION};
use crate::graph::{EdgeMode, GraphConfig};
use crate::metrics::{
    saliency_scores, topk_loc, EvalRecord, LocalizationScores, PixelBox, SaliencyAccumulator,
    DEFAULT_BETA_SQUARED,
};
use crate::partition::{discover_from_solution, solve_grid, ComponentRule, DiscoveryConfig};
use crate::refine::{refine, upsample_mask, upsample_scores, RefineConfig};
use crate::spectral::EigenMethod;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NO_INPUT: i32 = 2;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "patchcut", version, about = "Normalized-cut object discovery over patch features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect one object box per feature file (JSON lines).
    Detect(DetectArgs),
    /// Write one PNG saliency mask per feature file.
    Segment(SegmentArgs),
    /// Score detection records against ground-truth boxes.
    EvalDetect(EvalDetectArgs),
    /// Score PNG masks against ground-truth masks.
    EvalSaliency(EvalSaliencyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EdgeModeArg {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ComponentRuleArg {
    Vmax,
    Largest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Auto,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefineTargetArg {
    /// The binary upsampled patch mask.
    Mask,
    /// Normalized |y1| replicated per patch.
    Scores,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// A `.tkcf` file or a directory of them.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = EdgeModeArg::Binary)]
    pub edge_mode: EdgeModeArg,
    #[arg(long, value_enum, default_value_t = ComponentRuleArg::Vmax)]
    pub component_rule: ComponentRuleArg,
    /// Drop self-loops from the token graph.
    #[arg(long)]
    pub no_self_loops: bool,
    #[arg(long, value_enum, default_value_t = SolverArg::Auto)]
    pub solver: SolverArg,
    /// Images processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl PipelineArgs {
    pub fn discovery_config(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            graph: GraphConfig {
                tau: self.tau,
                eps: self.eps,
                edge_mode: match self.edge_mode {
                    EdgeModeArg::Binary => EdgeMode::Binary,
                    EdgeModeArg::Continuous => EdgeMode::Continuous,
                },
                include_self_loops: !self.no_self_loops,
            },
            component_rule: match self.component_rule {
                ComponentRuleArg::Vmax => ComponentRule::Vmax,
                ComponentRuleArg::Largest => ComponentRule::Largest,
            },
            eigen_method: match self.solver {
                SolverArg::Auto => EigenMethod::Auto,
                SolverArg::Dense => EigenMethod::Dense,
                SolverArg::Lanczos => EigenMethod::Lanczos,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output JSON-lines file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output directory for `<image>.png` masks.
    #[arg(long)]
    pub out: PathBuf,
    /// Refine masks with the bilateral solver (needs --images).
    #[arg(long)]
    pub refine: bool,
    /// Directory of images matching the feature file stems.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RefineTargetArg::Mask)]
    pub refine_target: RefineTargetArg,
    #[arg(long, default_value_t = 16.0)]
    pub sigma_spatial: f64,
    #[arg(long, default_value_t = 16.0)]
    pub sigma_luma: f64,
    #[arg(long, default_value_t = 8.0)]
    pub sigma_chroma: f64,
    #[arg(long, default_value_t = 30.0)]
    pub smoothing_weight: f64,
    #[arg(long, default_value_t = 25)]
    pub refine_iterations: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvalDetectArgs {
    /// Detection records (JSON lines) as written by `detect`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth records (JSON lines).
    #[arg(long)]
    pub gt: PathBuf,
    /// Also compute Top-1 Loc / Top-1 Cls; every record then needs classes.
    #[arg(long)]
    pub top1: bool,
    /// Report file (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalSaliencyArgs {
    /// Directory of predicted 8-bit masks.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of ground-truth 8-bit masks.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BETA_SQUARED)]
    pub beta_squared: f64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Report file (JSON); printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// One line of `detect` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    #[serde(default)]
    pub lambda1: f64,
    #[serde(default)]
    pub degenerate: bool,
    /// Resize factor `(x, y)` from original to processed image; original coordinates are `box / scale`.
    #[serde(default = "unit_scale")]
    pub scale: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

fn unit_scale() -> [f64; 2] {
    [1.0, 1.0]
}

/// One line of detection ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image: String,
    pub boxes: Vec<PixelBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

/// Extractor manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub scale_x: f64,
    pub scale_y: f64,
    pub orig_w: usize,
    pub orig_h: usize,
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    match cli.command {
        Command::Detect(args) => cmd_detect(&args),
        Command::Segment(args) => cmd_segment(&args),
        Command::EvalDetect(args) => cmd_eval_detect(&args),
        Command::EvalSaliency(args) => cmd_eval_saliency(&args),
    }
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn files_with_extensions(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let matches = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if matches && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Feature files under `path`, sorted by name.
pub fn collect_feature_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        files_with_extensions(path, &[FILE_EXTENSION])
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::Input(format!("{} does not exist", path.display())))
    }
}

/// Reads `manifest.json` next to the features: a JSON array or JSON lines.
pub fn load_manifest(features: &Path) -> Result<BTreeMap<String, ManifestEntry>> {
    let dir = if features.is_dir() {
        features.to_path_buf()
    } else {
        features.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let path = dir.join(MANIFEST_NAME);
    if !path.is_file() {
        return Ok(BTreeMap::new());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let entries: Vec<ManifestEntry> = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?,
    };
    Ok(entries
        .into_iter()
        .map(|e| (image_id(Path::new(&e.image)), e))
        .collect())
}

fn thread_pool(jobs: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool")
}

fn report_timing(label: &str, timings: &[f64]) {
    if timings.is_empty() {
        return;
    }
    let mean = timings.iter().sum::<f64>() / timings.len() as f64;
    info!(
        "{label}: {} images, mean {:.1} ms per image",
        timings.len(),
        mean
    );
}

/// Inputs for a pipeline command, or the exit code when there are none.
fn pipeline_inputs(args: &PipelineArgs) -> std::result::Result<Vec<PathBuf>, i32> {
    if let Err(e) = args.discovery_config().graph.validate() {
        error!("{e}");
        return Err(EXIT_NO_INPUT);
    }
    match collect_feature_files(&args.features) {
        Ok(files) if !files.is_empty() => Ok(files),
        Ok(_) => {
            error!("no .{FILE_EXTENSION} files under {}", args.features.display());
            Err(EXIT_NO_INPUT)
        }
        Err(e) => {
            error!("{e}");
            Err(EXIT_NO_INPUT)
        }
    }
}

fn detect_one(path: &Path, cfg: &DiscoveryConfig, manifest: &BTreeMap<String, ManifestEntry>) -> Result<DetectionRecord> {
    let id = image_id(path);
    let grid = read_feature_grid(path)?;
    let (graph, solution) = solve_grid(&grid, cfg)?;
    let found = discover_from_solution(&grid, &graph, &solution, cfg)?;
    if found.degenerate {
        warn!("{id}: degenerate split, reporting the full image");
    }
    let scale = manifest
        .get(&id)
        .map(|m| [m.scale_x, m.scale_y])
        .unwrap_or_else(unit_scale);
    Ok(DetectionRecord {
        image: id,
        bbox: found.pixel_box,
        lambda1: found.lambda1,
        degenerate: found.degenerate,
        scale,
        class: None,
    })
}

pub fn cmd_detect(args: &DetectArgs) -> i32 {
    let files = match pipeline_inputs(&args.pipeline) {
        Ok(files) => files,
        Err(code) => return code,
    };
    let manifest = match load_manifest(&args.pipeline.features) {
        Ok(m) => m,
        Err(e) => {
            warn!("ignoring manifest: {e}");
            BTreeMap::new()
        }
    };
    let cfg = args.pipeline.discovery_config();
    let results: Vec<(PathBuf, Result<DetectionRecord>, f64)> = thread_pool(args.pipeline.jobs).install(|| {
        files
            .par_iter()
            .map(|path| {
                let start = Instant::now();
                let res = detect_one(path, &cfg, &manifest);
                (path.clone(), res, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });

    let mut lines = String::new();
    let mut timings = Vec::new();
    for (path, res, ms) in results {
        match res {
            Ok(rec) => {
                lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                lines.push('\n');
                timings.push(ms);
            }
            Err(e) => error!("{}: {e}", path.display()),
        }
    }
    report_timing("detect", &timings);
    if timings.is_empty() {
        error!("no image could be processed");
        return EXIT_NO_INPUT;
    }
    let written = match &args.out {
        Some(out) => fs::write(out, &lines).map_err(|e| Error::io(out, e)),
        None => io::stdout()
            .lock()
            .write_all(lines.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            EXIT_FAILURE
        }
    }
}

fn find_image(dir: &Path, id: &str) -> Result<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .flat_map(|ext| [ext.to_string(), ext.to_uppercase()])
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Input(format!("no image for {id} in {}", dir.display())))
}

fn segment_one(path: &Path, args: &SegmentArgs, cfg: &DiscoveryConfig, refine_cfg: &RefineConfig) -> Result<PathBuf> {
    let id = image_id(path);
    let grid = read_feature_grid(path)?;
    let (graph, solution) = solve_grid(&grid, cfg)?;
    let found = discover_from_solution(&grid, &graph, &solution, cfg)?;
    let dims = (grid.image_height, grid.image_width);
    let mut mask = upsample_mask(&found.patch_mask, grid.shape(), grid.patch_size, dims)?;

    if args.refine {
        let dir = args.images.as_deref().expect("checked before dispatch");
        let image_path = find_image(dir, &id)?;
        let image = image::open(&image_path)
            .map_err(|e| Error::Input(format!("{}: {e}", image_path.display())))?
            .to_rgb8();
        if (image.height() as usize, image.width() as usize) != dims {
            return Err(Error::Input(format!(
                "{}: image is {}x{}, features describe {}x{}",
                image_path.display(),
                image.width(),
                image.height(),
                dims.1,
                dims.0
            )));
        }
        let target = match args.refine_target {
            RefineTargetArg::Mask => mask,
            RefineTargetArg::Scores => upsample_scores(&solution.y1, grid.shape(), grid.patch_size, dims)?,
        };
        mask = refine(&target, &image, refine_cfg)?;
    }

    let out = args.out.join(format!("{id}.png"));
    mask.to_gray_image()
        .save(&out)
        .map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
    Ok(out)
}

pub fn cmd_segment(args: &SegmentArgs) -> i32 {
    if args.refine && args.images.as_deref().is_none_or(|p| !p.is_dir()) {
        error!("--refine needs --images pointing at a directory");
        return EXIT_NO_INPUT;
    }
    let refine_cfg = RefineConfig {
        sigma_spatial: args.sigma_spatial,
        sigma_luma: args.sigma_luma,
        sigma_chroma: args.sigma_chroma,
        smoothing_weight: args.smoothing_weight,
        iterations: args.refine_iterations,
    };
    if let Err(e) = refine_cfg.validate() {
        error!("{e}");
        return EXIT_NO_INPUT;
    }
    let files = match pipeline_inputs(&args.pipeline) {
        Ok(files) => files,
        Err(code) => return code,
    };
    if let Err(e) = fs::create_dir_all(&args.out) {
        error!("{}: {e}", args.out.display());
        return EXIT_FAILURE;
    }
    let cfg = args.pipeline.discovery_config();
    let results: Vec<(PathBuf, Result<PathBuf>, f64)> = thread_pool(args.pipeline.jobs).install(|| {
        files
            .par_iter()
            .map(|path| {
                let start = Instant::now();
                let res = segment_one(path, args, &cfg, &refine_cfg);
                (path.clone(), res, start.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });
    let mut timings = Vec::new();
    for (path, res, ms) in results {
        match res {
            Ok(_) => timings.push(ms),
            Err(e) => error!("{}: {e}", path.display()),
        }
    }
    report_timing("segment", &timings);
    if timings.is_empty() {
        error!("no image could be processed");
        return EXIT_NO_INPUT;
    }
    EXIT_OK
}

fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
struct DetectionRow {
    image: String,
    iou: f64,
    correct: bool,
}

#[derive(Debug, Clone, Serialize)]
struct DetectionReport {
    images: usize,
    corloc: f64,
    correct: usize,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    localization: Option<LocalizationScores>,
    unmatched: Vec<String>,
    per_image: Vec<DetectionRow>,
}

fn emit_report<T: Serialize>(report: &T, out: Option<&Path>) -> i32 {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let res = match out {
        Some(path) => fs::write(path, format!("{json}\n")).map_err(|e| Error::io(path, e)),
        None => writeln!(io::stdout().lock(), "{json}").map_err(|e| Error::io("<stdout>", e)),
    };
    match res {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            EXIT_FAILURE
        }
    }
}

/// Pairs keyed items, returning matched pairs and the sorted list of unmatched keys.
fn match_by_id<A, B>(left: BTreeMap<String, A>, mut right: BTreeMap<String, B>) -> (Vec<(String, A, B)>, Vec<String>) {
    let mut matched = Vec::new();
    let mut unmatched = BTreeSet::new();
    for (id, a) in left {
        match right.remove(&id) {
            Some(b) => matched.push((id, a, b)),
            None => {
                unmatched.insert(id);
            }
        }
    }
    unmatched.extend(right.into_keys());
    (matched, unmatched.into_iter().collect())
}

pub fn cmd_eval_detect(args: &EvalDetectArgs) -> i32 {
    let preds: Vec<DetectionRecord> = match read_json_lines(&args.pred) {
        Ok(v) => v,
        Err(e) => {
            error!("{e}");
            return EXIT_NO_INPUT;
        }
    };
    let gts: Vec<GroundTruthRecord> = match read_json_lines(&args.gt) {
        Ok(v) => v,
        Err(e) => {
            error!("{e}");
            return EXIT_NO_INPUT;
        }
    };
    let preds: BTreeMap<_, _> = preds.into_iter().map(|p| (p.image.clone(), p)).collect();
    let gts: BTreeMap<_, _> = gts.into_iter().map(|g| (g.image.clone(), g)).collect();
    let (matched, unmatched) = match_by_id(preds, gts);
    if !unmatched.is_empty() {
        warn!("{} image ids without a counterpart, excluded: {}", unmatched.len(), unmatched.join(", "));
    }
    if matched.is_empty() {
        error!("no prediction matches a ground-truth image id");
        return EXIT_NO_INPUT;
    }

    let records: Vec<EvalRecord> = matched
        .into_iter()
        .map(|(image, p, g)| EvalRecord {
            image,
            predicted_box: Some(p.bbox),
            gt_boxes: g.boxes,
            predicted_class: p.class,
            true_class: g.class,
        })
        .collect();

    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        match r.best_iou() {
            Ok(iou) => rows.push(DetectionRow {
                image: r.image.clone(),
                iou,
                correct: iou > crate::metrics::LOCALIZATION_IOU,
            }),
            Err(e) => {
                error!("{e}");
                return EXIT_NO_INPUT;
            }
        }
    }
    let correct = rows.iter().filter(|r| r.correct).count();
    let corloc = correct as f64 / rows.len() as f64;

    let localization = if args.top1 {
        match topk_loc(&records) {
            Ok(s) => Some(s),
            Err(e) => {
                error!("{e}");
                return EXIT_NO_INPUT;
            }
        }
    } else {
        None
    };

    println!("CorLoc: {:.4} ({correct}/{})", corloc, rows.len());
    if let Some(s) = &localization {
        println!(
            "GT Loc: {:.4}  Top-1 Loc: {:.4}  Top-1 Cls: {:.4}",
            s.gt_loc, s.top1_loc, s.top1_cls
        );
    }
    let report = DetectionReport {
        images: rows.len(),
        corloc,
        correct,
        localization,
        unmatched,
        per_image: rows,
    };
    match &args.out {
        Some(out) => emit_report(&report, Some(out)),
        None => emit_report(&report, None),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SaliencyRow {
    image: String,
    max_f_beta: f64,
    iou: f64,
    accuracy: f64,
    empty_gt: bool,
}

#[derive(Debug, Clone, Serialize)]
struct SaliencyReport {
    images: usize,
    beta_squared: f64,
    max_f_beta: f64,
    iou: f64,
    accuracy: f64,
    empty_gt: usize,
    unmatched: Vec<String>,
    failed: Vec<String>,
    per_image: Vec<SaliencyRow>,
}

fn load_gray(path: &Path) -> Result<image::GrayImage> {
    Ok(image::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .to_luma8())
}

fn score_mask_pair(pred: &Path, gt: &Path, beta_squared: f64) -> Result<crate::metrics::SaliencyScores> {
    let p = load_gray(pred)?;
    let g = load_gray(gt)?;
    if p.dimensions() != g.dimensions() {
        return Err(Error::Input(format!(
            "prediction is {:?}, ground truth {:?}",
            p.dimensions(),
            g.dimensions()
        )));
    }
    let conf: Vec<f64> = p.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    let truth: Vec<bool> = g.as_raw().iter().map(|&v| v > 127).collect();
    saliency_scores(&conf, &truth, beta_squared)
}

pub fn cmd_eval_saliency(args: &EvalSaliencyArgs) -> i32 {
    if !(args.beta_squared > 0.0 && args.beta_squared.is_finite()) {
        error!("--beta-squared must be positive");
        return EXIT_NO_INPUT;
    }
    let listing = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(files_with_extensions(dir, &IMAGE_EXTENSIONS)?
            .into_iter()
            .map(|p| (image_id(&p), p))
            .collect())
    };
    let (preds, gts) = match (listing(&args.pred), listing(&args.gt)) {
        (Ok(p), Ok(g)) => (p, g),
        (Err(e), _) | (_, Err(e)) => {
            error!("{e}");
            return EXIT_NO_INPUT;
        }
    };
    let (matched, unmatched) = match_by_id(preds, gts);
    if !unmatched.is_empty() {
        warn!("{} image ids without a counterpart, excluded: {}", unmatched.len(), unmatched.join(", "));
    }
    if matched.is_empty() {
        error!("no predicted mask matches a ground-truth mask");
        return EXIT_NO_INPUT;
    }

    let scored: Vec<(String, Result<crate::metrics::SaliencyScores>)> = thread_pool(args.jobs).install(|| {
        matched
            .par_iter()
            .map(|(id, p, g)| (id.clone(), score_mask_pair(p, g, args.beta_squared)))
            .collect()
    });
    let mut acc = SaliencyAccumulator::default();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (id, res) in scored {
        match res {
            Ok(s) => {
                if s.empty_gt {
                    warn!("{id}: ground truth has no foreground");
                }
                acc.push(&s);
                rows.push(SaliencyRow {
                    image: id,
                    max_f_beta: s.max_f_beta,
                    iou: s.iou,
                    accuracy: s.accuracy,
                    empty_gt: s.empty_gt,
                });
            }
            Err(e) => {
                warn!("{id}: {e}; excluded");
                failed.push(id);
            }
        }
    }
    if rows.is_empty() {
        error!("no mask pair could be scored");
        return EXIT_NO_INPUT;
    }
    let report = SaliencyReport {
        images: rows.len(),
        beta_squared: args.beta_squared,
        max_f_beta: acc.max_f_beta(args.beta_squared),
        iou: acc.mean_iou(),
        accuracy: acc.mean_accuracy(),
        empty_gt: acc.empty_gt,
        unmatched,
        failed,
        per_image: rows,
    };
    println!(
        "maxFβ: {:.4}  IoU: {:.4}  Acc: {:.4}  ({} images)",
        report.max_f_beta, report.iou, report.accuracy, report.images
    );
    emit_report(&report, args.out.as_deref())
}

/// Writes detection records as JSON lines.
pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Input(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
