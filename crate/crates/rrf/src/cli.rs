//! `rrf` subcommands. Every path argument is relative to `--root`; the
//! arguments of a run, minus `--root` and `--jobs`, are echoed into each
//! artifact it writes.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rrf_core::fusion::DEFAULT_REG;
use rrf_core::metric::{region_similarity, rrfnet_similarity_decomposed, Side, Terms};
use rrf_core::protocol::{reports_from_scores, ScoreRule, DEFAULT_FOLDS};
use rrf_core::toyembed::{generate_benchmark, BenchmarkConfig, NoiseProfile, ToyEmbedder, DEFAULT_DIM};
use rrf_core::{
    fit_fusion, shape_plan, Backbone, FusionModel, PairList, PatchLayout, ScoreCombiner,
};
use serde::Serialize;
use serde_json::json;

use crate::bench;
use crate::error::{Error, Result};
use crate::export::{contributions_csv, export_heatmap, HeatmapFormat};
use crate::manifest::{load_store, read_json, write_json, LayoutSpec, LoadedStore};
use crate::models::{
    fingerprint_hex, parse_fingerprint, parse_method, CombinerRecord, FusionRecord, ModelFile,
    ReportFile, ReportRecord,
};
use crate::pairs::load_pairs;
use crate::score::{auc, local_features, score_pairs, with_jobs};

pub const SEED_ENV: &str = "RRF_SEED";

#[derive(Debug, Parser)]
#[command(name = "rrf", version, about = "Patch-decomposed face similarity toolkit")]
pub struct Cli {
    /// Directory every path argument is relative to.
    #[arg(long, global = true, default_value = ".")]
    pub root: PathBuf,
    /// Worker threads for pair scoring and embedding (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a patch layout with its mirror map and shape plan.
    Layout(LayoutCmd),
    /// Write a synthetic benchmark directory with toy embeddings.
    Generate(GenerateCmd),
    /// Embed a benchmark's images with the toy embedder.
    Embed(EmbedCmd),
    /// Explain the similarity of one image pair.
    Sim(SimCmd),
    /// Fit per-position fusion weights on training pairs.
    Fit(FitCmd),
    /// Run the cross-validated verification protocol.
    Verify(VerifyCmd),
    /// Verify several configurations and their score combination.
    Combine(CombineCmd),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LayoutArgs {
    /// Image width.
    #[arg(long = "width", default_value_t = 112)]
    pub image_width: u32,
    /// Image height.
    #[arg(long = "height", default_value_t = 112)]
    pub image_height: u32,
    /// Patch width.
    #[arg(long = "w", default_value_t = 28)]
    pub patch_width: u32,
    /// Patch height (defaults to the width).
    #[arg(long = "h")]
    pub patch_height: Option<u32>,
    /// Grid stride (defaults to half the patch width).
    #[arg(long)]
    pub stride: Option<u32>,
    /// Drop patches touching a 28x28 image corner.
    #[arg(long)]
    pub exclude_corners: bool,
}

impl LayoutArgs {
    pub fn build(&self) -> Result<PatchLayout> {
        let ph = self.patch_height.unwrap_or(self.patch_width);
        let stride = self.stride.unwrap_or((self.patch_width / 2).max(1));
        Ok(PatchLayout::grid(
            self.image_width,
            self.image_height,
            self.patch_width,
            ph,
            stride,
            self.exclude_corners,
        )?)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneArg {
    Rrfnet,
    Resnet,
}

#[derive(Debug, Args, Serialize)]
pub struct LayoutCmd {
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, value_enum, default_value_t = BackboneArg::Rrfnet)]
    pub backbone: BackboneArg,
    /// Batch size for the shape plan.
    #[arg(long, default_value_t = 1)]
    pub batch: u32,
    #[arg(long, default_value_t = 3)]
    pub channels: u32,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseArg {
    Uniform,
    Heterogeneous,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateCmd {
    /// Output benchmark directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = 10)]
    pub identities: usize,
    #[arg(long, default_value_t = 4)]
    pub images_per_identity: usize,
    #[arg(long, default_value_t = 10)]
    pub train_identities: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: u32,
    /// Side of the square cells carrying identity signal.
    #[arg(long, default_value_t = 4)]
    pub cell: u32,
    /// Within-identity noise scale.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_w: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Uniform)]
    pub noise: NoiseArg,
    /// Heterogeneous noise: multipliers span [1/spread, spread].
    #[arg(long, default_value_t = 4.0)]
    pub noise_spread: f64,
    /// Heterogeneous noise: region side in pixels.
    #[arg(long, default_value_t = 28)]
    pub noise_region: u32,
    /// Largest random shift in pixels.
    #[arg(long, default_value_t = 0)]
    pub max_shift: u32,
    /// Fraction of layout patches zeroed per image.
    #[arg(long, default_value_t = 0.0)]
    pub mask_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: u32,
    /// Embedding dimension.
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    /// Merge embeddings of the mirrored image.
    #[arg(long)]
    pub flip: bool,
    /// Name of the embedding directory written alongside the images.
    #[arg(long, default_value = "base")]
    pub embed_name: String,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedCmd {
    /// Benchmark directory.
    #[arg(long)]
    pub bench: PathBuf,
    /// Embedding directory name under `embeddings/`.
    #[arg(long)]
    pub name: String,
    #[command(flatten)]
    pub layout: LayoutArgs,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long)]
    pub flip: bool,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Rrfnet,
    #[value(name = "region_based")]
    RegionBased,
}

#[derive(Debug, Args, Serialize)]
pub struct SimCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    /// First image id.
    #[arg(long)]
    pub a: String,
    /// Second image id.
    #[arg(long)]
    pub b: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Rrfnet)]
    pub mode: ModeArg,
    /// Fusion model for region_based mode (uniform weights without one).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Factor applied to the exported contribution values.
    #[arg(long, default_value_t = 1.0)]
    pub display_scale: f64,
    /// Write heatmaps as `<prefix>_a.csv`, `<prefix>_a.pgm`, ... .
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    /// Write the breakdown JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// L2 penalty on the weights.
    #[arg(long, default_value_t = DEFAULT_REG)]
    pub reg: f64,
    /// Share one weight between mirrored positions.
    #[arg(long)]
    pub tie_mirror: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Rrfnet)]
    pub mode: ModeArg,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Add the ROC area over all pairs to the report.
    #[arg(long)]
    pub auc: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodArg {
    MeanZscore,
    LearnedLogistic,
}

impl MethodArg {
    fn name(self) -> &'static str {
        match self {
            MethodArg::MeanZscore => "mean_zscore",
            MethodArg::LearnedLogistic => "learned_logistic",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CombineCmd {
    /// `NAME=MANIFEST` (rrfnet score) or `NAME=MANIFEST,MODEL` (region-based
    /// score). Repeat for each configuration.
    #[arg(long = "source", required = true, num_args = 1)]
    pub sources: Vec<String>,
    /// Evaluation pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Pairs used to fit the normalization (and weights).
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::MeanZscore)]
    pub method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_REG)]
    pub reg: f64,
    #[arg(long)]
    pub auc: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

/// Result of one invocation, ready for the process boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

/// Single-line JSON error for stderr.
pub fn error_line(kind: &str, message: &str) -> String {
    let message = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>();
    json!({ "error": { "kind": kind, "message": message.join(" ") } }).to_string()
}

pub fn run_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => Outcome {
                    code: 0,
                    stdout: e.render().to_string(),
                    stderr: String::new(),
                },
                _ => Outcome {
                    code: 1,
                    stdout: String::new(),
                    stderr: error_line("usage", &e.render().to_string()),
                },
            };
        }
    };
    match run(&cli) {
        Ok(stdout) => Outcome {
            code: 0,
            stdout,
            stderr: String::new(),
        },
        Err(e) => Outcome {
            code: e.exit_code(),
            stdout: String::new(),
            stderr: error_line(e.kind(), &e.to_string()),
        },
    }
}

fn echo(command: &str, args: &impl Serialize) -> serde_json::Value {
    json!({
        "command": command,
        "args": args,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn lines(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| format!("{}\n", p.display())).collect()
}

fn json_text(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn run(cli: &Cli) -> Result<String> {
    let ctx = Ctx {
        root: &cli.root,
        jobs: cli.jobs,
    };
    match &cli.command {
        Command::Layout(c) => cmd_layout(&ctx, c),
        Command::Generate(c) => cmd_generate(&ctx, c),
        Command::Embed(c) => cmd_embed(&ctx, c),
        Command::Sim(c) => cmd_sim(&ctx, c),
        Command::Fit(c) => cmd_fit(&ctx, c),
        Command::Verify(c) => cmd_verify(&ctx, c),
        Command::Combine(c) => cmd_combine(&ctx, c),
    }
}

struct Ctx<'a> {
    root: &'a Path,
    jobs: usize,
}

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    fn parallel<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        with_jobs(self.jobs, f)?
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn cmd_layout(ctx: &Ctx, c: &LayoutCmd) -> Result<String> {
    let layout = c.layout.build()?;
    let mirror = layout.mirror_map()?;
    let backbone = match c.backbone {
        BackboneArg::Rrfnet => Backbone::Rrfnet,
        BackboneArg::Resnet => Backbone::Resnet,
    };
    let plan = shape_plan(
        backbone,
        c.batch,
        (layout.image_width(), layout.image_height()),
        c.channels,
        (layout.patch_width(), layout.patch_height()),
        layout.len() as u32,
    )?;
    let shape = |m: rrf_core::geometry::MapShape| [m.count, m.width, m.height, m.channels];
    let doc = json!({
        "config": echo("layout", c),
        "layout": LayoutSpec::from(&layout),
        "patches": layout.len(),
        "fingerprint": fingerprint_hex(layout.fingerprint()),
        "mirror": {
            "pairs": mirror.pairs(),
            "classes": mirror.classes(),
            "class_count": mirror.class_count(),
        },
        "shape_plan": {
            "backbone": c.backbone,
            "input": shape(plan.input),
            "patches": plan.patches.map(shape),
            "blocks": plan.blocks.map(shape),
            "feature": [plan.feature.0, plan.feature.1],
            "mean": plan.mean.map(|(b, d)| [b, d]),
        },
    });
    match &c.out {
        Some(out) => {
            let path = ctx.path(out);
            ensure_parent(&path)?;
            write_json(&doc, &path)?;
            Ok(lines(&[path]))
        }
        None => Ok(json_text(&doc)),
    }
}

fn cmd_generate(ctx: &Ctx, c: &GenerateCmd) -> Result<String> {
    let layout = c.layout.build()?;
    let config = BenchmarkConfig {
        identities: c.identities,
        images_per_identity: c.images_per_identity,
        train_identities: c.train_identities,
        channels: c.channels,
        cell: c.cell,
        sigma_w: c.sigma_w,
        noise: match c.noise {
            NoiseArg::Uniform => NoiseProfile::Uniform,
            NoiseArg::Heterogeneous => NoiseProfile::Heterogeneous {
                spread: c.noise_spread,
                region: c.noise_region,
            },
        },
        max_shift: c.max_shift,
        mask_ratio: c.mask_ratio,
        folds: c.folds,
        seed: c.seed,
    };
    let embedder = ToyEmbedder::for_layout(c.seed, c.dim, &layout, c.channels)?;
    let dir = ctx.path(&c.out);
    let config_echo = echo("generate", c);
    let manifest = ctx.parallel(|| {
        let bench = generate_benchmark(&config, &layout)?;
        bench::write_benchmark(&dir, &bench, &config, &layout, &config_echo)?;
        bench::embed_images(
            &bench.images,
            &layout,
            &embedder,
            c.flip,
            &bench::embeddings_dir(&dir, &c.embed_name),
        )
    })?;
    Ok(lines(&[
        dir.join(bench::GROUND_TRUTH_FILE),
        dir.join(bench::PAIRS_FILE),
        dir.join(bench::TRAIN_PAIRS_FILE),
        manifest,
    ]))
}

fn cmd_embed(ctx: &Ctx, c: &EmbedCmd) -> Result<String> {
    let layout = c.layout.build()?;
    let dir = ctx.path(&c.bench);
    let truth = bench::read_ground_truth(&dir)?;
    let embedder = ToyEmbedder::for_layout(c.seed, c.dim, &layout, truth.generator.channels)?;
    let manifest = ctx.parallel(|| {
        let images = bench::load_images(&dir, &truth)?;
        bench::embed_images(&images, &layout, &embedder, c.flip, &bench::embeddings_dir(&dir, &c.name))
    })?;
    Ok(lines(&[manifest]))
}

/// Loads a model file and checks it belongs to `store`'s layout.
fn load_model(ctx: &Ctx, path: &Path, store: &LoadedStore) -> Result<FusionModel> {
    let full = ctx.path(path);
    let file: ModelFile = read_json(&full)?;
    let fp = parse_fingerprint(&file.layout_fingerprint)?;
    if fp != store.layout.fingerprint() {
        return Err(Error::LayoutMismatch {
            path: full,
            expected: store.layout.fingerprint(),
            found: fp,
        });
    }
    let model = file.model.to_model()?;
    if model.patches() != store.layout.len() {
        return Err(rrf_core::Error::Incompatible(format!(
            "model has {} weights, layout {} positions",
            model.patches(),
            store.layout.len()
        ))
        .into());
    }
    Ok(model)
}

fn score_rule(ctx: &Ctx, mode: ModeArg, model: Option<&Path>, store: &LoadedStore) -> Result<ScoreRule> {
    match (mode, model) {
        (ModeArg::Rrfnet, None) => Ok(ScoreRule::Rrfnet),
        (ModeArg::Rrfnet, Some(_)) => Err(Error::Usage("--model only applies to region_based mode".into())),
        (ModeArg::RegionBased, Some(p)) => Ok(ScoreRule::RegionBased(load_model(ctx, p, store)?)),
        (ModeArg::RegionBased, None) => Ok(ScoreRule::RegionBased(FusionModel::uniform(store.layout.len()))),
    }
}

fn get<'a>(store: &'a LoadedStore, id: &str) -> Result<&'a rrf_core::EmbeddingSet> {
    store
        .sets
        .get(id)
        .ok_or_else(|| rrf_core::Error::MissingEmbeddings(vec![id.to_string()]).into())
}

fn cmd_sim(ctx: &Ctx, c: &SimCmd) -> Result<String> {
    if !c.display_scale.is_finite() {
        return Err(Error::Usage("--display-scale must be finite".into()));
    }
    let store = load_store(&ctx.path(&c.manifest))?;
    let (a, b) = (get(&store, &c.a)?, get(&store, &c.b)?);
    let rule = score_rule(ctx, c.mode, c.model.as_deref(), &store)?;
    let breakdown = match &rule {
        ScoreRule::Rrfnet => rrfnet_similarity_decomposed(a, b)?,
        ScoreRule::RegionBased(m) => region_similarity(a, b, m)?,
    };
    let k = breakdown.patches();
    let heat_a = breakdown.heatmap(Side::A);
    let heat_b = breakdown.heatmap(Side::B);
    let terms = match breakdown.terms() {
        Terms::Region { locals, weights, bias } => json!({
            "locals": locals,
            "weights": weights,
            "bias": bias,
        }),
        Terms::PatchPairs { contributions } => json!({
            "contributions": contributions.chunks_exact(k).collect::<Vec<_>>(),
        }),
    };
    let doc = json!({
        "config": echo("sim", c),
        "mode": breakdown.mode().as_str(),
        "image_a": c.a,
        "image_b": c.b,
        "global_score": breakdown.global_score(),
        "logit": breakdown.logit(),
        "patches": k,
        "positions": store.layout.positions().iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
        "terms": terms,
        "heatmap_a": heat_a,
        "heatmap_b": heat_b,
        "display_scale": c.display_scale,
    });
    let mut written = Vec::new();
    if let Some(prefix) = &c.heatmaps {
        let prefix = ctx.path(prefix);
        ensure_parent(&prefix)?;
        let scaled = |v: &[f64]| v.iter().map(|x| x * c.display_scale).collect::<Vec<_>>();
        for (side, values) in [("a", scaled(&heat_a)), ("b", scaled(&heat_b))] {
            for format in [HeatmapFormat::Csv, HeatmapFormat::Pgm] {
                let path = with_suffix(&prefix, &format!("_{side}.{}", format.extension()));
                export_heatmap(&values, &store.layout, &path, format)?;
                written.push(path);
            }
        }
        if let Some(matrix) = breakdown.scaled_contributions(c.display_scale) {
            let path = with_suffix(&prefix, "_contributions.csv");
            fs::write(&path, contributions_csv(&matrix, k)?).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    match &c.out {
        Some(out) => {
            let path = ctx.path(out);
            ensure_parent(&path)?;
            write_json(&doc, &path)?;
            written.insert(0, path);
            Ok(lines(&written))
        }
        None => Ok(json_text(&doc) + &lines(&written)),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn label_counts(pairs: &PairList) -> [usize; 2] {
    let genuine = pairs.entries().iter().filter(|e| e.genuine).count();
    [genuine, pairs.len() - genuine]
}

fn cmd_fit(ctx: &Ctx, c: &FitCmd) -> Result<String> {
    let store = load_store(&ctx.path(&c.manifest))?;
    let pairs = load_pairs(&ctx.path(&c.pairs))?;
    let mirror = if c.tie_mirror {
        Some(store.layout.mirror_map()?)
    } else {
        None
    };
    let (features, width) = ctx.parallel(|| local_features(&pairs, &store.sets, mirror.as_ref()))?;
    let mut model = fit_fusion(&features, width, &pairs.labels(), c.reg, c.seed)?;
    if let Some(m) = &mirror {
        model.weights = m.classes().iter().map(|&k| model.weights[k]).collect();
    }
    let file = ModelFile {
        config: echo("fit", c),
        layout_fingerprint: fingerprint_hex(store.layout.fingerprint()),
        tie_mirror: c.tie_mirror,
        train_pairs: label_counts(&pairs),
        model: FusionRecord::from(&model),
    };
    let out = ctx.path(&c.out);
    ensure_parent(&out)?;
    write_json(&file, &out)?;
    Ok(lines(&[out]))
}

fn report_record(
    report: &rrf_core::VerificationReport,
    scores: &[f64],
    pairs: &PairList,
    with_auc: bool,
) -> ReportRecord {
    let a = if with_auc { auc(scores, &pairs.labels()) } else { None };
    ReportRecord::new(report, a)
}

fn cmd_verify(ctx: &Ctx, c: &VerifyCmd) -> Result<String> {
    let store = load_store(&ctx.path(&c.manifest))?;
    let pairs = load_pairs(&ctx.path(&c.pairs))?;
    let rule = score_rule(ctx, c.mode, c.model.as_deref(), &store)?;
    let scores = ctx.parallel(|| score_pairs(&pairs, &store.sets, &rule))?;
    let name = c.manifest.display().to_string();
    let reports = reports_from_scores(&pairs, &[(&name, rule.name())], std::slice::from_ref(&scores), None)?;
    let mut record = report_record(&reports[0], &scores, &pairs, c.auc);
    if matches!(c.mode, ModeArg::RegionBased) {
        let weights = if c.model.is_some() { "fitted" } else { "uniform" };
        record.metadata.insert("weights".into(), weights.into());
    }
    let file = ReportFile {
        config: echo("verify", c),
        pairs: pairs.len(),
        folds: pairs.folds(),
        reports: vec![record],
        combiner: None,
    };
    let out = ctx.path(&c.out);
    ensure_parent(&out)?;
    write_json(&file, &out)?;
    Ok(lines(&[out]))
}

struct Source {
    name: String,
    store: LoadedStore,
    rule: ScoreRule,
}

fn parse_source(ctx: &Ctx, spec: &str) -> Result<Source> {
    let (name, rest) = spec
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--source {spec:?} is not NAME=MANIFEST[,MODEL]")))?;
    if name.is_empty() {
        return Err(Error::Usage(format!("--source {spec:?} has an empty name")));
    }
    let (manifest, model) = match rest.split_once(',') {
        Some((m, model)) => (m, Some(Path::new(model))),
        None => (rest, None),
    };
    let store = load_store(&ctx.path(Path::new(manifest)))?;
    let mode = if model.is_some() {
        ModeArg::RegionBased
    } else {
        ModeArg::Rrfnet
    };
    let rule = score_rule(ctx, mode, model, &store)?;
    Ok(Source {
        name: name.to_string(),
        store,
        rule,
    })
}

fn cmd_combine(ctx: &Ctx, c: &CombineCmd) -> Result<String> {
    if c.sources.len() < 2 {
        return Err(Error::Usage("combine needs at least two --source values".into()));
    }
    let sources = c
        .sources
        .iter()
        .map(|s| parse_source(ctx, s))
        .collect::<Result<Vec<_>>>()?;
    let mut names: Vec<&str> = Vec::new();
    for s in &sources {
        if names.contains(&s.name.as_str()) {
            return Err(Error::Usage(format!("duplicate source name {:?}", s.name)));
        }
        names.push(&s.name);
    }
    let pairs = load_pairs(&ctx.path(&c.pairs))?;
    let calibration = load_pairs(&ctx.path(&c.calibration))?;
    let (columns, cal_columns) = ctx.parallel(|| {
        let eval = sources
            .iter()
            .map(|s| score_pairs(&pairs, &s.store.sets, &s.rule))
            .collect::<Result<Vec<_>>>()?;
        let cal = sources
            .iter()
            .map(|s| score_pairs(&calibration, &s.store.sets, &s.rule))
            .collect::<Result<Vec<_>>>()?;
        Ok((eval, cal))
    })?;
    let m = calibration.len();
    let matrix: Vec<f64> = (0..m)
        .flat_map(|i| cal_columns.iter().map(move |col| col[i]))
        .collect();
    let mut combiner = ScoreCombiner::new(parse_method(c.method.name())?, sources.len());
    combiner.fit(&matrix, Some(&calibration.labels()), c.reg, c.seed)?;
    let configs: Vec<(&str, &str)> = sources.iter().map(|s| (s.name.as_str(), s.rule.name())).collect();
    let reports = reports_from_scores(&pairs, &configs, &columns, Some(&combiner))?;
    let combined = rrf_core::protocol::combined_scores(&combiner, &columns)?;
    let records = reports
        .iter()
        .zip(columns.iter().chain(std::iter::once(&combined)))
        .map(|(r, scores)| report_record(r, scores, &pairs, c.auc))
        .collect();
    let file = ReportFile {
        config: echo("combine", c),
        pairs: pairs.len(),
        folds: pairs.folds(),
        reports: records,
        combiner: Some(CombinerRecord::new(
            &combiner,
            sources.iter().map(|s| s.name.clone()).collect(),
        )),
    };
    let out = ctx.path(&c.out);
    ensure_parent(&out)?;
    write_json(&file, &out)?;
    Ok(lines(&[out]))
}
