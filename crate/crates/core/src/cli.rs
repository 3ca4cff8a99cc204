//! Command-line front end. Each subcommand reads and writes the file formats
//! of the library modules so stages can be run and piped independently.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::divergence::{self, HeatmapTable};
use crate::evaluation::{self, Grouping};
use crate::fusion::{self, FusionModel, TrainConfig};
use crate::geometry::{self, FaceCropRule};
use crate::lime::{
    self, BatchScorer, CommandScorer, ExplainConfig, PlantedScorer, SegmentationGrid,
};
use crate::metrics::{self, Metric, ScoreSet};
use crate::model::{self, DatasetManifest, Heatmap, SampleKey};
use crate::protocol::{self, ProtocolSet};
use crate::report::{self, EerEntry, RowKind, Series};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "periocular",
    version,
    about = "Periocular verification evaluation toolkit"
)]
pub struct Cli {
    /// Upper bound on worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a template file against its manifest.
    Ingest(IngestArgs),
    /// Crop-geometry spot checks.
    #[command(subcommand)]
    Geometry(GeometryCommand),
    /// Generate genuine/impostor pair lists for every distance combination.
    Protocol(ProtocolArgs),
    /// Score protocol pairs with one system's templates.
    Score(ScoreArgs),
    /// Compute EERs from a score file.
    Eval(EvalArgs),
    /// Train or apply logistic-regression score fusion.
    #[command(subcommand)]
    Fuse(FuseCommand),
    /// Explain a probe/reference comparison with a mask-based surrogate.
    Explain(ExplainArgs),
    /// Jensen–Shannon divergence analysis of per-system heatmaps.
    Diverge(DivergeArgs),
    /// Render a result table from EER entries.
    Report(ReportArgs),
    /// Emit per-panel CSV series and SVG plots.
    FigureData(FigureArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub templates: PathBuf,
    /// Re-serialise the validated templates to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GeometryCommand {
    /// Square eye crop around the sclera centre.
    Crop {
        #[arg(long, allow_hyphen_values = true)]
        center_x: f64,
        #[arg(long, allow_hyphen_values = true)]
        center_y: f64,
        #[arg(long, allow_hyphen_values = true)]
        radius: f64,
    },
    /// Face pre-selection rule.
    Face {
        #[arg(long)]
        inter_eye: f64,
        #[arg(long, default_value_t = 0.0)]
        eye_offset: f64,
        #[arg(long, default_value_t = 0.0)]
        nose_offset: f64,
        #[arg(long, default_value_t = geometry::DEFAULT_MIN_INTER_EYE_PX)]
        min_inter_eye: f64,
        #[arg(long, default_value_t = geometry::DEFAULT_FRONTAL_RATIO)]
        frontal_ratio: f64,
    },
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Any template file of the dataset (only the keys are used).
    #[arg(long)]
    pub templates: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub templates: PathBuf,
    /// Protocol CSV, or a directory of `protocol_*.csv` files.
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    /// System name recorded in the score file (defaults to the template file stem).
    #[arg(long)]
    pub system: Option<String>,
    /// L2-normalise templates before comparison.
    #[arg(long)]
    pub l2_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = "pooled")]
    pub grouping: Grouping,
    /// Require every distance (or gap) up to this index to be present.
    #[arg(long)]
    pub max_distance: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum FuseCommand {
    Train(FuseTrainArgs),
    Apply(FuseApplyArgs),
}

#[derive(Debug, Args)]
pub struct FuseTrainArgs {
    /// Aligned score files, one per system.
    #[arg(long = "scores", required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, default_value_t = fusion::DEFAULT_PRIOR)]
    pub prior: f64,
    #[arg(long, default_value_t = fusion::DEFAULT_REGULARIZATION)]
    pub ridge: f64,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    /// Score every trial with the model trained on all trials.
    #[arg(long)]
    pub train_on_all: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseApplyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "scores", required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub probe: String,
    #[arg(long)]
    pub reference: String,
    /// External scorer; invoked as `<cmd> <probe> <reference> <masks.csv> <scores.csv>`.
    #[arg(long, conflicts_with = "planted_weights")]
    pub scorer_cmd: Option<String>,
    /// In-process planted linear scorer, one weight per cell.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub planted_weights: Option<Vec<f64>>,
    #[arg(long, default_value_t = lime::DEFAULT_IMAGE_SIDE)]
    pub width: usize,
    #[arg(long, default_value_t = lime::DEFAULT_IMAGE_SIDE)]
    pub height: usize,
    #[arg(long, default_value_t = lime::DEFAULT_CELLS)]
    pub cells_x: usize,
    #[arg(long, default_value_t = lime::DEFAULT_CELLS)]
    pub cells_y: usize,
    #[arg(long, default_value_t = lime::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = lime::DEFAULT_KEEP_PROB)]
    pub keep_prob: f64,
    #[arg(long, default_value_t = lime::DEFAULT_KERNEL_WIDTH)]
    pub kernel_width: f64,
    #[arg(long, default_value_t = lime::DEFAULT_RIDGE)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Masks per scorer call (0 = one batch).
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DivergeArgs {
    /// Directory with one subdirectory of heatmap files per system.
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Systems to compare (defaults to every subdirectory).
    #[arg(long, value_delimiter = ',')]
    pub systems: Option<Vec<String>>,
    /// Number of least/most diverging images to list.
    #[arg(long, default_value_t = 3)]
    pub extremes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Long-format table `row,kind,column,eer_percent`.
    #[arg(long)]
    pub eers: Option<PathBuf>,
    /// `ROW,KIND,COLUMN=eval.csv`; takes the pooled (`all`) row of the file.
    #[arg(long = "eval")]
    pub evals: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    /// `NAME=eval.csv`, one per plotted system or fusion.
    #[arg(long = "series")]
    pub series: Vec<String>,
    #[arg(long, default_value = "intra")]
    pub grouping: Grouping,
    /// Divergence cloud to project pairwise.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 86)]
    pub subjects: usize,
    #[arg(long, default_value_t = 5)]
    pub distances: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, value_delimiter = ',', default_values_t = ["SQ".to_string(), "MB2".to_string(), "R50".to_string()])]
    pub systems: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.4, 1.25, 1.15])]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub correlation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub distance_degradation: f64,
    /// Also write heatmaps of this side length.
    #[arg(long)]
    pub heatmap_side: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Output directory written under a staging name and renamed into place on
/// commit. An existing target is replaced only if it is empty or holds a
/// previous run (`run.meta`).
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
    meta: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(target: &Path) -> anyhow::Result<Self> {
        if target.exists() {
            let empty = fs::read_dir(target)?.next().is_none();
            if !empty && !target.join("run.meta").exists() {
                bail!(
                    "{} exists and is not a previous run output",
                    target.display()
                );
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| anyhow!("invalid output directory {}", target.display()))?
            .to_string_lossy();
        let staging = target.with_file_name(format!(".{name}.staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        Ok(OutputDir {
            target: target.to_path_buf(),
            staging,
            meta: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let digest = digest_path(path)?;
        self.meta(&format!("input.{}", path.display()), digest);
        Ok(())
    }

    pub fn commit(mut self) -> anyhow::Result<PathBuf> {
        let args: Vec<String> = std::env::args().skip(1).collect();
        self.meta.insert(0, ("command".into(), args.join(" ")));
        let text: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        fs::write(self.staging.join("run.meta"), text)?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving output into {}", self.target.display()))?;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

/// SHA-256 of a file, or of every file below a directory in sorted order.
fn digest_path(path: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    for f in files {
        hasher.update(
            f.strip_prefix(path)
                .unwrap_or(&f)
                .to_string_lossy()
                .as_bytes(),
        );
        hasher.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if path.is_dir() {
        for entry in fs::read_dir(path)? {
            collect_files(&entry?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scores(path: &Path) -> anyhow::Result<ScoreSet> {
    ScoreSet::parse_csv(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn protocol_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("protocol_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no protocol_*.csv files in {}", path.display());
    }
    Ok(files)
}

pub fn protocol_file_name(set: &ProtocolSet) -> String {
    format!("protocol_D{}_D{}.csv", set.di, set.dj)
}

/// Reads `<dir>/<system>/<subject>_s<session>_<eye>_d<distance>.csv`.
pub fn load_heatmap_dir(
    dir: &Path,
    systems: Option<&[String]>,
) -> anyhow::Result<(Vec<String>, HeatmapTable)> {
    let systems: Vec<String> = match systems {
        Some(s) => s.to_vec(),
        None => {
            let mut names: Vec<String> = fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .collect();
            names.sort();
            names
        }
    };
    let mut table = HeatmapTable::new();
    for system in &systems {
        let sub = dir.join(system);
        let mut maps = HashMap::new();
        for entry in fs::read_dir(&sub).with_context(|| format!("reading {}", sub.display()))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let key = SampleKey::from_file_stem(stem)
                .ok_or_else(|| anyhow!("cannot parse sample key from {}", path.display()))?;
            let h = model::ingest_heatmap(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            maps.insert(key, h);
        }
        table.insert(system.clone(), maps);
    }
    Ok((systems, table))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        // Fails only if a global pool already exists, e.g. when called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Geometry(g) => cmd_geometry(g),
        Command::Protocol(a) => cmd_protocol(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Fuse(FuseCommand::Train(a)) => cmd_fuse_train(a),
        Command::Fuse(FuseCommand::Apply(a)) => cmd_fuse_apply(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Diverge(a) => cmd_diverge(a),
        Command::Report(a) => cmd_report(a),
        Command::FigureData(a) => cmd_figure_data(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let templates = model::ingest_templates(&a.templates, &manifest)?;
    println!(
        "templates={} dim={} subjects={}",
        templates.len(),
        templates.dim(),
        templates.subjects().len()
    );
    if let Some(out) = a.out {
        model::write_templates(&out, &templates)?;
    }
    Ok(())
}

fn cmd_geometry(g: GeometryCommand) -> anyhow::Result<()> {
    match g {
        GeometryCommand::Crop {
            center_x,
            center_y,
            radius,
        } => {
            let b = geometry::sclera_crop_box(center_x, center_y, radius)?;
            let (l, t, r, bt) = b.bounds();
            println!(
                "center_x={} center_y={} side={} left={l} top={t} right={r} bottom={bt}",
                b.center_x, b.center_y, b.side
            );
        }
        GeometryCommand::Face {
            inter_eye,
            eye_offset,
            nose_offset,
            min_inter_eye,
            frontal_ratio,
        } => {
            let rule = FaceCropRule {
                min_inter_eye,
                frontal_ratio,
            };
            println!(
                "{}",
                geometry::face_crop_valid(inter_eye, eye_offset, nose_offset, rule)?
            );
        }
    }
    Ok(())
}

fn cmd_protocol(a: ProtocolArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let templates = model::ingest_templates(&a.templates, &manifest)?;
    let sets = protocol::full_protocol(&templates, manifest.max_distance())?;
    let mut out = OutputDir::create(&a.out)?;
    out.input(&a.manifest)?;
    out.input(&a.templates)?;
    let mut summary = String::from("di,dj,genuine,impostor\n");
    let (mut genuine, mut impostor) = (0, 0);
    for set in &sets {
        out.write(&protocol_file_name(set), &set.to_csv())?;
        summary.push_str(&format!(
            "{},{},{},{}\n",
            set.di,
            set.dj,
            set.n_genuine(),
            set.n_impostor()
        ));
        genuine += set.n_genuine();
        impostor += set.n_impostor();
    }
    out.write("summary.csv", &summary)?;
    out.meta("genuine", genuine);
    out.meta("impostor", impostor);
    out.commit()?;
    println!("genuine={genuine} impostor={impostor}");
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let templates = model::ingest_templates(&a.templates, &manifest)?;
    let system = a.system.clone().unwrap_or_else(|| {
        a.templates
            .file_stem()
            .map(|s| {
                s.to_string_lossy()
                    .trim_start_matches("templates_")
                    .to_string()
            })
            .unwrap_or_else(|| "system".into())
    });
    let mut pairs = Vec::new();
    for f in protocol_files(&a.protocol)? {
        let set = ProtocolSet::parse_csv(&read(&f)?)
            .with_context(|| format!("parsing {}", f.display()))?;
        pairs.extend(set.pairs);
    }
    let scores = metrics::score_pairs(&pairs, &templates, a.metric, &system, a.l2_normalize)?;
    model::write_text(&a.out, &scores.to_csv())?;
    eprintln!("scored {} pairs for {system} ({})", scores.len(), a.metric);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let scores = load_scores(&a.scores)?;
    let results = evaluation::group_eval(&[scores], a.grouping, a.max_distance)?;
    let csv = evaluation::eval_to_csv(&results);
    match a.out {
        Some(out) => model::write_text(out, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_fuse_train(a: FuseTrainArgs) -> anyhow::Result<()> {
    let sets = a
        .scores
        .iter()
        .map(|p| load_scores(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let config = TrainConfig {
        prior: a.prior,
        regularization: a.ridge,
        ..TrainConfig::default()
    };
    let mut out = OutputDir::create(&a.out)?;
    for p in &a.scores {
        out.input(p)?;
    }
    out.meta("prior", a.prior);
    out.meta("ridge", a.ridge);
    let full = fusion::train_fusion(&sets, &config)?;
    if full.separable {
        eprintln!("warning: training scores are perfectly separable; weights are unbounded");
    }
    out.write("model.txt", &full.model.to_text())?;
    let fused = if a.train_on_all {
        out.meta("split", "train-on-all");
        fusion::apply_fusion(&full.model, &sets)?
    } else {
        out.meta("split", format!("{}-fold subject-disjoint", a.folds));
        let (fused, fits) = fusion::cross_validated_fusion(&sets, a.folds, &config)?;
        for (i, fit) in fits.iter().enumerate() {
            out.write(&format!("model_fold{}.txt", i + 1), &fit.model.to_text())?;
        }
        fused
    };
    out.write("fused_scores.csv", &fused.to_csv())?;
    out.commit()?;
    eprintln!("fused {} trials from {} systems", fused.len(), sets.len());
    Ok(())
}

fn cmd_fuse_apply(a: FuseApplyArgs) -> anyhow::Result<()> {
    let model = FusionModel::parse(&read(&a.model)?)?;
    let sets = a
        .scores
        .iter()
        .map(|p| load_scores(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    for (name, set) in model.system_names.iter().zip(&sets) {
        if *name != set.system {
            bail!(
                "model expects system {name} but score file holds {}",
                set.system
            );
        }
    }
    let fused = fusion::apply_fusion(&model, &sets)?;
    model::write_text(&a.out, &fused.to_csv())?;
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> anyhow::Result<()> {
    let config = ExplainConfig {
        grid: SegmentationGrid::new(a.width, a.height, a.cells_x, a.cells_y)?,
        samples: a.samples,
        keep_prob: a.keep_prob,
        kernel_width: a.kernel_width,
        ridge: a.ridge,
        seed: a.seed,
        batch_size: a.batch_size,
    };
    let mut out = OutputDir::create(&a.out)?;
    let mut scorer: Box<dyn BatchScorer> = match (&a.scorer_cmd, &a.planted_weights) {
        (Some(cmd), _) => {
            out.meta("scorer", cmd);
            Box::new(CommandScorer::new(cmd.clone(), out.path("scorer")))
        }
        (None, Some(w)) => {
            out.meta("scorer", "planted");
            Box::new(PlantedScorer::new(0.0, w.clone()))
        }
        (None, None) => bail!("either --scorer-cmd or --planted-weights is required"),
    };
    let explanation = lime::explain(&a.probe, &a.reference, scorer.as_mut(), &config)?;
    drop(scorer);
    let _ = fs::remove_dir_all(out.path("scorer"));
    out.meta("probe", &a.probe);
    out.meta("reference", &a.reference);
    out.meta("seed", a.seed);
    out.meta("samples", a.samples);
    out.meta("cells", format!("{}x{}", a.cells_x, a.cells_y));
    out.meta("keep_prob", a.keep_prob);
    out.meta("kernel_width", a.kernel_width);
    out.meta("ridge", a.ridge);
    out.write("heatmap.csv", &explanation.heatmap.to_text())?;
    out.write(
        "surrogate.csv",
        &lime::surrogate_to_csv(&explanation.surrogate),
    )?;
    out.write("masks.csv", &lime::masks_to_text(&explanation.masks))?;
    let scores: String = explanation
        .scores
        .iter()
        .map(|s| format!("{s}\n"))
        .collect();
    out.write("scores.csv", &scores)?;
    out.commit()?;
    Ok(())
}

fn cmd_diverge(a: DivergeArgs) -> anyhow::Result<()> {
    let (systems, table) = load_heatmap_dir(&a.heatmaps, a.systems.as_deref())?;
    let cloud = divergence::pairwise_cloud(&table, &systems)?;
    let axes = divergence::pair_axis_names(systems.len());
    let mut out = OutputDir::create(&a.out)?;
    out.input(&a.heatmaps)?;
    let mut sorted = systems.clone();
    sorted.sort();
    for (axis, pair) in axes
        .iter()
        .zip((0..sorted.len()).flat_map(|i| (i + 1..sorted.len()).map(move |j| (i, j))))
    {
        out.meta(
            &format!("axis.{axis}"),
            format!("{}-{}", sorted[pair.0], sorted[pair.1]),
        );
    }
    out.write("cloud.csv", &divergence::cloud_to_csv(&cloud, &axes))?;
    let mut corr = String::from("axis_x,axis_y,pearson\n");
    if cloud.len() >= 2 && axes.len() >= 2 {
        for (x, y, r) in divergence::axis_correlations(&cloud, &axes)? {
            corr.push_str(&format!("{x},{y},{r}\n"));
        }
    }
    out.write("correlations.csv", &corr)?;
    for system in &sorted {
        let maps = &table[system];
        let mut distances: Vec<usize> = maps.keys().map(|k| k.distance).collect();
        distances.sort_unstable();
        distances.dedup();
        for d in distances {
            let avg = divergence::average_heatmap(
                maps.iter().filter(|(k, _)| k.distance == d).map(|(_, h)| h),
            )?;
            out.write(&format!("average/{system}_D{d}.csv"), &avg.to_text())?;
        }
        let all = divergence::average_heatmap(maps.values())?;
        out.write(&format!("average/{system}_all.csv"), &all.to_text())?;
    }
    let k = a.extremes.min(cloud.len());
    let (low, high) = divergence::extreme_images(&cloud, k)?;
    let mut ext = String::from("rank,kind,subject,session,eye,distance,mean_jsd\n");
    for (kind, list) in [("lowest", &low), ("highest", &high)] {
        for (i, p) in list.iter().enumerate() {
            ext.push_str(&format!(
                "{},{kind},{},{},{},{},{}\n",
                i + 1,
                p.key.subject,
                p.key.session,
                p.key.eye,
                p.key.distance,
                p.mean()
            ));
        }
    }
    out.write("extremes.csv", &ext)?;
    out.commit()?;
    eprintln!("{} images, {} systems", cloud.len(), systems.len());
    Ok(())
}

/// Parses `ROW,KIND,COLUMN=path`.
fn parse_eval_spec(spec: &str) -> anyhow::Result<EerEntry> {
    let (head, path) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("expected ROW,KIND,COLUMN=path, got {spec:?}"))?;
    let parts: Vec<&str> = head.split(',').collect();
    if parts.len() != 3 {
        bail!("expected ROW,KIND,COLUMN=path, got {spec:?}");
    }
    let kind: RowKind = parts[1].parse().map_err(|e: String| anyhow!(e))?;
    let results = evaluation::parse_eval_csv(&read(Path::new(path))?)?;
    let pooled = results
        .iter()
        .find(|r| r.grouping == "all")
        .ok_or_else(|| anyhow!("{path} has no pooled `all` row"))?;
    Ok(EerEntry {
        row: parts[0].to_string(),
        kind,
        column: parts[2].to_string(),
        eer_percent: pooled.eer_percent(),
    })
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let mut entries = Vec::new();
    if let Some(path) = &a.eers {
        entries.extend(report::parse_eer_entries(&read(path)?)?);
    }
    for spec in &a.evals {
        entries.push(parse_eval_spec(spec)?);
    }
    if entries.is_empty() {
        bail!("no EER entries given (use --eers or --eval)");
    }
    let table = report::build_report(&entries)?;
    let md = table.to_markdown();
    print!("{md}");
    if let Some(out) = a.out {
        let mut dir = OutputDir::create(&out)?;
        if let Some(p) = &a.eers {
            dir.input(p)?;
        }
        dir.write("table.md", &md)?;
        dir.write("table.csv", &table.to_csv())?;
        dir.commit()?;
    }
    Ok(())
}

fn cmd_figure_data(a: FigureArgs) -> anyhow::Result<()> {
    if a.series.is_empty() && a.cloud.is_none() {
        bail!("nothing to plot: give --series and/or --cloud");
    }
    let mut out = OutputDir::create(&a.out)?;
    if !a.series.is_empty() {
        let mut series = Vec::new();
        for spec in &a.series {
            let (name, path) = spec
                .split_once('=')
                .ok_or_else(|| anyhow!("expected NAME=eval.csv, got {spec:?}"))?;
            out.input(Path::new(path))?;
            let results = evaluation::parse_eval_csv(&read(Path::new(path))?)?;
            let points: Vec<(f64, f64)> = results
                .iter()
                .filter_map(|r| match evaluation::parse_group_label(&r.grouping) {
                    Some((g, x)) if g == a.grouping => Some((x as f64, r.eer_percent())),
                    _ => None,
                })
                .collect();
            if points.is_empty() {
                bail!("{path} has no rows for grouping {:?}", a.grouping);
            }
            series.push(Series {
                name: name.to_string(),
                points,
            });
        }
        let (stem, x_label) = match a.grouping {
            Grouping::IntraByDistance => ("figure_intra", "distance"),
            Grouping::ByDistanceGap => ("figure_gap", "gap"),
            Grouping::Pooled => ("figure_pooled", "x"),
        };
        out.write(
            &format!("{stem}.csv"),
            &report::series_to_csv(x_label, &series)?,
        )?;
        if a.svg {
            out.write(
                &format!("{stem}.svg"),
                &report::line_svg("EER by group", x_label, "EER (%)", &series)?,
            )?;
        }
    }
    if let Some(cloud_path) = &a.cloud {
        out.input(cloud_path)?;
        let (axes, cloud) = divergence::parse_cloud_csv(&read(cloud_path)?)?;
        for i in 0..axes.len() {
            for j in i + 1..axes.len() {
                let points: Vec<(f64, f64)> =
                    cloud.iter().map(|p| (p.values[i], p.values[j])).collect();
                let name = format!("cloud_{}_vs_{}", axes[i], axes[j]);
                let mut csv = format!("{},{}\n", axes[i], axes[j]);
                for (x, y) in &points {
                    csv.push_str(&format!("{x},{y}\n"));
                }
                out.write(&format!("{name}.csv"), &csv)?;
                if a.svg {
                    out.write(
                        &format!("{name}.svg"),
                        &report::scatter_svg("JSD projection", &axes[i], &axes[j], &points)?,
                    )?;
                }
            }
        }
    }
    out.commit()?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let config = SynthConfig {
        name: "synth".into(),
        subjects: a.subjects,
        distances: a.distances,
        dim: a.dim,
        systems: a.systems.clone(),
        noise: a.noise.clone(),
        correlation: a.correlation,
        distance_degradation: a.distance_degradation,
        seed: a.seed,
        heatmap_side: a.heatmap_side,
    };
    let data = synth::generate(&config)?;
    let mut out = OutputDir::create(&a.out)?;
    out.meta("seed", a.seed);
    out.meta("subjects", a.subjects);
    out.meta("distances", a.distances);
    out.write("manifest.txt", &data.manifest.to_text())?;
    for (name, templates) in &data.templates {
        out.write(
            &format!("templates_{name}.csv"),
            &model::templates_to_csv(templates),
        )?;
    }
    if let Some(table) = &data.heatmaps {
        for (system, maps) in table {
            let mut keys: Vec<&SampleKey> = maps.keys().collect();
            keys.sort();
            for key in keys {
                let h: &Heatmap = &maps[key];
                out.write(
                    &format!("heatmaps/{system}/{}.csv", key.file_stem()),
                    &h.to_text(),
                )?;
            }
        }
    }
    let dir = out.commit()?;
    eprintln!("wrote synthetic dataset to {}", dir.display());
    Ok(())
}
