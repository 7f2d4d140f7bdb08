//! The `flowscene` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use flowscene_core::fgta::FlowPair;
use flowscene_core::flow::{occlusion_mask, BorderPolicy, ConsistencyConfig};
use flowscene_core::metrics::{SEMANTIC_KITTI_CLASSES, SEMANTIC_KITTI_DYNAMIC, STANDARD_RANGES};
use flowscene_core::pipeline::{readout, run, run_single_frame, DepthBins, PipelineConfig, PipelineInputs};
use flowscene_core::synthsim::{generate, SceneConfig};
use flowscene_core::{FeatureMap, FlowField, GridSpec, SemanticVoxelGrid};

use crate::flo::read_flo;
use crate::fsgr;
use crate::json::{read_json, write_json};
use crate::kittiio::{self, LearningMap};
use crate::pgm::{self, read_mask, write_mask, GrayImage};
use crate::ply;
use crate::report::{evaluate, format_summary};
use crate::scene::{self, RunConfig};

pub const THREADS_ENV: &str = "FLOWSCENE_THREADS";

/// Flow-guided temporal aggregation for semantic scene completion.
#[derive(Debug, Parser)]
#[command(name = "flowscene", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene directory with oracle flows, depth and labels.
    Synth(SynthArgs),
    /// Forward-backward consistency check of a flow pair.
    Occlusion(OcclusionArgs),
    /// Run the pipeline and write the refined volume and its labels.
    Run(RunArgs),
    /// Score a predicted label volume against ground truth.
    Eval(EvalArgs),
    /// Convert a label volume to a PLY mesh or PGM slices.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene config (JSON); defaults to the built-in scene.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed; must agree with the config's seed when both are given.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Border {
    MarkOccluded,
    ZeroPad,
}

impl From<Border> for BorderPolicy {
    fn from(b: Border) -> Self {
        match b {
            Border::MarkOccluded => Self::MarkOccluded,
            Border::ZeroPad => Self::ZeroPad,
        }
    }
}

#[derive(Debug, Args)]
pub struct OcclusionArgs {
    /// Flow from frame t to t' (.flo or [2,H,W] .fsgr).
    #[arg(long)]
    pub fwd: PathBuf,
    /// Flow from frame t' to t.
    #[arg(long)]
    pub bwd: PathBuf,
    /// Residual threshold in pixels.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f32,
    #[arg(long, value_enum, default_value_t = Border::MarkOccluded)]
    pub border: Border,
    /// Output mask (.pgm, 255 = occluded).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scene directory as written by `synth`.
    #[arg(long, conflicts_with_all = ["current", "history", "fwd", "bwd", "depth", "depth_edges", "calib", "grid"])]
    pub scene: Option<PathBuf>,
    /// Current-frame features, [C,H,W] .fsgr.
    #[arg(long, required_unless_present = "scene")]
    pub current: Option<PathBuf>,
    /// History features, nearest first (repeat the flag).
    #[arg(long)]
    pub history: Vec<PathBuf>,
    /// Flow t→t-k for each history frame, same order.
    #[arg(long)]
    pub fwd: Vec<PathBuf>,
    /// Flow t-k→t for each history frame, same order.
    #[arg(long)]
    pub bwd: Vec<PathBuf>,
    /// Depth distribution [D,H,W] .fsgr.
    #[arg(long, required_unless_present = "scene", requires = "depth_edges")]
    pub depth: Option<PathBuf>,
    /// Depth bin edges [D+1] .fsgr.
    #[arg(long)]
    pub depth_edges: Option<PathBuf>,
    /// Camera: calib.json or KITTI calib text.
    #[arg(long, required_unless_present = "scene")]
    pub calib: Option<PathBuf>,
    /// Grid spec JSON.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Readout vectors [K,C] .fsgr.
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Pipeline config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the consistency-check mask (.pgm).
    #[arg(long)]
    pub mask_override: Option<PathBuf>,
    /// Lift the current frame only, without temporal aggregation.
    #[arg(long, conflicts_with_all = ["mask_override", "dump_intermediates"])]
    pub single_frame: bool,
    /// Also write aggregated/refined features, the mask and the lifted volumes.
    #[arg(long)]
    pub dump_intermediates: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labels (.label or [X,Y,Z] .fsgr).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels (.label or .fsgr).
    #[arg(long)]
    pub gt: PathBuf,
    /// Ground-truth invalid bitmask.
    #[arg(long)]
    pub invalid: Option<PathBuf>,
    /// YAML learning map applied to the ground truth.
    #[arg(long)]
    pub learning_map: Option<PathBuf>,
    /// Forward ranges in metres (comma separated).
    #[arg(long, value_delimiter = ',', default_values_t = STANDARD_RANGES)]
    pub ranges: Vec<f32>,
    /// Grid spec JSON; defaults to the SemanticKITTI grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Classes for the dynamic/static split (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub dynamic_classes: Option<Vec<usize>>,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Ply,
    PgmSlices,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Label volume (.label or .fsgr).
    #[arg(long)]
    pub grid: PathBuf,
    /// Grid spec JSON; defaults to the SemanticKITTI grid.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: ExportFormat,
    /// JSON array of [r, g, b] colours indexed by class.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// A .ply file, or a directory for PGM slices.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|()| execute(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

/// Caps the global rayon pool at `FLOWSCENE_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // A pool that already exists (e.g. in tests) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Occlusion(a) => cmd_occlusion(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg: SceneConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    let seed = match (cfg.seed, a.seed) {
        (Some(c), Some(f)) if c != f => bail!("--seed {f} conflicts with seed {c} in the config"),
        (c, f) => f.or(c).unwrap_or(0),
    };
    let scene = generate(&cfg, seed).context("generating scene")?;
    scene::write_scene(&scene, &a.out)?;
    println!(
        "wrote {} frames of {}x{} to {} (seed {seed})",
        scene.frames(),
        scene.width(),
        scene.height(),
        a.out.display()
    );
    Ok(())
}

fn read_flow(path: &Path) -> Result<FlowField> {
    let f = if has_ext(path, "fsgr") {
        fsgr::to_flow(fsgr::read(path)?)?
    } else {
        read_flo(path)?
    };
    Ok(f)
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn with_path<T, E: Into<anyhow::Error>>(r: Result<T, E>, path: &Path) -> Result<T> {
    r.map_err(|e| e.into().context(path.display().to_string()))
}

fn cmd_occlusion(a: OcclusionArgs) -> Result<()> {
    let fwd = with_path(read_flow(&a.fwd), &a.fwd)?;
    let bwd = with_path(read_flow(&a.bwd), &a.bwd)?;
    let cfg = ConsistencyConfig {
        tau: a.tau,
        border: a.border.into(),
        relative: None,
    };
    let mask = occlusion_mask(&fwd, &bwd, &cfg)?;
    write_mask(&mask, &a.out)?;
    println!(
        "{} of {} pixels occluded",
        mask.occluded_count(),
        mask.height() * mask.width()
    );
    Ok(())
}

struct RunInputs {
    current: FeatureMap,
    history: Vec<FeatureMap>,
    flows: Vec<FlowPair>,
    depth: flowscene_core::lift::DepthDistribution,
    camera: flowscene_core::lift::CameraModel,
    grid: Option<GridSpec>,
    prototypes: Option<Vec<Vec<f32>>>,
    config: Option<RunConfig>,
}

fn read_features(path: &Path) -> Result<FeatureMap> {
    with_path(fsgr::read(path).and_then(fsgr::to_feature_map), path)
}

fn load_run_inputs(a: &RunArgs) -> Result<RunInputs> {
    if let Some(dir) = &a.scene {
        let s = with_path(scene::load_scene(dir), dir)?;
        return Ok(RunInputs {
            current: s.current,
            history: s.history,
            flows: s.flows,
            depth: s.depth,
            camera: s.camera,
            grid: s.grid,
            prototypes: s.prototypes,
            config: s.config,
        });
    }
    ensure!(
        a.history.len() == a.fwd.len() && a.history.len() == a.bwd.len(),
        "{} --history, {} --fwd and {} --bwd given; counts must match",
        a.history.len(),
        a.fwd.len(),
        a.bwd.len()
    );
    let (depth, edges) = (a.depth.as_ref().unwrap(), a.depth_edges.as_ref().unwrap());
    let calib = a.calib.as_ref().unwrap();
    Ok(RunInputs {
        current: read_features(a.current.as_ref().unwrap())?,
        history: a.history.iter().map(|p| read_features(p)).collect::<Result<_>>()?,
        flows: a
            .fwd
            .iter()
            .zip(&a.bwd)
            .map(|(f, b)| {
                Ok(FlowPair {
                    fwd: with_path(read_flow(f), f)?,
                    bwd: with_path(read_flow(b), b)?,
                })
            })
            .collect::<Result<_>>()?,
        depth: with_path(scene::read_depth(depth, edges), depth)?,
        camera: with_path(scene::read_camera(calib), calib)?,
        grid: a.grid.as_ref().map(|p| with_path(scene::read_grid(p), p)).transpose()?,
        prototypes: None,
        config: None,
    })
}

/// Resolves the config and the readout prototypes. A config (from `--config`
/// or the scene) is authoritative; a grid or prototypes given elsewhere must
/// agree with it.
fn resolve_run_config(a: &RunArgs, inputs: &mut RunInputs) -> Result<(PipelineConfig, Vec<Vec<f32>>)> {
    let loaded = match &a.config {
        Some(p) => Some(with_path(RunConfig::read(p), p)?),
        None => inputs.config.take(),
    };
    let has_config = loaded.is_some();
    let mut cfg = loaded.map(RunConfig::resolve).transpose()?.unwrap_or_default();
    if has_config {
        if let Some(g) = inputs.grid {
            ensure!(g == cfg.grid, "grid in the config ({:?}) differs from the given grid ({:?})", cfg.grid, g);
        }
    } else {
        if let Some(g) = inputs.grid {
            cfg.grid = g;
        }
        let e = inputs.depth.edges();
        cfg.depth = DepthBins {
            bins: inputs.depth.bins(),
            near: e[0],
            far: e[e.len() - 1],
        };
        cfg.history = inputs.history.len().max(1);
    }

    let mut candidates = Vec::new();
    if let Some(p) = cfg.prototypes.clone() {
        candidates.push(("config", p));
    }
    if let Some(p) = &a.prototypes {
        candidates.push(("--prototypes", with_path(scene::read_prototypes(p), p)?));
    }
    if let Some(p) = inputs.prototypes.take() {
        candidates.push(("scene", p));
    }
    let (first_src, protos) = candidates
        .first()
        .cloned()
        .ok_or_else(|| anyhow!("no readout prototypes: pass --prototypes or set them in the config"))?;
    if let Some((src, _)) = candidates.iter().find(|(_, p)| *p != protos) {
        bail!("prototypes from {src} differ from those in {first_src}");
    }
    Ok((cfg, protos))
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let mut inputs = load_run_inputs(&a)?;
    let (cfg, prototypes) = resolve_run_config(&a, &mut inputs)?;
    let mask_override = a
        .mask_override
        .as_ref()
        .map(|p| with_path(read_mask(p), p))
        .transpose()?;
    let pin = PipelineInputs {
        current: &inputs.current,
        history: &inputs.history,
        flows: &inputs.flows,
        depth: &inputs.depth,
        camera: &inputs.camera,
        mask_override: mask_override.as_ref(),
    };
    fs::create_dir_all(&a.out)?;
    let out = |name: &str| a.out.join(name);
    let v_fine = if a.single_frame {
        run_single_frame(&pin, &cfg)?
    } else {
        let o = run(&pin, &cfg)?;
        if a.dump_intermediates {
            fsgr::write(&fsgr::from_feature_map(&o.aggregated), &out("f_agg.fsgr"))?;
            fsgr::write(&fsgr::from_feature_map(&o.refined), &out("f_refined.fsgr"))?;
            write_mask(&o.mask, &out("mask.pgm"))?;
            fsgr::write(&fsgr::from_voxels(&o.v_t), &out("v_t.fsgr"))?;
            fsgr::write(&fsgr::from_voxels(&o.v_agg), &out("v_agg.fsgr"))?;
            fsgr::write(&fsgr::from_voxels(&o.v_mask), &out("v_mask.fsgr"))?;
        }
        o.v_fine
    };
    let pred = readout(&v_fine, &prototypes)?;
    fsgr::write(&fsgr::from_voxels(&v_fine), &out("v_fine.fsgr"))?;
    kittiio::write_labels(pred.labels(), &out("pred.label"))?;
    write_json(&cfg.grid, &out("grid.json"))?;
    let occupied = pred.labels().iter().filter(|&&l| l != 0).count();
    println!("{occupied} occupied voxels written to {}", a.out.display());
    Ok(())
}

fn read_label_volume(path: &Path, dims: [usize; 3]) -> Result<Vec<u16>> {
    if has_ext(path, "fsgr") {
        let t = with_path(fsgr::read(path), path)?;
        ensure!(
            t.dims == dims,
            "{}: label tensor dims {:?}, grid {:?}",
            path.display(),
            t.dims,
            dims
        );
        with_path(fsgr::to_label_values(&t), path)
    } else {
        with_path(kittiio::read_labels(path, dims), path)
    }
}

fn read_spec(path: Option<&PathBuf>) -> Result<GridSpec> {
    path.map_or(Ok(GridSpec::semantic_kitti()), |p| with_path(scene::read_grid(p), p))
}

/// Raw id conventionally marking unlabeled voxels in SemanticKITTI volumes.
const IGNORE_ID: u16 = 255;

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let spec = read_spec(a.grid.as_ref())?;
    let map = a
        .learning_map
        .as_ref()
        .map(|p| with_path(LearningMap::read(p), p))
        .transpose()?;
    let k = a
        .num_classes
        .or_else(|| map.as_ref().map(LearningMap::num_classes))
        .unwrap_or(SEMANTIC_KITTI_CLASSES.len());
    let raw = read_label_volume(&a.gt, spec.dims)?;
    let mut valid = match &a.invalid {
        Some(p) => with_path(kittiio::read_bitmask(p, spec.dims), p)?
            .into_iter()
            .map(|b| !b)
            .collect(),
        None => vec![true; raw.len()],
    };
    let ignore_unmapped = match &map {
        Some(m) => m.get(IGNORE_ID).is_none(),
        None => usize::from(IGNORE_ID) >= k,
    };
    if ignore_unmapped {
        for (v, &r) in valid.iter_mut().zip(&raw) {
            *v &= r != IGNORE_ID;
        }
    }
    let identity;
    let map = match &map {
        Some(m) => m,
        None => {
            identity = LearningMap::identity(u16::try_from(k).context("too many classes")?);
            &identity
        }
    };
    let gt = kittiio::remap(&raw, &valid, spec, map, k).context("ground truth")?;
    let pred = SemanticVoxelGrid::fully_valid(spec, k, read_label_volume(&a.pred, spec.dims)?)
        .context("prediction")?;
    let dynamic = a
        .dynamic_classes
        .clone()
        .or_else(|| (k == SEMANTIC_KITTI_CLASSES.len()).then(|| SEMANTIC_KITTI_DYNAMIC.to_vec()));
    let report = evaluate(&pred, &gt, &a.ranges, dynamic.as_deref())?;
    print!("{}", format_summary(&report));
    if let Some(p) = &a.out {
        write_json(&report, p)?;
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let spec = read_spec(a.spec.as_ref())?;
    let labels = read_label_volume(&a.grid, spec.dims)?;
    let max = labels.iter().copied().max().unwrap_or(0) as usize;
    let palette: Vec<[u8; 3]> = match &a.palette {
        Some(p) => read_json(p)?,
        None => ply::default_palette(max + 1),
    };
    match a.format {
        ExportFormat::Ply => {
            let grid = SemanticVoxelGrid::fully_valid(spec, max + 1, labels)?;
            let mesh = ply::voxel_mesh(&grid, &palette)?;
            ply::write_ply(&mesh, &a.out)?;
            println!("{} voxels written to {}", mesh.voxel_count().unwrap_or(0), a.out.display());
        }
        ExportFormat::PgmSlices => {
            ensure!(max <= 255, "class id {max} does not fit an 8-bit PGM");
            fs::create_dir_all(&a.out)?;
            let [nx, ny, nz] = spec.dims;
            for z in 0..nz {
                let data = (0..nx * ny).map(|i| labels[i * nz + z] as u8).collect();
                let img = GrayImage::new(ny, nx, 255, data)?;
                pgm::write_pgm(&img, &a.out.join(format!("slice_{z:03}.pgm")))?;
            }
            println!("{nz} slices written to {}", a.out.display());
        }
    }
    Ok(())
}
