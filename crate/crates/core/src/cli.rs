//! Command-line front end. `run` parses arguments, dispatches a subcommand
//! and maps failures onto stable exit codes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalOptions, MetricRow};
use crate::network::{DeRenderNet, LightCode, ModelConfig, TrainConfig, Trainer, TrainingSample};
use crate::plane::{read_png_rgb8, Mask, Plane};
use crate::preprocess::{
    depth_to_normal, disparity_to_depth, pseudo_shading, shadow_prior, valid_mask, DepthMap, Intrinsics,
    DEFAULT_SKY_THRESHOLD,
};
use crate::synth::{export_corpus, generate_corpus, load_corpus, SceneSpec, TextureKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CORRUPT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Corrupt { .. } => EXIT_CORRUPT,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

#[derive(Parser, Debug)]
#[command(name = "derender", version, about = "Intrinsic decomposition with cast-shadow separation")]
pub struct Cli {
    /// Flat key=value file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Derive depth, normals, pseudo-shading, shadow prior and mask for one scene.
    Preprocess(PreprocessArgs),
    /// Train on a synthetic corpus.
    Train(TrainArgs),
    /// Split images into albedo, cast-shadow shading and a light code.
    Decompose(DecomposeArgs),
    /// Render shape-dependent shading from depth and a light code.
    Render(RenderArgs),
    /// Render two depth maps under each other's light codes.
    CrossRender(CrossRenderArgs),
    /// Score predictions against ground truth or pairwise judgments.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Image size as WxH.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Box count range as MIN-MAX.
    #[arg(long)]
    pub boxes: Option<String>,
    #[arg(long)]
    pub lights: Option<usize>,
    /// checker | flat | value-noise
    #[arg(long)]
    pub texture: Option<String>,
    #[arg(long)]
    pub ambient: Option<f32>,
    #[arg(long)]
    pub s_min: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// RGB image (PNG or FPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Albedo (PNG or FPM).
    #[arg(long)]
    pub albedo: PathBuf,
    /// Depth as a 1-channel FPM.
    #[arg(long, conflicts_with = "disparity", required_unless_present = "disparity")]
    pub depth: Option<PathBuf>,
    /// Disparity as a 3-channel 8-bit PNG.
    #[arg(long)]
    pub disparity: Option<PathBuf>,
    /// Focal length in pixels; defaults to the image width.
    #[arg(long)]
    pub focal: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    #[arg(long)]
    pub sky_threshold: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory written by `synth`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to write after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Line-delimited JSON loss log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub halve_every: Option<usize>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub lambda_sd: Option<f64>,
    #[arg(long)]
    pub lambda_si: Option<f64>,
    #[arg(long)]
    pub width_scale: Option<f64>,
    #[arg(long)]
    pub code_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    /// Single image (PNG or FPM).
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub image: Option<PathBuf>,
    /// Decompose every scene of a corpus into per-scene directories.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Optional depth; when given, `s_d.fpm` is rendered too.
    #[arg(long, conflicts_with = "corpus")]
    pub depth: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub light: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output FPM; an 8-bit preview is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CrossRenderArgs {
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub light: PathBuf,
    #[arg(long)]
    pub depth2: PathBuf,
    #[arg(long)]
    pub light2: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory for `s_d_1.fpm` (depth 1, light 2) and `s_d_2.fpm` (depth 2, light 1).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Prediction directory (or per-scene subdirectories).
    #[arg(long, required_unless_present = "judgments")]
    pub pred: Option<PathBuf>,
    /// Ground-truth directory laid out like `pred`.
    #[arg(long, requires = "pred")]
    pub gt: Option<PathBuf>,
    /// Pairwise judgments file; scored against `--albedo`.
    #[arg(long, requires = "albedo", conflicts_with_all = ["pred", "gt"])]
    pub judgments: Option<PathBuf>,
    #[arg(long)]
    pub albedo: Option<PathBuf>,
    #[arg(long)]
    pub scale_invariant: bool,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flat `key = value` configuration. Keys use the long flag names with
/// either dashes or underscores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", n + 1)))?;
            values.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Flag value, else the file's value, else the default.
    pub fn resolve<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("config key {key}: cannot parse {s:?}"))),
            None => Ok(default),
        }
    }
}

/// Parses `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("size {s:?} must look like 64x48"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("range {s:?} must look like 1-3"));
    match s.split_once('-') {
        Some((a, b)) => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        None => {
            let n = s.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

/// Parses `args`, runs the subcommand, reports errors on stderr and returns
/// the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli, &mut std::io::stdout()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; reports go to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Synth(a) => cmd_synth(&a, &cfg, out),
        Command::Preprocess(a) => cmd_preprocess(&a, &cfg),
        Command::Train(a) => cmd_train(&a, &cfg, out),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Render(a) => cmd_render(&a),
        Command::CrossRender(a) => cmd_cross_render(&a),
        Command::Eval(a) => cmd_eval(&a, &cfg, out),
    }
}

fn say(out: &mut dyn Write, msg: String) -> Result<()> {
    writeln!(out, "{msg}").map_err(|e| Error::io("stdout", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Scene spec from flags, config file and defaults.
pub fn scene_spec(a: &SynthArgs, cfg: &ConfigFile) -> Result<SceneSpec> {
    let (w, h) = parse_size(&cfg.resolve("size", a.size.clone(), "64x48".to_string())?)?;
    let seed = cfg.resolve("seed", a.seed, 0)?;
    let mut spec = SceneSpec::new(w, h, seed);
    let boxes = cfg.resolve("boxes", a.boxes.clone(), String::new())?;
    if !boxes.is_empty() {
        spec.boxes = parse_range(&boxes)?;
    }
    spec.lights = cfg.resolve("lights", a.lights, spec.lights)?;
    spec.texture = cfg.resolve("texture", a.texture.clone(), "value-noise".to_string())?.parse::<TextureKind>()?;
    spec.ambient = cfg.resolve("ambient", a.ambient, spec.ambient)?;
    spec.s_min = cfg.resolve("s_min", a.s_min, spec.s_min)?;
    spec.validate()?;
    Ok(spec)
}

fn cmd_synth(a: &SynthArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let spec = scene_spec(a, cfg)?;
    let n = cfg.resolve("n", a.n, 16)?;
    let scenes = generate_corpus(&spec, n)?;
    export_corpus(&scenes, &a.out)?;
    say(out, format!("wrote {n} scenes to {}", a.out.display()))
}

fn cmd_preprocess(a: &PreprocessArgs, cfg: &ConfigFile) -> Result<()> {
    let image = Plane::read_any(&a.image)?;
    let albedo = Plane::read_any(&a.albedo)?;
    let depth = match (&a.depth, &a.disparity) {
        (Some(p), _) => DepthMap::from_plane(&Plane::read_fpm(p)?)?,
        (None, Some(p)) => {
            let (w, h, bytes) = read_png_rgb8(p)?;
            disparity_to_depth(w, h, &bytes)?
        }
        (None, None) => return Err(Error::Config("need --depth or --disparity".into())),
    };
    if depth.width() != image.width() || depth.height() != image.height() {
        return Err(Error::shape("preprocess", "depth and image sizes differ"));
    }
    let (w, h) = (image.width() as f64, image.height() as f64);
    let k = Intrinsics::new(
        cfg.resolve("focal", a.focal, w)?,
        cfg.resolve("cx", a.cx, (w - 1.0) / 2.0)?,
        cfg.resolve("cy", a.cy, (h - 1.0) / 2.0)?,
    )?;
    let sky = cfg.resolve("sky_threshold", a.sky_threshold, DEFAULT_SKY_THRESHOLD)?;
    let mask = valid_mask(&depth, sky)?;
    let normals = depth_to_normal(&depth, &k);
    let pseudo = pseudo_shading(&image, &albedo)?;
    let prior = shadow_prior(&pseudo);
    create_dir(&a.out)?;
    depth.to_plane().write_fpm(a.out.join("depth.fpm"))?;
    depth.log_plane().write_fpm(a.out.join("log_depth.fpm"))?;
    normals.to_plane().write_fpm(a.out.join("normals.fpm"))?;
    normals
        .to_plane()
        .map(|v| (v + 1.0) / 2.0)
        .write_preview(a.out.join("normals.png"))?;
    pseudo.write_fpm(a.out.join("pseudo_shading.fpm"))?;
    prior.plane().write_fpm(a.out.join("shadow_prior.fpm"))?;
    prior
        .plane()
        .map(|v| v / 0.398_942_3)
        .write_preview(a.out.join("shadow_prior.png"))?;
    mask.to_plane().write_fpm(a.out.join("mask.fpm"))?;
    mask.to_plane().write_preview(a.out.join("mask.png"))
}

/// Training configuration from flags, config file and defaults.
pub fn train_config(a: &TrainArgs, cfg: &ConfigFile) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let c = TrainConfig {
        batch: cfg.resolve("batch", a.batch, d.batch)?,
        epochs: cfg.resolve("epochs", a.epochs, d.epochs)?,
        lr: cfg.resolve("lr", a.lr, d.lr)?,
        halve_every: cfg.resolve("halve_every", a.halve_every, d.halve_every)?,
        lambda_a: cfg.resolve("lambda_a", a.lambda_a, d.lambda_a)?,
        lambda_sd: cfg.resolve("lambda_sd", a.lambda_sd, d.lambda_sd)?,
        lambda_si: cfg.resolve("lambda_si", a.lambda_si, d.lambda_si)?,
        seed: cfg.resolve("seed", a.seed, d.seed)?,
    };
    c.validate()?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let tc = train_config(a, cfg)?;
    let scenes = load_corpus(&a.corpus)?;
    let first = scenes
        .first()
        .ok_or_else(|| Error::Config(format!("corpus {} is empty", a.corpus.display())))?;
    let samples = scenes
        .iter()
        .map(TrainingSample::from_scene)
        .collect::<Result<Vec<_>>>()?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(p, tc)?,
        None => {
            let d = ModelConfig::default();
            let mc = ModelConfig {
                width_scale: cfg.resolve("width_scale", a.width_scale, d.width_scale)?,
                input_h: first.height(),
                input_w: first.width(),
                code_dim: cfg.resolve("code_dim", a.code_dim, d.code_dim)?,
                seed: tc.seed,
            };
            Trainer::new(mc, tc)?
        }
    };
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(a.resume.is_some())
        .write(true)
        .truncate(a.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let logs = trainer.train(&samples, Some(&a.out), &mut log)?;
    if let (Some(f), Some(l)) = (logs.first(), logs.last()) {
        say(
            out,
            format!(
                "epochs {}..{}: total loss {:.4} -> {:.4}; checkpoint {}",
                f.epoch,
                l.epoch,
                f.total,
                l.total,
                a.out.display()
            ),
        )?;
    }
    Ok(())
}

fn load_trained(path: &Path) -> Result<DeRenderNet<f32>> {
    let net = DeRenderNet::load(path)?;
    if !net.is_trained() {
        return Err(Error::Untrained);
    }
    Ok(net)
}

fn write_decomposition(
    net: &DeRenderNet<f32>,
    image: &Plane,
    depth: Option<&DepthMap>,
    dir: &Path,
) -> Result<()> {
    let d = net.decompose(&[image])?.remove(0);
    create_dir(dir)?;
    d.albedo.write_fpm(dir.join("albedo.fpm"))?;
    d.albedo.write_preview(dir.join("albedo.png"))?;
    d.s_i.write_fpm(dir.join("s_i.fpm"))?;
    d.s_i.write_preview(dir.join("s_i.png"))?;
    d.light.to_plane().write_fpm(dir.join("light.fpm"))?;
    if let Some(depth) = depth {
        let s_d = net.render_shading(&[depth], &[&d.light])?.remove(0);
        s_d.write_fpm(dir.join("s_d.fpm"))?;
        s_d.write_preview(dir.join("s_d.png"))?;
    }
    Ok(())
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let net = load_trained(&a.checkpoint)?;
    if let Some(corpus) = &a.corpus {
        for (i, scene) in load_corpus(corpus)?.iter().enumerate() {
            write_decomposition(&net, &scene.image, Some(&scene.depth), &a.out.join(format!("scene_{i:04}")))?;
        }
        return Ok(());
    }
    let image = Plane::read_any(a.image.as_ref().expect("clap requires image or corpus"))?;
    let depth = match &a.depth {
        Some(p) => Some(DepthMap::from_plane(&Plane::read_fpm(p)?)?),
        None => None,
    };
    write_decomposition(&net, &image, depth.as_ref(), &a.out)
}

fn read_depth(p: &Path) -> Result<DepthMap> {
    DepthMap::from_plane(&Plane::read_fpm(p)?)
}

fn read_light(p: &Path) -> Result<LightCode> {
    LightCode::from_plane(&Plane::read_fpm(p)?)
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let (depth, light) = (read_depth(&a.depth)?, read_light(&a.light)?);
    let net = load_trained(&a.checkpoint)?;
    let s_d = net.render_shading(&[&depth], &[&light])?.remove(0);
    s_d.write_fpm(&a.out)?;
    s_d.write_preview(a.out.with_extension("png"))
}

fn cmd_cross_render(a: &CrossRenderArgs) -> Result<()> {
    let (d1, l1) = (read_depth(&a.depth)?, read_light(&a.light)?);
    let (d2, l2) = (read_depth(&a.depth2)?, read_light(&a.light2)?);
    let net = load_trained(&a.checkpoint)?;
    let mut out = net.render_shading(&[&d1, &d2], &[&l2, &l1])?;
    create_dir(&a.out)?;
    let (s2, s1) = (out.pop().expect("two"), out.pop().expect("two"));
    s1.write_fpm(a.out.join("s_d_1.fpm"))?;
    s1.write_preview(a.out.join("s_d_1.png"))?;
    s2.write_fpm(a.out.join("s_d_2.fpm"))?;
    s2.write_preview(a.out.join("s_d_2.png"))
}

/// Scene directories under `root`: its subdirectories holding `albedo.fpm`,
/// or `root` itself when it holds one directly.
fn scene_dirs(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    if root.join("albedo.fpm").is_file() {
        out.insert(String::new(), root.to_path_buf());
        return Ok(out);
    }
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.join("albedo.fpm").is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned(), path);
        }
    }
    Ok(out)
}

/// Overall shading of a scene directory: `shading.fpm`, else `s_d.fpm * s_i.fpm`.
fn read_shading(dir: &Path) -> Result<Plane> {
    let direct = dir.join("shading.fpm");
    if direct.is_file() {
        return Plane::read_fpm(direct);
    }
    metrics::overall_shading(&Plane::read_fpm(dir.join("s_d.fpm"))?, &Plane::read_fpm(dir.join("s_i.fpm"))?)
}

/// Compares every scene of `pred` with its namesake in `gt`.
pub fn eval_dirs(pred: &Path, gt: &Path, opts: EvalOptions) -> Result<Vec<MetricRow>> {
    let (p, g) = (scene_dirs(pred)?, scene_dirs(gt)?);
    let unmatched: Vec<&str> = p
        .keys()
        .filter(|k| !g.contains_key(*k))
        .chain(g.keys().filter(|k| !p.contains_key(*k)))
        .map(|s| if s.is_empty() { "." } else { s.as_str() })
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Config(format!(
            "prediction and ground-truth sets differ ({} vs {} scenes); unmatched: {}",
            p.len(),
            g.len(),
            unmatched.join(", ")
        )));
    }
    if p.is_empty() {
        return Err(Error::Config(format!("no scenes with albedo.fpm under {}", pred.display())));
    }
    let mut reports = Vec::new();
    for (name, pdir) in &p {
        let gdir = &g[name];
        let gt_albedo = Plane::read_fpm(gdir.join("albedo.fpm"))?;
        let mask_path = gdir.join("mask.fpm");
        let mask = if mask_path.is_file() {
            Mask::from_plane(&Plane::read_fpm(&mask_path)?)
        } else {
            Mask::full(gt_albedo.width(), gt_albedo.height())
        };
        reports.push(metrics::evaluate(
            &Plane::read_fpm(pdir.join("albedo.fpm"))?,
            &read_shading(pdir)?,
            &gt_albedo,
            &read_shading(gdir)?,
            &mask,
            opts,
        )?);
    }
    Ok(metrics::mean_rows(&reports))
}

fn cmd_eval(a: &EvalArgs, cfg: &ConfigFile, out: &mut dyn Write) -> Result<()> {
    let text = if let Some(j) = &a.judgments {
        let albedo = Plane::read_any(a.albedo.as_ref().expect("clap requires albedo"))?;
        let judgments = fs::read_to_string(j).map_err(|e| Error::io(j, e))?;
        let delta = cfg.resolve("delta", a.delta, metrics::WHDR_DELTA)?;
        let w = metrics::whdr(&albedo, &metrics::parse_judgments(&judgments)?, delta)?;
        format!("WHDR {:.4} ({:.2}%)\n", w, 100.0 * w)
    } else {
        let pred = a.pred.as_ref().expect("clap requires pred");
        let gt = a
            .gt
            .as_ref()
            .ok_or_else(|| Error::Config("--pred needs --gt".into()))?;
        let opts = EvalOptions {
            scale_invariant: a.scale_invariant || cfg.resolve("scale_invariant", None, false)?,
        };
        metrics::format_report(&eval_dirs(pred, gt, opts)?)
    };
    write!(out, "{text}").map_err(|e| Error::io("stdout", e))?;
    if let Some(p) = &a.out {
        fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}
