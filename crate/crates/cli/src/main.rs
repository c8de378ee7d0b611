//! `wnet`: ground truth, synthetic data, training, evaluation and gradient
//! checks from the command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wnet::evaluation::evaluate;
use wnet::formats::{dmap::Dmap, heads};
use wnet::gradcheck;
use wnet::groundtruth::{
    gen_density, gen_reinforcement, HeadAnnotations, KernelParams, DEFAULT_BETA_ADAPT, DEFAULT_K_NEIGHBORS, DEFAULT_SIGMA,
    DEFAULT_WINDOW, REINFORCEMENT_SIGMA, REINFORCEMENT_THRESHOLD, REINFORCEMENT_WINDOW,
};
use wnet::model::{load_checkpoint, save_checkpoint, UpsampleMode, WNet};
use wnet::training::data::list_heads;
use wnet::training::{format_loss_curve, load_scenes, synth_corpus, RunConfig, SyntheticSceneSpec, Trainer};

#[derive(Parser)]
#[command(name = "wnet", version, about = "Crowd counting with a reinforced two-branch U-Net")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density ground truth (DMAP) for every HEADS file in a directory.
    GenGt(GenGt),
    /// Binary reinforcement masks (DMAP) for every HEADS file.
    GenReinf(GenReinf),
    /// Render a synthetic corpus of PGM scenes with HEADS annotations.
    Synth(Synth),
    /// Train on a directory of images and HEADS files.
    Train(Train),
    /// Nine-patch evaluation of a checkpoint.
    Eval(Eval),
    /// Finite-difference gradient checks of every op and the whole network.
    Gradcheck(Gradcheck),
}

#[derive(Args)]
struct GenGt {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Per-head spread from the mean distance to the nearest heads.
    #[arg(long)]
    adaptive: bool,
    #[arg(long, default_value_t = DEFAULT_BETA_ADAPT)]
    beta_adapt: f64,
    #[arg(long, default_value_t = DEFAULT_K_NEIGHBORS)]
    k: usize,
}

#[derive(Args)]
struct GenReinf {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = REINFORCEMENT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = REINFORCEMENT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = REINFORCEMENT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args)]
struct Synth {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    min_heads: usize,
    #[arg(long, default_value_t = 50)]
    max_heads: usize,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// key = value file; absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Final checkpoint. The loss curve goes next to it as `<out>.loss.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Drop the reinforcement branch (gate fixed to 1, no BCE term).
    #[arg(long)]
    no_reinforcement: bool,
    /// Decoder upsampling: nearest or transpose.
    #[arg(long)]
    upsample: Option<UpsampleMode>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Text report; the per-image CSV is written to `<report>.csv`.
    #[arg(long)]
    report: PathBuf,
    /// Ground-truth kernel settings (same keys as for training).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Gradcheck {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

fn main() -> ExitCode {
    wnet::parallel::configure_from_env();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenGt(a) => gen_gt(a)?,
        Command::GenReinf(a) => gen_reinf(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Train(a) => train(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Gradcheck(a) => return Ok(grad_check(a)),
    }
    Ok(ExitCode::SUCCESS)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Applies `render` to every HEADS file of `dir`, writing `<stem>.dmap`.
fn for_each_heads(dir: &Path, out: &Path, render: impl Fn(&HeadAnnotations) -> Result<Dmap>) -> Result<()> {
    let files = list_heads(dir).with_context(|| format!("reading {}", dir.display()))?;
    if files.is_empty() {
        eprintln!("warning: no .heads files in {}", dir.display());
        return Ok(());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for path in files {
        let ann = heads::load(&path).with_context(|| format!("{}", path.display()))?;
        let map = render(&ann).with_context(|| format!("{}", path.display()))?;
        let stem = path.file_stem().context("file without a name")?;
        let dst = out.join(stem).with_extension("dmap");
        map.save(&dst).with_context(|| format!("writing {}", dst.display()))?;
    }
    Ok(())
}

fn gen_gt(a: GenGt) -> Result<()> {
    let params = KernelParams {
        sigma: a.sigma,
        window: a.window,
        adaptive: a.adaptive,
        beta_adapt: a.beta_adapt,
        k_neighbors: a.k,
    };
    params.validate()?;
    for_each_heads(&a.annotations, &a.out, |ann| {
        let d = gen_density(ann, &params);
        Ok(Dmap::from_f64(d.height, d.width, &d.values)?)
    })
}

fn gen_reinf(a: GenReinf) -> Result<()> {
    let params = KernelParams {
        sigma: a.sigma,
        window: a.window,
        ..KernelParams::reinforcement()
    };
    params.validate()?;
    for_each_heads(&a.annotations, &a.out, |ann| {
        let r = gen_reinforcement(ann, &params, a.threshold)?;
        Ok(Dmap::from_f64(r.height, r.width, &r.values)?)
    })
}

fn synth(a: Synth) -> Result<()> {
    let spec = SyntheticSceneSpec {
        width: a.size,
        height: a.size,
        heads: (a.min_heads, a.max_heads),
        ..SyntheticSceneSpec::default()
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (name, image, ann) in synth_corpus(&spec, a.n, a.seed)? {
        let base = a.out.join(&name);
        image.save(&base.with_extension("pgm")).with_context(|| format!("writing {name}.pgm"))?;
        heads::save(&base.with_extension("heads"), &ann).with_context(|| format!("writing {name}.heads"))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("{}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn train(a: Train) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.no_reinforcement {
        cfg.model.reinforcement_enabled = false;
    }
    if let Some(mode) = a.upsample {
        cfg.model.upsample = mode;
    }
    cfg.validate()?;
    let scenes = load_scenes(&a.data, &cfg)?;
    if scenes.is_empty() {
        bail!("no training scenes in {}", a.data.display());
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p).with_context(|| format!("{}", p.display()))?;
            if ckpt.config != cfg.model {
                bail!("{} holds a {:?} model, the run asks for {:?}", p.display(), ckpt.config, cfg.model);
            }
            Trainer::resume(&ckpt, cfg.train)?
        }
        None => Trainer::new(WNet::with_seed(cfg.model, cfg.train.seed)?, cfg.train)?,
    };
    let curve_path = with_suffix(&a.out, ".loss.csv");
    let every = cfg.train.checkpoint_every;
    let curve = trainer.fit(&scenes, |t, s| {
        eprintln!("epoch {} loss {:.6}", s.epoch, s.loss);
        if every > 0 && s.epoch % every == 0 {
            let path = with_suffix(&a.out, &format!(".epoch{}", s.epoch));
            save_checkpoint(&path, &t.checkpoint())?;
        }
        Ok(())
    })?;
    save_checkpoint(&a.out, &trainer.checkpoint()).with_context(|| format!("writing {}", a.out.display()))?;
    fs::write(&curve_path, format_loss_curve(&curve)).with_context(|| format!("writing {}", curve_path.display()))?;
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("{}", a.checkpoint.display()))?;
    let model = WNet::<f32>::from_checkpoint(&ckpt)?;
    let scenes = load_scenes(&a.data, &cfg)?;
    if scenes.is_empty() {
        bail!("no evaluation scenes in {}", a.data.display());
    }
    let report = evaluate(&model, &scenes)?;
    fs::write(&a.report, report.to_text()).with_context(|| format!("writing {}", a.report.display()))?;
    let csv = with_suffix(&a.report, ".csv");
    fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    print!("{}", report.to_text());
    Ok(())
}

fn grad_check(a: Gradcheck) -> ExitCode {
    let reports = gradcheck::full_suite(0..a.seeds);
    let mut failed = 0;
    for r in &reports {
        println!("{r}");
        failed += usize::from(!r.passed());
    }
    println!("{} checks, {} failed", reports.len(), failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
