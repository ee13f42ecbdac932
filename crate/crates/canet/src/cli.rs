//! `canet {count|bench|gradcheck|train-synth|eval|infer}`.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage, configuration or data
//! error. `CANET_THREADS` caps the worker threads of the conv kernels.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use canet_core::analysis::{count_flops, FlopConvention};
use canet_core::gradcheck::{self, CaseSpec, CheckConfig, Stencil};
use canet_core::model::Canet;
use clap::{Args, Parser, Subcommand};

use crate::bench::{bench_inference, DEFAULT_ITERS, DEFAULT_WARMUP};
use crate::config::{RunConfig, Size};
use crate::error::{Error, Result};
use crate::{formats, run};

#[derive(Parser, Debug)]
#[command(name = "canet", version, about = "Cross-attention two-branch segmentation network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Per-layer parameter and FLOP table.
    Count(CountArgs),
    /// Eval-mode latency of a randomly initialized model.
    Bench(BenchArgs),
    /// Finite-difference check of every layer and block.
    Gradcheck(GradcheckArgs),
    /// Train on the synthetic shapes task and write a run directory.
    TrainSynth(TrainArgs),
    /// mIoU of predicted PGM label maps against ground truth.
    Eval(EvalArgs),
    /// Predict label maps with trained weights.
    Infer(InferArgs),
}

/// Model selection; flags override the config file.
#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// tiny, mobilenet_v2 or resnet18.
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// WIDTHxHEIGHT, both divisible by 32.
    #[arg(long)]
    pub input_size: Option<Size>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub fusion_channels: Option<usize>,
    #[arg(long)]
    pub deconv_channels: Option<usize>,
}

impl ModelFlags {
    fn apply(&self, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => base,
        };
        let m = &mut cfg.model;
        if let Some(v) = &self.backbone {
            m.backbone = v.clone();
        }
        if let Some(v) = self.classes {
            m.num_classes = v;
        }
        if let Some(v) = self.input_size {
            m.input_size = v;
        }
        if let Some(v) = &self.variant {
            m.variant = v.clone();
        }
        if let Some(v) = self.fusion_channels {
            m.fusion_channels = v;
        }
        if let Some(v) = self.deconv_channels {
            m.deconv_channels = v;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
pub struct CountArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// mac (one FLOP per multiply-accumulate) or mul_add_2x.
    #[arg(long, alias = "convention", default_value = "mac")]
    pub flops: String,
    /// key=value rows instead of the table.
    #[arg(long)]
    pub machine: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    pub iters: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Seeds the weights and the input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// First seed; cases run seeds seed..seed+seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// 3 or 5 point central differences.
    #[arg(long, default_value = "5", value_parser = ["3", "5"])]
    pub stencil: String,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    /// Only these cases (repeatable).
    #[arg(long = "case")]
    pub cases: Vec<String>,
    /// Print case names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML config; defaults to the built-in synthetic preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Shuffle and augmentation seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub val_samples: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Write weights every k epochs under checkpoints/.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Class count; defaults to one past the largest label.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 255)]
    pub ignore_label: u8,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    /// Run config; defaults to config.toml beside the weights.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A .ppm/.ctnsr image, or a directory of them.
    #[arg(long)]
    pub image: PathBuf,
    /// Output PGM, or a directory when --image is one.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write logits as CTNSR (file, or directory in directory mode).
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(err, "canet: {e}");
        return 2;
    }
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "canet: {e}");
            2
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CANET_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CANET_THREADS must be a positive integer, got `{v}`")))?;
    // A pool built by an earlier call in the same process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Count(a) => cmd_count(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::TrainSynth(a) => cmd_train_synth(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Infer(a) => cmd_infer(a, out),
    }
}

fn w(out: &mut dyn Write, s: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{s}").map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn cmd_count(a: CountArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.model.apply(RunConfig::default())?;
    let convention = FlopConvention::parse(&a.flops)?;
    let mcfg = cfg.canet_config()?;
    let report = count_flops(&mcfg, mcfg.input_size, convention)?;
    if a.machine {
        write!(out, "{}", report.machine_rows()).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    } else {
        w(out, &report)?;
    }
    Ok(0)
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = a.model.apply(RunConfig::default())?;
    if a.iters == 0 || a.batch == 0 {
        return Err(Error::Config("--iters and --batch must be positive".into()));
    }
    let mcfg = cfg.canet_config()?;
    let size = cfg.model.input_size;
    w(out, format_args!("bench backbone={} input={size} batch={} threads={}", cfg.model.backbone, a.batch, rayon::current_num_threads()))?;
    let model = Canet::new(mcfg.clone(), a.seed)?;
    let t = bench_inference(&model, mcfg.input_size, a.batch, a.iters, a.warmup, a.seed)?;
    w(out, &t)?;
    Ok(0)
}

pub fn check_config(a: &GradcheckArgs) -> CheckConfig {
    CheckConfig {
        eps: a.eps,
        seeds: a.seeds,
        base_seed: a.seed,
        stencil: if a.stencil == "3" { Stencil::ThreePoint } else { Stencil::FivePoint },
        ..CheckConfig::default()
    }
}

/// One line per case and a verdict; true when every case passes.
pub fn gradcheck_report(cases: &[CaseSpec], cfg: &CheckConfig, out: &mut dyn Write) -> Result<bool> {
    w(out, format_args!("gradcheck eps={} stencil={} seeds={} from {} tol={}", cfg.eps, cfg.stencil.name(), cfg.seeds, cfg.base_seed, cfg.tol))?;
    let mut failed = Vec::new();
    for spec in cases {
        let r = gradcheck::check_case(spec, cfg)?;
        let kind = match r.kind {
            gradcheck::CaseKind::Primitive => "primitive",
            gradcheck::CaseKind::Composite => "composite",
        };
        w(
            out,
            format_args!(
                "{:<26} {kind:<9} worst {:.3e} checked {} skipped {} pinned {} {}",
                r.name,
                r.worst,
                r.checked,
                r.skipped,
                r.pinned,
                if r.passed { "PASS" } else { "FAIL" }
            ),
        )?;
        if !r.unchecked.is_empty() {
            w(out, format_args!("  unchecked inputs: {}", r.unchecked.join(", ")))?;
        }
        if !r.passed {
            w(out, format_args!("  worst at {}", r.worst_at))?;
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        w(out, format_args!("all {} cases pass", cases.len()))?;
    } else {
        w(out, format_args!("FAILED: {}", failed.join(", ")))?;
    }
    Ok(failed.is_empty())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.list {
        for c in gradcheck::registry() {
            w(out, c.name)?;
        }
        return Ok(0);
    }
    if a.seeds == 0 || !(a.eps > 0.0) {
        return Err(Error::Config("--seeds and --eps must be positive".into()));
    }
    let cases = if a.cases.is_empty() {
        gradcheck::registry()
    } else {
        a.cases.iter().map(|n| gradcheck::find(n)).collect::<Result<_, _>>()?
    };
    let ok = gradcheck_report(&cases, &check_config(&a), out)?;
    Ok(if ok { 0 } else { 1 })
}

pub fn train_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::synthetic(),
    };
    if let Some(v) = a.classes {
        cfg.model.num_classes = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.max_epoch = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.data_seed {
        cfg.data.seed = v;
    }
    if let Some(v) = a.model_seed {
        cfg.data.model_seed = v;
    }
    if let Some(v) = a.train_samples {
        cfg.data.train_samples = v;
    }
    if let Some(v) = a.val_samples {
        cfg.data.val_samples = v;
    }
    if let Some(v) = a.lr {
        cfg.train.init_lr = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.train.checkpoint_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train_synth(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = train_run_config(&a)?;
    if a.out.is_file() {
        return Err(Error::Config(format!("--out {} is a file", a.out.display())));
    }
    let every = cfg.train.checkpoint_every;
    if every > 0 {
        let d = a.out.join("checkpoints");
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let r = run::train_synth(&cfg, &mut |rec, model| {
        w(out, format_args!("epoch={} lr={} loss={} val_miou={}", rec.epoch, rec.lr, rec.loss, rec.val_miou))?;
        if every > 0 && (rec.epoch + 1) % every == 0 {
            formats::write(&run::checkpoint_path(&a.out, rec.epoch + 1), &formats::encode_canw(&model.params))?;
        }
        Ok(())
    })?;
    run::write_run(&a.out, &r)?;
    write!(out, "{}", run::summary_text(&r.report)).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    w(out, format_args!("wrote {}", a.out.display()))?;
    Ok(0)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let cm = run::eval_dirs(&a.pred_dir, &a.gt_dir, a.classes, a.ignore_label)?;
    write!(out, "{}", run::metrics_table(&cm)?).map_err(|e| Error::io(Path::new("<stdout>"), e))?;
    Ok(0)
}

fn cmd_infer(a: InferArgs, out: &mut dyn Write) -> Result<i32> {
    let config = match &a.config {
        Some(c) => c.clone(),
        None => a.weights.parent().unwrap_or(Path::new(".")).join("config.toml"),
    };
    let (model, norm) = run::load_model(&config, &a.weights)?;
    let jobs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = if a.image.is_dir() {
        let mut inputs = run::list_files(&a.image, "ctnsr")?;
        inputs.extend(run::list_files(&a.image, "ppm")?);
        inputs.sort();
        if inputs.is_empty() {
            return Err(Error::Config(format!("{}: no .ppm or .ctnsr images", a.image.display())));
        }
        for d in std::iter::once(&a.out).chain(&a.logits) {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        inputs
            .into_iter()
            .map(|p| {
                let stem = p.file_stem().unwrap().to_owned();
                let pgm = a.out.join(&stem).with_extension("pgm");
                let lg = a.logits.as_ref().map(|d| d.join(&stem).with_extension("ctnsr"));
                (p, pgm, lg)
            })
            .collect()
    } else {
        vec![(a.image.clone(), a.out.clone(), a.logits.clone())]
    };
    for (img, pgm, lg) in &jobs {
        let image = formats::read_image(img)?;
        let (logits, labels) = run::infer_image(&model, &norm, &image)?;
        let (_, _, h, wd) = logits.dims4()?;
        formats::write(pgm, &formats::encode_pgm(h, wd, &labels))?;
        if let Some(l) = lg {
            formats::write(l, &formats::encode_ctnsr(&logits))?;
        }
    }
    w(out, format_args!("wrote {} label maps", jobs.len()))?;
    Ok(0)
}
