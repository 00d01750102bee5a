use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mscvit::data::{load_cifar_dir, synth_dataset, AugmentConfig, CifarKind, ImageRecord};
use mscvit::gradsuite::{gradient_suite, GRAD_TOL};
use mscvit::model::{
    build_model, count_params_for, estimate_flops, Checkpoint, ComplexityReport, ModelConfig, FLOPS_PER_MAC,
};
use mscvit::train::{evaluate_top1, TrainConfig, Trainer};
use mscvit::Error;

#[derive(Parser, Debug)]
#[command(name = "mscvit", version, about = "Build, train, evaluate and inspect MSCViT image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a model and optionally write its initial checkpoint.
    Build {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory for `config.txt` and `init.ckpt`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print per-stage geometry, parameter counts and cost.
    Inspect {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train on CIFAR or the synthetic dataset.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        /// Run directory for checkpoints, metrics and the config echo.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1e-5)]
        min_lr: f64,
        #[arg(long, default_value_t = 0.05)]
        weight_decay: f64,
        /// Warmup epochs; defaults to 5, or fewer when training is shorter.
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        smoothing: f64,
        /// Use only the first N training images.
        #[arg(long)]
        subset: Option<usize>,
        /// Disable crop and flip augmentation.
        #[arg(long)]
        no_augment: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report top-1 accuracy of a checkpoint on a test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
    },
    /// Finite-difference check of every op and block in f64 at 8x8.
    Gradcheck,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "on",
            Switch::Off => "off",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Attention {
    Lightweight,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Dataset {
    Cifar10,
    Cifar100,
    Synth,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model size: t, xs or s.
    #[arg(long)]
    variant: Option<String>,
    /// Input resolution: 224 or 32 [default: 224, or 32 for train].
    #[arg(long)]
    res: Option<usize>,
    /// Flat `key = value` model config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum)]
    attention: Option<Attention>,
    #[arg(long, value_enum)]
    use_pe: Option<Switch>,
    #[arg(long, value_enum)]
    lfe: Option<Switch>,
    #[arg(long, value_enum)]
    cff: Option<Switch>,
    #[arg(long)]
    num_classes: Option<usize>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long, value_enum, default_value = "synth")]
    dataset: Dataset,
    /// Directory holding the CIFAR binary files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    synth_classes: usize,
    /// Training images per synthetic class; the test split gets a quarter.
    #[arg(long, default_value_t = 64)]
    synth_per_class: usize,
    /// Seeds the synthetic data and the training run.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes with their exit codes.
enum Failure {
    Config(String),
    Data(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Shape { .. } | Error::InvalidArgument { .. } | Error::CheckpointShape(_) => {
                Failure::Config(msg)
            }
            Error::Format { .. } | Error::Io(_) | Error::EmptyDataset | Error::CheckpointVersion(_) => Failure::Data(msg),
            _ => Failure::Other(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

impl ModelArgs {
    fn resolve(&self, default_res: usize) -> CliResult<ModelConfig> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
                ModelConfig::parse(&text)?
            }
            None => ModelConfig::variant(mscvit::model::Variant::T).with_resolution(default_res)?,
        };
        let mut pairs = Vec::new();
        if let Some(v) = &self.variant {
            pairs.push(format!("variant={v}"));
            if self.res.is_none() && self.config.is_none() {
                pairs.push(format!("resolution={default_res}"));
            }
        }
        if let Some(r) = self.res {
            pairs.push(format!("resolution={r}"));
        }
        if let Some(a) = self.attention {
            pairs.push(format!("attention={}", if a == Attention::Normal { "normal" } else { "lightweight" }));
        }
        for (key, s) in [("use_pe", self.use_pe), ("lfe", self.lfe), ("cff", self.cff)] {
            if let Some(s) = s {
                pairs.push(format!("{key}={}", s.as_str()));
            }
        }
        if let Some(n) = self.num_classes {
            pairs.push(format!("num_classes={n}"));
        }
        pairs.extend(self.set.iter().cloned());
        let cfg = base.with_overrides(&pairs)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DataArgs {
    fn num_classes(&self) -> usize {
        match self.dataset {
            Dataset::Cifar10 => 10,
            Dataset::Cifar100 => 100,
            Dataset::Synth => self.synth_classes,
        }
    }

    /// Train and test records.
    fn load(&self) -> CliResult<(Vec<ImageRecord>, Vec<ImageRecord>)> {
        let kind = match self.dataset {
            Dataset::Synth => {
                let train = synth_dataset(self.synth_classes, self.synth_per_class, self.seed)?;
                let test = synth_dataset(self.synth_classes, (self.synth_per_class / 4).max(1), self.seed.wrapping_add(1))?;
                return Ok((train, test));
            }
            Dataset::Cifar10 => CifarKind::Cifar10,
            Dataset::Cifar100 => CifarKind::Cifar100,
        };
        let dir = self
            .data_dir
            .as_ref()
            .ok_or_else(|| Failure::Data("--data-dir is required for CIFAR datasets".into()))?;
        if !dir.is_dir() {
            return Err(Failure::Data(format!("data directory {} does not exist", dir.display())));
        }
        Ok(load_cifar_dir(dir, kind)?)
    }
}

fn resize_for(res: usize) -> Option<usize> {
    (res != mscvit::data::IMAGE_SIDE).then_some(res)
}

fn cmd_build(model: &ModelArgs, out: Option<&Path>, seed: u64) -> CliResult {
    let cfg = model.resolve(224)?;
    let m = build_model::<f32>(&cfg, seed)?;
    println!("{} parameters", m.count_params());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?;
        std::fs::write(dir.join("config.txt"), cfg.to_text()).map_err(Error::from)?;
        m.to_checkpoint(0).save(dir.join("init.ckpt"))?;
        println!("wrote {}", dir.join("init.ckpt").display());
    }
    Ok(())
}

fn fmt_m(n: usize) -> String {
    format!("{:.3}M", n as f64 / 1e6)
}

fn inspect_report(cfg: &ModelConfig) -> CliResult<String> {
    let report: ComplexityReport = estimate_flops(cfg)?;
    let sizes = cfg.stage_resolutions()?;
    let model = build_model::<f32>(cfg, 0)?;
    let breakdown = model.param_breakdown();
    let mut s = String::new();
    let _ = writeln!(s, "variant {}  resolution {}  classes {}", cfg.variant, cfg.resolution, cfg.num_classes);
    let _ = writeln!(s, "depths {:?}", cfg.depths());
    let _ = writeln!(s, "dims {:?}", cfg.dims());
    let _ = writeln!(
        s,
        "{:<7} {:>5} {:>5} {:>5} {:<9} {:>5} {:>9} {:>10} {:>10} {:>12} {:>12}",
        "stage", "res", "dim", "depth", "R", "Ck/P", "conv ch", "params", "GFLOPs", "LMSSA", "MHSA"
    );
    for (i, (st, &size)) in cfg.stages.iter().zip(&sizes).enumerate() {
        let name = format!("stage{}", i + 1);
        let params: usize = breakdown.iter().filter(|(k, _)| k.split('.').next() == Some(&name)).map(|(_, v)| v).sum();
        let macs: u64 = report.by_scope.iter().filter(|(k, _)| k.starts_with(&format!("{name}/"))).map(|(_, v)| v).sum();
        let layers = report.layers.iter().filter(|l| l.name.starts_with(&format!("{name}.")));
        let (lm, mh) = layers.fold((0.0, 0.0), |(a, b), l| (a + l.lmssa, b + l.mhsa));
        let rs: Vec<String> = st.rs.iter().map(usize::to_string).collect();
        let _ = writeln!(
            s,
            "{:<7} {:>5} {:>5} {:>5} {:<9} {:>5} {:>9} {:>10} {:>10.4} {:>12.4e} {:>12.4e}",
            name,
            size,
            st.dim,
            st.depth,
            format!("[{}]", rs.join(",")),
            format!("{}/{}", st.kernel, st.padding),
            st.conv_channels(cfg.cff),
            fmt_m(params),
            (macs * FLOPS_PER_MAC) as f64 / 1e9,
            lm,
            mh
        );
    }
    let _ = writeln!(s, "total params {} ({})", report.params, fmt_m(report.params));
    let _ = writeln!(s, "total GFLOPs {:.4} (1 FLOP per multiply-accumulate)", report.gflops());
    for scope in ["stem", "patch_embed", "lfe", "cff_conv", "attention", "ffn", "head"] {
        let _ = writeln!(s, "  {scope:<12} {:.4} GFLOPs", report.scope_total(scope) as f64 * FLOPS_PER_MAC as f64 / 1e9);
    }
    let _ = writeln!(
        s,
        "attention counted {:.4e} vs analytic {:.4e} ({:+.2}%)",
        report.attention_macs() as f64,
        report.lmssa_total(),
        100.0 * report.attention_gap()
    );
    if cfg.attention == mscvit::blocks::AttentionKind::Normal {
        let mut light = cfg.clone();
        light.attention = mscvit::blocks::AttentionKind::Lightweight;
        let lp = count_params_for(&light)?;
        let _ = writeln!(
            s,
            "normal attention: {} params vs {} lightweight ({:+.1}%)",
            fmt_m(report.params),
            fmt_m(lp),
            100.0 * (report.params as f64 / lp as f64 - 1.0)
        );
    }
    Ok(s)
}

fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    model: &ModelArgs,
    data: &DataArgs,
    out: &Path,
    cfg: TrainConfig,
    subset: Option<usize>,
    augment: bool,
    resume: Option<&Path>,
) -> CliResult {
    let mut mcfg = model.resolve(32)?;
    if model.num_classes.is_none() && !model.set.iter().any(|s| s.trim_start().starts_with("num_classes")) {
        mcfg.num_classes = data.num_classes();
    }
    if mcfg.num_classes != data.num_classes() {
        return Err(Failure::Config(format!(
            "model has {} classes but the dataset has {}",
            mcfg.num_classes,
            data.num_classes()
        )));
    }
    cfg.validate()?;
    let (mut train, test) = data.load()?;
    if let Some(n) = subset {
        train.truncate(n);
    }
    let resize = resize_for(mcfg.resolution);
    let train_aug = if augment { AugmentConfig::train(resize) } else { AugmentConfig::eval(resize) };
    let model = build_model::<f32>(&mcfg, cfg.seed)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Other(format!("{}: {e}", out.display())))?;
    write_text(&out.join("config.txt"), &mcfg.to_text())?;
    write_text(
        &out.join("train.txt"),
        &format!(
            "dataset = {:?}\ntrain_images = {}\ntest_images = {}\nepochs = {}\nbatch_size = {}\nbase_lr = {}\nmin_lr = {}\nweight_decay = {}\nwarmup_epochs = {}\nlabel_smoothing = {}\nseed = {}\naugment = {}\n",
            data.dataset, train.len(), test.len(), cfg.epochs, cfg.batch_size, cfg.base_lr, cfg.min_lr,
            cfg.weight_decay, cfg.warmup_epochs, cfg.label_smoothing, cfg.seed, augment
        ),
    )?;
    let mut trainer = Trainer::new(model, cfg, train_aug, AugmentConfig::eval(resize))?.with_output(out);
    if let Some(path) = resume {
        trainer.resume(&Checkpoint::load(path)?, train.len())?;
    }
    let history = trainer.run(&train, Some(&test))?;
    for m in &history {
        println!(
            "epoch {} lr {:.3e} train_loss {:.4} train_top1 {:.4} test_top1 {}",
            m.epoch,
            m.lr,
            m.train_loss,
            m.train_top1,
            m.test_top1.map_or("-".into(), |v| v.to_string())
        );
    }
    println!("metrics in {}", out.join("metrics.jsonl").display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, data: &DataArgs, batch_size: usize) -> CliResult {
    if !checkpoint.is_file() {
        return Err(Failure::Data(format!("checkpoint {} not found", checkpoint.display())));
    }
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let cfg = ModelConfig::parse(&ckpt.config)?;
    if cfg.num_classes != data.num_classes() {
        return Err(Failure::Config(format!(
            "checkpoint has {} classes but the dataset has {}",
            cfg.num_classes,
            data.num_classes()
        )));
    }
    let mut model = build_model::<f32>(&cfg, 0)?;
    model.load_state(&ckpt)?;
    let (_, test) = data.load()?;
    let acc = evaluate_top1(&model, &test, &AugmentConfig::eval(resize_for(cfg.resolution)), batch_size)?;
    println!("top1 {acc}");
    Ok(())
}

fn cmd_gradcheck() -> CliResult {
    let results = gradient_suite()?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{status:<4} {:<26} max rel err {:.3e}", r.name, r.max_rel_err);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::Other(format!("{failed} of {} checks exceeded {GRAD_TOL:e}", results.len())));
    }
    println!("all {} checks below {GRAD_TOL:e}", results.len());
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Build { model, out, seed } => cmd_build(&model, out.as_deref(), seed),
        Command::Inspect { model } => {
            print!("{}", inspect_report(&model.resolve(224)?)?);
            Ok(())
        }
        Command::Train {
            model,
            data,
            out,
            epochs,
            batch_size,
            lr,
            min_lr,
            weight_decay,
            warmup,
            smoothing,
            subset,
            no_augment,
            resume,
        } => {
            let cfg = TrainConfig {
                epochs,
                batch_size,
                base_lr: lr,
                weight_decay,
                warmup_epochs: warmup.unwrap_or_else(|| 5.min(epochs.saturating_sub(1))),
                min_lr,
                label_smoothing: smoothing,
                seed: data.seed,
            };
            cmd_train(&model, &data, &out, cfg, subset, !no_augment, resume.as_deref())
        }
        Command::Eval { checkpoint, data, batch_size } => cmd_eval(&checkpoint, &data, batch_size),
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
