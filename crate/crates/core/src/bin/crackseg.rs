use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crackseg::ablate::{self, Axis};
use crackseg::checkpoint;
use crackseg::complexity;
use crackseg::config::RunConfig;
use crackseg::data::{self, SplitSpec};
use crackseg::metrics::{default_thresholds, evaluate, EvalItem};
use crackseg::scan::{ScanPathSet, ScanStrategy};
use crackseg::train::train;
use crackseg::{Error, Model, Result};

#[derive(Parser)]
#[command(name = "crackseg", version, about = "Crack segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the scan paths of a strategy as JSON.
    #[command(alias = "scan-dump")]
    Scan {
        #[arg(long)]
        strategy: ScanStrategy,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        paths: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root with image/ and mask/ subdirectories.
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on this many generated samples instead of a dataset.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Training log; defaults to the checkpoint path with `.log.json`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Write a probability map (and optionally a binary mask) for an image
    /// or a directory of images.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Score probability maps against ground-truth masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        /// Mask directory, or a dataset root containing mask/.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated threshold grid; defaults to 0.01..0.99.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Parameter and FLOP counts for a configuration.
    Count {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Square input side; overrides --height/--width.
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        /// Also enumerate this checkpoint and compare.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every value of one configuration axis.
    Ablate {
        #[arg(long)]
        axis: Axis,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| io_err(p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

/// Samples from a dataset directory or the synthetic generator, split into
/// (train, held-out) parts.
fn samples(cfg: &RunConfig, dir: Option<&Path>, synthetic: Option<usize>) -> Result<(Vec<data::Sample>, Vec<data::Sample>)> {
    let spec = SplitSpec { seed: cfg.seed, ..SplitSpec::default() };
    match (dir.or(cfg.data_dir.as_deref()), synthetic) {
        (Some(d), None) => {
            let all = data::load_dataset(d)?;
            if all.is_empty() {
                return Err(Error::Usage(format!("no samples under {}", d.display())));
            }
            let s = data::split(all, &spec)?;
            let mut held = s.test;
            held.extend(s.val);
            Ok((s.train, held))
        }
        (_, Some(n)) => {
            let (h, w) = (cfg.network.image_height, cfg.network.image_width);
            let train = data::synth_dataset(n, cfg.seed, h, w, &cfg.synth)?;
            let held = data::synth_dataset(n.div_ceil(4).max(1), cfg.seed + 1_000_000, h, w, &cfg.synth)?;
            Ok((train, held))
        }
        (None, None) => Err(Error::Usage("pass --data DIR or --synthetic N".into())),
    }
}

fn cmd_train(
    config: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    synthetic: Option<usize>,
    out: PathBuf,
    log_path: Option<PathBuf>,
    seed: Option<u64>,
    steps: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.optim.steps = s;
    }
    cfg.validate()?;
    let train_set = match (data_dir.as_deref().or(cfg.data_dir.as_deref()), synthetic) {
        (_, Some(n)) => {
            data::synth_dataset(n, cfg.seed, cfg.network.image_height, cfg.network.image_width, &cfg.synth)?
        }
        _ => samples(&cfg, data_dir.as_deref(), None)?.0,
    };
    let mut model = Model::new(cfg.network.clone(), cfg.seed)?;
    let log = train(&mut model, &train_set, &cfg.loss, &cfg.optim, cfg.seed)?;
    checkpoint::save(&out, &model)?;
    let log_path = log_path.unwrap_or_else(|| out.with_extension("log.json"));
    write_text(Some(&log_path), &json(&log))?;
    eprintln!(
        "trained {} steps, final loss {:.6}, train F1 {:.4}",
        log.steps_run, log.final_loss, log.final_train_f1
    );
    Ok(())
}

fn infer_one(model: &Model, input: &Path, out: &Path, mask: Option<&Path>, threshold: f64) -> Result<()> {
    let img = data::read_rgb(input)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let x = img.reshape([1, 3, h, w])?;
    let prob = model.predict(&x)?;
    data::write_gray(out, h, w, prob.data().iter().map(|&p| data::prob_to_u8(p)).collect())?;
    if let Some(m) = mask {
        data::write_gray(m, h, w, prob.data().iter().map(|&p| if p > threshold { 255 } else { 0 }).collect())?;
    }
    Ok(())
}

fn cmd_infer(ckpt: PathBuf, input: PathBuf, out: PathBuf, mask: Option<PathBuf>, threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let model = checkpoint::load(&ckpt)?;
    if input.is_dir() {
        for (id, path) in data::png_ids(&input)? {
            let file = format!("{id}.png");
            let m = mask.as_ref().map(|d| d.join(&file));
            infer_one(&model, &path, &out.join(&file), m.as_deref(), threshold)?;
        }
        Ok(())
    } else {
        infer_one(&model, &input, &out, mask.as_deref(), threshold)
    }
}

fn cmd_eval(pred: PathBuf, gt: PathBuf, out: Option<PathBuf>, thresholds: Option<Vec<f64>>) -> Result<()> {
    let gt_dir = if gt.join("mask").is_dir() { gt.join("mask") } else { gt };
    let preds = data::png_ids(&pred)?;
    let gts = data::png_ids(&gt_dir)?;
    let a: BTreeSet<&String> = preds.keys().collect();
    let b: BTreeSet<&String> = gts.keys().collect();
    if a.intersection(&b).next().is_none() {
        return Err(Error::Usage("prediction and ground-truth directories share no ids".into()));
    }
    let unmatched: Vec<&str> = a.symmetric_difference(&b).map(|s| s.as_str()).collect();
    if !unmatched.is_empty() {
        return Err(Error::Dataset(format!("unmatched ids: {}", unmatched.join(", "))));
    }
    let mut loaded = Vec::with_capacity(preds.len());
    for (id, p) in &preds {
        let (ph, pw, prob) = data::read_gray(p)?;
        let mask = data::read_mask(&gts[id])?;
        if mask.shape()[1..] != [ph, pw] {
            return Err(Error::Input(format!(
                "{id}: prediction is {ph}x{pw}, ground truth {}x{}",
                mask.shape()[1],
                mask.shape()[2]
            )));
        }
        let bits: Vec<bool> = mask.data().iter().map(|&v| v > 0.5).collect();
        loaded.push((id.clone(), prob, bits));
    }
    let items: Vec<EvalItem<'_>> = loaded
        .iter()
        .map(|(id, p, g)| EvalItem { id: id.clone(), prob: p, gt: g })
        .collect();
    let grid = thresholds.unwrap_or_else(default_thresholds);
    let report = evaluate(&items, &grid)?;
    write_text(out.as_deref(), &json(&report))
}

fn cmd_count(
    config: Option<PathBuf>,
    input_size: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
    ckpt: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    let h = input_size.or(height).unwrap_or(cfg.network.image_height);
    let w = input_size.or(width).unwrap_or(cfg.network.image_width);
    let report = complexity::report(&cfg.network, h, w)?;
    let mut v = serde_json::to_value(&report)?;
    if let Some(path) = ckpt {
        let model = checkpoint::load(&path)?;
        let enumerated = model.param_count();
        v["checkpoint_params"] = enumerated.into();
        if model.config != cfg.network {
            return Err(Error::Usage("checkpoint configuration differs from --config".into()));
        }
        if enumerated != report.total_params {
            return Err(Error::Checkpoint(format!(
                "counted {} parameters, checkpoint holds {enumerated}",
                report.total_params
            )));
        }
    }
    write_text(out.as_deref(), &json(&v))
}

fn cmd_ablate(
    axis: Axis,
    config: Option<PathBuf>,
    data_dir: Option<PathBuf>,
    synthetic: Option<usize>,
    steps: Option<usize>,
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = steps {
        cfg.optim.steps = s;
    }
    cfg.validate()?;
    let synthetic = if data_dir.is_none() && cfg.data_dir.is_none() { synthetic.or(Some(8)) } else { synthetic };
    let (train_set, held) = samples(&cfg, data_dir.as_deref(), synthetic)?;
    let report = ablate::run(&cfg, axis, &train_set, &held)?;
    if let Some(p) = csv {
        write_text(Some(&p), &report.to_csv())?;
    }
    write_text(out.as_deref(), &json(&report))
}

fn cmd_synth(count: usize, out: PathBuf, seed: u64, height: usize, width: usize, config: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config.as_deref())?;
    for s in data::synth_dataset(count, seed, height, width, &cfg.synth)? {
        data::write_sample(&out, &s)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scan { strategy, height, width, paths, out } => {
            let set = ScanPathSet::generate(strategy, height, width, paths)?;
            write_text(out.as_deref(), &serde_json::to_string(&set.to_json())?)
        }
        Command::Train { config, data, synthetic, out, log, seed, steps } => {
            cmd_train(config, data, synthetic, out, log, seed, steps)
        }
        Command::Infer { ckpt, input, out, mask, threshold } => cmd_infer(ckpt, input, out, mask, threshold),
        Command::Eval { pred, gt, out, thresholds } => cmd_eval(pred, gt, out, thresholds),
        Command::Count { config, input_size, height, width, ckpt, out } => {
            cmd_count(config, input_size, height, width, ckpt, out)
        }
        Command::Ablate { axis, config, data, synthetic, steps, out, csv } => {
            cmd_ablate(axis, config, data, synthetic, steps, out, csv)
        }
        Command::Synth { count, out, seed, height, width, config } => cmd_synth(count, out, seed, height, width, config),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Input(_) | Error::Path(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CRACKSEG_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
