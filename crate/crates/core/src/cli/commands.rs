//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::error::{Error, Result};
use crate::numkit::rng::streams;
use crate::numkit::SeedStream;
use crate::toydiff::{ddim_sample_from, model::DATA_DIM, DdimConfig, LogLine, QuantizedModel, ToyDiffusionModel};

use super::checkpoint::{self, teacher_hash};
use super::config::PipelineConfig;
use super::pipeline::{calibrate, finetune_model, pretrain, quantize_model, VariantModel};
use super::report::{ablation_pretty, ablation_tsv, allocation_tsv, run_ablation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Quantize,
    Finetune,
    Sample,
    Report,
}

/// Loads the config, applies the seed override and runs `cmd`. `out`
/// replaces the command's primary output path.
pub fn run(cmd: Command, config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match cmd {
        Command::Pretrain => cmd_pretrain(&cfg, out),
        Command::Quantize => cmd_quantize(&cfg, out),
        Command::Finetune => cmd_finetune(&cfg, out),
        Command::Sample => cmd_sample(&cfg, out),
        Command::Report => cmd_report(&cfg, out),
    }
}

fn or_default(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_teacher(path: &Path) -> Result<ToyDiffusionModel> {
    match checkpoint::load(path)? {
        VariantModel::Fp(m) => Ok(m),
        VariantModel::Quantized(_) => {
            Err(Error::Format(format!("{} holds a quantized model, expected a full-precision one", path.display())))
        }
    }
}

fn load_quantized(path: &Path) -> Result<QuantizedModel> {
    match checkpoint::load(path)? {
        VariantModel::Quantized(q) => Ok(q),
        VariantModel::Fp(_) => {
            Err(Error::Format(format!("{} holds a full-precision model, expected a quantized one", path.display())))
        }
    }
}

pub fn cmd_pretrain(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let path = or_default(out, &cfg.fp_checkpoint);
    let model = pretrain(cfg)?;
    checkpoint::save(&path, &VariantModel::Fp(model.clone()))?;
    println!("wrote {} (teacher {})", path.display(), teacher_hash(&model));
    Ok(())
}

/// Writes the quantized checkpoint and `<out>.alloc.tsv`.
pub fn cmd_quantize(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let path = or_default(out, &cfg.quant_checkpoint);
    let teacher = load_teacher(Path::new(&cfg.fp_checkpoint))?;
    let calib = calibrate(&teacher, cfg)?;
    let (model, reports) = quantize_model(&teacher, &calib, cfg, true, true)?;
    checkpoint::save(&path, &VariantModel::Quantized(model))?;
    let table = allocation_tsv(&reports);
    fs::write(sibling(&path, ".alloc.tsv"), &table)?;
    print!("{table}");
    println!("wrote {}", path.display());
    Ok(())
}

/// Writes the fine-tuned checkpoint and the training log. Log data lines are
/// one per iteration; the memory dump follows as `#` comment lines.
pub fn cmd_finetune(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let path = or_default(out, &cfg.tuned_checkpoint);
    let model = load_quantized(Path::new(&cfg.quant_checkpoint))?;
    let state = finetune_model(model, cfg, cfg.alpha)?;
    let mut log = format!("{}\n", LogLine::HEADER);
    for line in &state.log {
        log.push_str(&line.to_tsv());
        log.push('\n');
    }
    log.push_str("# memory\tt\tlen\tmean\tstd\n");
    for (t, s) in state.memory.stats().iter().enumerate() {
        let _ = writeln!(log, "# memory\t{}\t{}\t{:.9e}\t{:.9e}", t + 1, s.len, s.mean, s.std);
    }
    fs::write(&cfg.train_log, log)?;
    checkpoint::save(&path, &VariantModel::Quantized(state.model))?;
    println!("wrote {} and {}", path.display(), cfg.train_log);
    Ok(())
}

/// Samples from the fine-tuned checkpoint (or the teacher if only that
/// exists) and writes `x\ty` rows. For a quantized model the teacher is
/// rolled out from the same noise and the per-step RMS gap is logged.
pub fn cmd_sample(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let path = or_default(out, &cfg.samples_out);
    let source = [&cfg.tuned_checkpoint, &cfg.quant_checkpoint]
        .into_iter()
        .map(PathBuf::from)
        .find(|p| p.exists())
        .unwrap_or_else(|| PathBuf::from(&cfg.fp_checkpoint));
    let model = checkpoint::load(&source)?;
    let mut rng = SeedStream::new(cfg.seed).fork(streams::SAMPLING);
    let x_t = rng.normal_tensor(cfg.eval_samples, DATA_DIM);
    let ddim = DdimConfig { steps: cfg.sample_steps, eta: cfg.eta };
    let traj = ddim_sample_from(model.denoiser(), x_t.clone(), &ddim, &mut rng.split())?;
    let mut text = format!("# source {}\nx\ty\n", source.display());
    if let VariantModel::Quantized(q) = &model {
        let fp = ddim_sample_from(&q.teacher, x_t, &ddim, &mut rng.split())?;
        for (i, (a, b)) in traj.states.iter().zip(&fp.states).enumerate().skip(1) {
            let rms = (a.sub(b)?.sum_squares() / a.data().len() as f64).sqrt();
            if !rms.is_finite() {
                return Err(Error::NonFinite(format!("trajectory gap at step {i}")));
            }
            info!("step {i} (t = {}): quantized vs teacher rms {rms:.6}", traj.timesteps[i - 1]);
            let _ = writeln!(text, "# step {i}\tt {}\trms_gap {rms:.9e}", traj.timesteps[i - 1]);
        }
    }
    let s = traj.samples();
    for r in 0..s.rows() {
        let _ = writeln!(text, "{:.9e}\t{:.9e}", s.get(r, 0), s.get(r, 1));
    }
    fs::write(&path, text)?;
    println!("wrote {} samples to {}", s.rows(), path.display());
    Ok(())
}

/// Runs the ablation from the teacher checkpoint, checks that any existing
/// quantized checkpoints share its teacher, and writes the TSV table plus a
/// `.txt` aligned copy.
pub fn cmd_report(cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let path = or_default(out, &cfg.report_out);
    let teacher = load_teacher(Path::new(&cfg.fp_checkpoint))?;
    let hash = teacher_hash(&teacher);
    for other in [&cfg.quant_checkpoint, &cfg.tuned_checkpoint].map(PathBuf::from) {
        if !other.exists() {
            continue;
        }
        let VariantModel::Quantized(q) = checkpoint::load(&other)? else {
            return Err(Error::Format(format!("{} is not a quantized checkpoint", other.display())));
        };
        let h = teacher_hash(&q.teacher);
        if h != hash {
            return Err(Error::Format(format!("{} was built from teacher {h}, expected {hash}", other.display())));
        }
    }
    let calib = calibrate(&teacher, cfg)?;
    let rows = run_ablation(&teacher, &calib, cfg)?;
    fs::write(&path, ablation_tsv(&rows, &hash))?;
    let pretty = ablation_pretty(&rows);
    fs::write(sibling(&path, ".txt"), &pretty)?;
    print!("{pretty}");
    Ok(())
}
