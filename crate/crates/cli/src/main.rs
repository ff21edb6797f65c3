//! `stereonet` command-line tool: train, infer, eval, bench.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use stereonet::checkpoint::Checkpoint;
use stereonet::data::{
    load_dataset, read_image, read_pfm_gray, synth_corpus, synth_pair, write_disparity_png, write_pfm, ColorRamp,
    DisparityField, SynthSpec,
};
use stereonet::eval::{runtime_breakdown, EvalReport};
use stereonet::training::{write_history_csv, Trainer};
use stereonet::{DisparityMap, StereoNet};

#[derive(Parser)]
#[command(name = "stereonet", about = "Stereo disparity with a coarse cost volume and learned refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file; writes a checkpoint and loss CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict a full-resolution disparity PFM for a rectified pair.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Color-mapped PNG of the prediction.
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Config whose architecture must agree with the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare a predicted PFM against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// PFM or image; nonzero pixels are evaluated.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-stage median inference time.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input size as WxH.
        #[arg(long, default_value = "128x64")]
        size: String,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type CmdResult = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn init_threads() -> CmdResult {
    let Ok(v) = std::env::var("STEREONET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| format!("STEREONET_THREADS must be an integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(err)
}

fn train(config: &Path) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let data = match &cfg.dataset {
        Some(root) => load_dataset(root, cfg.layout).map_err(err)?,
        None => synth_corpus(
            cfg.synth_pairs,
            cfg.synth_width,
            cfg.synth_height,
            cfg.synth_max_disp,
            cfg.synth_noise,
            cfg.train.seed,
        )
        .map_err(err)?,
    };
    let mut trainer = if cfg.resume && cfg.checkpoint.exists() {
        let ck = Checkpoint::load(&cfg.checkpoint).map_err(err)?;
        let t = Trainer::resume(&ck, cfg.train.clone()).map_err(err)?;
        if t.model.config != cfg.model {
            return Err(format!(
                "checkpoint {} architecture does not match the config",
                cfg.checkpoint.display()
            ));
        }
        t
    } else {
        let model = StereoNet::new(cfg.model.clone(), cfg.train.seed).map_err(err)?;
        Trainer::new(model, cfg.train.clone()).map_err(err)?
    };
    let every = (cfg.train.iterations / 20).max(1);
    let history = trainer
        .run(&data, |r| {
            if r.step % every == 0 {
                eprintln!("step {} lr {:.3e} loss {:.4} epe {:.4}", r.step, r.lr, r.loss, r.epe_fullres);
            }
        })
        .map_err(err)?;
    trainer.checkpoint().save(&cfg.checkpoint).map_err(err)?;
    write_history_csv(&cfg.loss_csv, &history).map_err(err)?;
    Ok(())
}

fn infer(checkpoint: &Path, left: &Path, right: &Path, out: &Path, viz: Option<&Path>, config: Option<&Path>) -> CmdResult {
    let model = StereoNet::from_checkpoint(&Checkpoint::load(checkpoint).map_err(err)?).map_err(err)?;
    if let Some(c) = config {
        let cfg = RunConfig::load(c)?;
        if cfg.model != model.config {
            return Err(format!(
                "config architecture (K={}, D={}, {}) does not match checkpoint (K={}, D={}, {})",
                cfg.model.k,
                cfg.model.max_disparity,
                cfg.model.mode,
                model.config.k,
                model.config.max_disparity,
                model.config.mode
            ));
        }
    }
    let l = read_image(left).map_err(err)?;
    let r = read_image(right).map_err(err)?;
    if l.shape() != r.shape() {
        return Err(format!("left {:?} and right {:?} sizes differ", l.shape(), r.shape()));
    }
    let pred = model.predict(&l, &r).map_err(err)?.pop().unwrap();
    write_pfm(out, &pred.values).map_err(err)?;
    if let Some(v) = viz {
        write_disparity_png(v, &pred, &ColorRamp::default(), model.config.max_disparity as f32).map_err(err)?;
    }
    Ok(())
}

fn read_mask(path: &Path, len: usize) -> Result<Vec<bool>, String> {
    let values: Vec<f32> = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        read_pfm_gray(path).map_err(err)?.into_data()
    } else {
        read_image(path).map_err(err)?.data().chunks_exact(3).map(|c| c[0]).collect()
    };
    if values.len() != len {
        return Err(format!("mask {} has {} pixels, expected {len}", path.display(), values.len()));
    }
    Ok(values.iter().map(|&v| v.is_finite() && v != 0.0).collect())
}

fn eval(pred: &Path, gt: &Path, mask: Option<&Path>, report: &Path) -> CmdResult {
    let p = DisparityMap::new(read_pfm_gray(pred).map_err(err)?, 0).map_err(err)?;
    let g = DisparityMap::new(read_pfm_gray(gt).map_err(err)?, 0).map_err(err)?;
    if p.values.shape() != g.values.shape() {
        return Err(format!(
            "prediction {:?} and ground truth {:?} sizes differ",
            p.values.shape(),
            g.values.shape()
        ));
    }
    let mut valid: Vec<bool> = g.values.data().iter().map(|v| v.is_finite()).collect();
    if let Some(m) = mask {
        for (v, m) in valid.iter_mut().zip(read_mask(m, g.values.len())?) {
            *v &= m;
        }
    }
    let r = EvalReport::compute(&p, &g, &valid, None).map_err(err)?;
    r.write_csv(report).map_err(err)
}

fn bench(checkpoint: &Path, size: &str, reps: usize, out: Option<&Path>) -> CmdResult {
    let (w, h) = size
        .split_once(['x', 'X'])
        .and_then(|(w, h)| Some((w.parse::<usize>().ok()?, h.parse::<usize>().ok()?)))
        .filter(|&(w, h)| w >= 8 && h >= 8)
        .ok_or_else(|| format!("--size must be WxH with both at least 8, got {size:?}"))?;
    let model = StereoNet::from_checkpoint(&Checkpoint::load(checkpoint).map_err(err)?).map_err(err)?;
    let d = (w / 8).min(model.config.max_disparity) as f64;
    let pair = synth_pair(&SynthSpec::new(w, h, DisparityField::Constant(d), 0)).map_err(err)?;
    let t = runtime_breakdown(&model, &pair.left, &pair.right, reps).map_err(err)?;
    let csv = t.to_csv();
    match out {
        Some(p) => std::fs::write(p, csv).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Train { config } => train(config),
        Command::Infer {
            checkpoint,
            left,
            right,
            out,
            viz,
            config,
        } => infer(checkpoint, left, right, out, viz.as_deref(), config.as_deref()),
        Command::Eval { pred, gt, mask, report } => eval(pred, gt, mask.as_deref(), report),
        Command::Bench {
            checkpoint,
            size,
            reps,
            out,
        } => bench(checkpoint, size, *reps, out.as_deref()),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
