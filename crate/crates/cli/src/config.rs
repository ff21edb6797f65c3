//! `key = value` run configuration.
//!
//! One entry per line; `#` starts a comment. Unknown keys are errors.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `k` | 3 | downsampling steps |
//! | `max_disparity` | 191 | `D`; `D+1` divisible by `2^k` |
//! | `channels` | 32 | feature channels |
//! | `refiner_channels` | 32 | refiner channels |
//! | `refinement_mode` | multi | `multi` or `single` |
//! | `lr0` | 1e-3 | initial learning rate |
//! | `decay_rate` | 0.9 | learning-rate factor per `decay_steps` |
//! | `decay_steps` | iterations/10 | |
//! | `iterations` | 1000 | optimizer steps |
//! | `seed` | 0 | initialisation and sample order |
//! | `both_sides` | true | also train on the mirrored right view |
//! | `vertical_flip` | false | flip half of the sampled pairs upside down |
//! | `dataset` | none | dataset root; synthetic pairs when absent |
//! | `layout` | fixture | `fixture`, `sceneflow` or `kitti` |
//! | `synth_pairs` | 200 | |
//! | `synth_width`, `synth_height` | 128, 64 | |
//! | `synth_max_disp` | 20 | |
//! | `synth_noise` | 0 | sensor noise sigma in intensity levels |
//! | `checkpoint` | stereonet.ckpt | output (and resume) path |
//! | `loss_csv` | loss.csv | loss history |
//! | `resume` | false | continue from `checkpoint` if it exists |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use stereonet::data::Layout;
use stereonet::refinement::RefineMode;
use stereonet::training::TrainConfig;
use stereonet::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: Option<PathBuf>,
    pub layout: Layout,
    pub synth_pairs: usize,
    pub synth_width: usize,
    pub synth_height: usize,
    pub synth_max_disp: f64,
    pub synth_noise: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::new(1000),
            dataset: None,
            layout: Layout::Fixture,
            synth_pairs: 200,
            synth_width: 128,
            synth_height: 64,
            synth_max_disp: 20.0,
            synth_noise: 0.0,
            checkpoint: "stereonet.ckpt".into(),
            loss_csv: "loss.csv".into(),
            resume: false,
        }
    }
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid value {v:?} for key `{key}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut c = Self::default();
        let mut decay_steps = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", no + 1))?;
            let (key, v) = (key.trim(), v.trim());
            match key {
                "k" => c.model.k = value(key, v)?,
                "max_disparity" => c.model.max_disparity = value(key, v)?,
                "channels" => c.model.channels = value(key, v)?,
                "refiner_channels" => c.model.refiner_channels = value(key, v)?,
                "refinement_mode" => c.model.mode = v.parse::<RefineMode>().map_err(|_| format!("invalid value {v:?} for key `{key}`"))?,
                "lr0" => c.train.lr0 = value(key, v)?,
                "decay_rate" => c.train.decay_rate = value(key, v)?,
                "decay_steps" => decay_steps = Some(value(key, v)?),
                "iterations" => c.train.iterations = value(key, v)?,
                "seed" => c.train.seed = value(key, v)?,
                "both_sides" => c.train.both_sides = value(key, v)?,
                "vertical_flip" => c.train.vertical_flip = value(key, v)?,
                "dataset" => c.dataset = Some(v.into()),
                "layout" => c.layout = v.parse().map_err(|_| format!("invalid value {v:?} for key `{key}`"))?,
                "synth_pairs" => c.synth_pairs = value(key, v)?,
                "synth_width" => c.synth_width = value(key, v)?,
                "synth_height" => c.synth_height = value(key, v)?,
                "synth_max_disp" => c.synth_max_disp = value(key, v)?,
                "synth_noise" => c.synth_noise = value(key, v)?,
                "checkpoint" => c.checkpoint = v.into(),
                "loss_csv" => c.loss_csv = v.into(),
                "resume" => c.resume = value(key, v)?,
                other => return Err(format!("unknown key `{other}`")),
            }
        }
        c.train.decay_steps = decay_steps.unwrap_or((c.train.iterations / 10).max(1));
        if c.train.iterations == 0 {
            return Err("key `iterations` must be at least 1".into());
        }
        c.model
            .validate()
            .map_err(|e| format!("keys `k`/`max_disparity`: {e}"))?;
        c.train.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }
}
