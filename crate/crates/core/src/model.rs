//! The assembled network: shared feature tower, cost-volume filter, soft
//! argmin and the refinement hierarchy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::cost_volume::{coarse_candidates, DisparityMap, FilterParams};
use crate::data::normalize;
use crate::error::{Error, Result};
use crate::features::{TowerParams, TowerSpec};
use crate::refinement::{center_coarse, hierarchical_refine, RefineMode, RefinerParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of stride-2 downsampling convolutions.
    pub k: usize,
    /// Largest full-resolution disparity `D`; `D+1` must be divisible by `2^K`.
    pub max_disparity: usize,
    pub channels: usize,
    pub refiner_channels: usize,
    pub mode: RefineMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 3,
            max_disparity: 191,
            channels: 32,
            refiner_channels: 32,
            mode: RefineMode::Multi,
        }
    }
}

impl ModelConfig {
    /// Coarse candidate count `D' = (D+1)/2^K`.
    pub fn candidates(&self) -> Result<usize> {
        coarse_candidates(self.max_disparity, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.channels == 0 || self.refiner_channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        self.candidates().map(|_| ())
    }

    pub fn tower_spec(&self) -> TowerSpec {
        TowerSpec {
            channels: self.channels,
            ..TowerSpec::new(self.k)
        }
    }
}

/// Pipeline stage boundaries reported to timing hooks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Features,
    CostVolume,
    Filter,
    /// Refinement producing the given level.
    Refine(usize),
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Features => f.write_str("features"),
            Stage::CostVolume => f.write_str("cost_volume"),
            Stage::Filter => f.write_str("filter"),
            Stage::Refine(level) => write!(f, "refine_level{level}"),
        }
    }
}

/// Vars recorded by one forward pass.
pub struct Forward {
    /// `H'×W'×D'` filtered costs.
    pub costs: Var,
    /// `(level, H_l×W_l disparity)` pairs, coarsest first.
    pub levels: Vec<(usize, Var)>,
}

#[derive(Clone, Debug)]
pub struct StereoNet<T: Real = f32> {
    pub config: ModelConfig,
    pub tower: TowerParams,
    pub filter: FilterParams,
    pub refiners: Vec<RefinerParams>,
    pub params: ParamStore<T>,
}

impl<T: Real> StereoNet<T> {
    /// Freshly initialised network; deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let tower = TowerParams::register(&config.tower_spec(), &mut params, "feature", &mut rng);
        let filter = FilterParams::register(&mut params, "filter", config.channels, &mut rng);
        let refiners = (0..config.mode.stages(config.k))
            .map(|i| RefinerParams::register(&mut params, &format!("refine{i}"), 3, config.refiner_channels, &mut rng))
            .collect();
        Ok(Self {
            config,
            tower,
            filter,
            refiners,
            params,
        })
    }

    /// Same layout with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> StereoNet<U> {
        StereoNet {
            config: self.config.clone(),
            tower: self.tower.clone(),
            filter: self.filter.clone(),
            refiners: self.refiners.clone(),
            params: self.params.cast(),
        }
    }

    /// Scalar weights in the tower and cost filter.
    pub fn unrefined_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("feature.") || p.name.starts_with("filter."))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Features, cost volume, filtering and soft argmin; returns the filtered
    /// costs on the tower grid and the level-`K` disparity on centered pixels.
    pub fn forward_coarse(
        &self,
        tape: &mut Tape<T>,
        left: &Tensor<T>,
        right: &Tensor<T>,
        mark: &mut dyn FnMut(Stage),
    ) -> Result<(Var, Var)> {
        if left.shape() != right.shape() {
            return Err(Error::shape(format!(
                "left {:?} and right {:?} differ",
                left.shape(),
                right.shape()
            )));
        }
        let l = tape.constant(left.clone());
        let r = tape.constant(right.clone());
        let fl = self.tower.forward(tape, &self.params, l)?;
        let fr = self.tower.forward(tape, &self.params, r)?;
        mark(Stage::Features);
        let raw = tape.cost_volume(fl, fr, self.config.candidates()?)?;
        mark(Stage::CostVolume);
        let costs = self.filter.forward(tape, &self.params, raw)?;
        let coarse = tape.soft_argmin(costs)?;
        let coarse = center_coarse(tape, coarse, self.config.k)?;
        mark(Stage::Filter);
        Ok((costs, coarse))
    }

    /// Full forward pass on normalized images.
    pub fn forward(&self, tape: &mut Tape<T>, left: &Tensor<T>, right: &Tensor<T>) -> Result<Forward> {
        self.forward_marked(tape, left, right, &mut |_| {})
    }

    pub fn forward_marked(
        &self,
        tape: &mut Tape<T>,
        left: &Tensor<T>,
        right: &Tensor<T>,
        mark: &mut dyn FnMut(Stage),
    ) -> Result<Forward> {
        let (costs, coarse) = self.forward_coarse(tape, left, right, mark)?;
        let hierarchy = hierarchical_refine(
            tape,
            &self.params,
            coarse,
            self.config.k,
            left,
            &self.refiners,
            self.config.mode,
            self.config.candidates()?,
            |level| mark(Stage::Refine(level)),
        )?;
        Ok(Forward {
            costs,
            levels: hierarchy.levels,
        })
    }

    /// Stages timed by [`Stage`] marks in the order they are emitted.
    pub fn stages(&self) -> Vec<Stage> {
        let mut s = vec![Stage::Features, Stage::CostVolume, Stage::Filter];
        match self.config.mode {
            RefineMode::Multi => s.extend((0..self.config.k).rev().map(Stage::Refine)),
            RefineMode::Single => s.push(Stage::Refine(0)),
        }
        s
    }
}

impl StereoNet<f32> {
    /// Disparity maps for every level (coarsest first) from raw `[0,255]`
    /// color images.
    pub fn predict(&self, left: &Tensor<f32>, right: &Tensor<f32>) -> Result<Vec<DisparityMap>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &normalize(left), &normalize(right))?;
        fwd.levels
            .iter()
            .map(|&(level, v)| DisparityMap::new(tape.value(v).clone(), level))
            .collect()
    }
}
