//! Siamese feature tower.
//!
//! `K` stride-2 5×5 convolutions bring the image to `1/2^K` resolution,
//! six residual blocks add context, and a final linear 3×3 convolution emits
//! a `channels`-dimensional descriptor per coarse pixel. Both views run
//! through the same [`TowerParams`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Conv, ResBlock, LEAKY_SLOPE};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TowerSpec {
    /// Number of stride-2 downsampling convolutions.
    pub k: usize,
    pub channels: usize,
    pub num_res_blocks: usize,
    pub leaky_alpha: f64,
    pub in_channels: usize,
}

impl TowerSpec {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            channels: 32,
            num_res_blocks: 6,
            leaky_alpha: LEAKY_SLOPE,
            in_channels: 3,
        }
    }

    /// `K ∈ {3, 4}`; other depths work but are outside the tested range.
    pub fn is_standard(&self) -> bool {
        matches!(self.k, 3 | 4)
    }

    /// Downsampling factor `2^K`.
    pub fn factor(&self) -> usize {
        1 << self.k
    }
}

#[derive(Clone, Debug)]
pub struct TowerParams {
    pub spec: TowerSpec,
    pub down: Vec<Conv>,
    pub blocks: Vec<ResBlock>,
    pub last: Conv,
}

impl TowerParams {
    pub fn register<T: Real, R: Rng + ?Sized>(
        spec: &TowerSpec,
        store: &mut ParamStore<T>,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        let c = spec.channels;
        let down = (0..spec.k)
            .map(|i| {
                let cin = if i == 0 { spec.in_channels } else { c };
                Conv::new(store, &format!("{prefix}.down{i}"), &[5, 5], cin, c, 2, 1, 1.0, rng)
            })
            .collect();
        let blocks = (0..spec.num_res_blocks)
            .map(|i| ResBlock::new(store, &format!("{prefix}.res{i}"), c, 1, spec.leaky_alpha, rng))
            .collect();
        let last = Conv::new(store, &format!("{prefix}.last"), &[3, 3], c, c, 1, 1, 1.0, rng);
        Self {
            spec: spec.clone(),
            down,
            blocks,
            last,
        }
    }

    /// Records the tower on `tape` for an `H×W×Cin` image var.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, image: Var) -> Result<Var> {
        let s = tape.shape(image);
        if s.len() != 3 || s[2] != self.spec.in_channels {
            return Err(Error::shape(format!(
                "feature tower expects H×W×{} input, got {s:?}",
                self.spec.in_channels
            )));
        }
        let mut x = image;
        for conv in &self.down {
            x = conv.forward(tape, store, x)?;
            x = tape.leaky_relu(x, self.spec.leaky_alpha)?;
        }
        for block in &self.blocks {
            x = block.forward(tape, store, x)?;
        }
        self.last.forward(tape, store, x)
    }
}

/// Fresh tower parameters; identical seeds give bit-identical weights.
pub fn build_tower(spec: &TowerSpec, seed: u64) -> (ParamStore<f32>, TowerParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tower = TowerParams::register(spec, &mut store, "feature", &mut rng);
    (store, tower)
}

/// Runs the tower on a normalized image without recording gradients.
pub fn extract_features<T: Real>(image: &Tensor<T>, store: &ParamStore<T>, tower: &TowerParams) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.constant(image.clone());
    let y = tower.forward(&mut tape, store, x)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsampling_layers_are_strided_five_by_five() {
        let (store, tower) = build_tower(&TowerSpec::new(3), 0);
        assert_eq!(tower.down.len(), 3);
        for (i, conv) in tower.down.iter().enumerate() {
            assert_eq!(conv.stride, 2);
            let shape = store.get(conv.weight).value.shape();
            let cin = if i == 0 { 3 } else { 32 };
            assert_eq!(shape, &[5, 5, cin, 32]);
        }
        assert_eq!(store.get(tower.last.weight).value.shape(), &[3, 3, 32, 32]);
        assert_eq!(tower.blocks.len(), 6);
    }

    #[test]
    fn wrong_channel_count_is_rejected() {
        let (store, tower) = build_tower(&TowerSpec::new(3), 0);
        let img = Tensor::<f32>::zeros(&[16, 16, 1]);
        assert!(matches!(extract_features(&img, &store, &tower), Err(Error::Shape(_))));
    }

    #[test]
    fn odd_sizes_use_ceil_extents() {
        let mut spec = TowerSpec::new(3);
        spec.channels = 4;
        let (store, tower) = build_tower(&spec, 1);
        let img = Tensor::<f32>::from_fn(&[17, 30, 3], |i| ((i % 13) as f32 / 6.5) - 1.0);
        let f = extract_features(&img, &store, &tower).unwrap();
        assert_eq!(f.shape(), &[3, 4, 4]);
    }
}
