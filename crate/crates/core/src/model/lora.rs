use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;

use super::{Layer, ModelError, ModelParams, Result};

/// Low-rank update `ΔW = A B` for one layer with weight `d_out x d_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    /// `d_out x rank`
    pub a: Tensor,
    /// `rank x d_in`
    pub b: Tensor,
    pub rank: usize,
    pub frozen_base: bool,
}

impl LoraAdapter {
    pub(crate) fn check_against(&self, layer: &Layer) -> Result<()> {
        let (rows, cols) = (layer.d_out(), layer.d_in());
        if self.rank == 0 || self.rank > rows.min(cols) {
            return Err(ModelError::InvalidRank {
                rank: self.rank,
                rows,
                cols,
            });
        }
        if self.a.shape() != [rows, self.rank] || self.b.shape() != [self.rank, cols] {
            return Err(ModelError::InvalidArchitecture(format!(
                "adapter factors {:?} x {:?} do not fit a {rows}x{cols} weight",
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }

    /// Dense `A B`.
    pub fn delta(&self) -> Tensor {
        let (d, r, k) = (self.a.rows(), self.rank, self.b.cols());
        let mut out = vec![0.0; d * k];
        for i in 0..d {
            for p in 0..r {
                let aip = self.a.at(i, p);
                for j in 0..k {
                    out[i * k + j] += aip * self.b.at(p, j);
                }
            }
        }
        Tensor::new(&[d, k], out).expect("positive dims")
    }
}

impl ModelParams {
    /// Returns a copy with rank-`rank` adapters on `layer_indices` and the
    /// base weights frozen. `A` is seeded uniform, `B` is zero, so the
    /// adapted model initially computes exactly what the base model does.
    pub fn attach_lora(&self, layer_indices: &[usize], rank: usize, seed: u64) -> Result<ModelParams> {
        let mut out = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &i in layer_indices {
            let layer = self.layers.get(i).ok_or(ModelError::InvalidLayer {
                index: i,
                layers: self.layers.len(),
            })?;
            let (rows, cols) = (layer.d_out(), layer.d_in());
            if rank == 0 || rank > rows.min(cols) {
                return Err(ModelError::InvalidRank { rank, rows, cols });
            }
            let limit = (6.0 / (rows + rank) as f64).sqrt();
            let a = (0..rows * rank).map(|_| rng.random_range(-limit..limit)).collect();
            out.adapters.insert(
                i,
                LoraAdapter {
                    a: Tensor::new(&[rows, rank], a)?,
                    b: Tensor::zeros(&[rank, cols]),
                    rank,
                    frozen_base: true,
                },
            );
        }
        Ok(out)
    }

    /// Drops all adapters; the base weights are untouched.
    pub fn detach_lora(&self) -> ModelParams {
        let mut out = self.clone();
        out.adapters.clear();
        out
    }

    /// Folds every adapter into its base weight (`W <- W + A B`).
    pub fn merge_lora(&self) -> ModelParams {
        let mut out = self.detach_lora();
        for (&i, ad) in &self.adapters {
            let delta = ad.delta();
            for (w, d) in out.layers[i].weight.data_mut().iter_mut().zip(delta.data()) {
                *w += d;
            }
        }
        out
    }
}
