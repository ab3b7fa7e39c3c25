//! Datasets. Synthetic data is drawn once from a seed and then fixed;
//! batches cycle through the samples in order, so a training run is a pure
//! function of the dataset seed and the cell seed.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use resnet_sim::{Batch, Targets};

use crate::config::{DatasetSpec, Task};
use crate::idx::{load_idx, scalar_projection};
use crate::HarnessError;

/// A fixed in-memory dataset: inputs are `d_in x size`, targets are either
/// `d_out x size` regression values or `size` class indices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_in(&self) -> usize {
        self.inputs.nrows()
    }

    /// Output dimension a network must expose to fit these targets: the
    /// regression row count, or the number of classes (at least 2).
    pub fn d_out(&self) -> usize {
        match &self.targets {
            Targets::Regression(y) => y.nrows(),
            Targets::Classes(c) => c.iter().copied().max().map_or(2, |m| (m + 1).max(2)),
        }
    }

    /// Batch for one training step; sample indices cycle modulo the dataset
    /// size starting at `step * batch_size`.
    pub fn batch_for_step(&self, step: usize, batch_size: usize) -> Batch {
        let size = self.len();
        let start = (step * batch_size) % size;
        let cols: Vec<usize> = (0..batch_size).map(|i| (start + i) % size).collect();
        let inputs = self.inputs.select(ndarray::Axis(1), &cols);
        let targets = match &self.targets {
            Targets::Regression(y) => Targets::Regression(y.select(ndarray::Axis(1), &cols)),
            Targets::Classes(c) => Targets::Classes(cols.iter().map(|&i| c[i]).collect()),
        };
        Batch { inputs, targets }
    }

    /// Scalar `(input, target)` stream of length `steps` for the limit
    /// engines, cycling through the samples. Requires one input row and one
    /// regression target row.
    pub fn scalar_stream(&self, steps: usize) -> Result<(Vec<f64>, Vec<f64>), HarnessError> {
        let Targets::Regression(y) = &self.targets else {
            return Err(HarnessError::Config(
                "limit engines need scalar regression targets".into(),
            ));
        };
        if self.d_in() != 1 || y.nrows() != 1 {
            return Err(HarnessError::Config(
                "limit engines need one input row and one target row".into(),
            ));
        }
        let size = self.len();
        let xs = (0..steps).map(|t| self.inputs[[0, t % size]]).collect();
        let ys = (0..steps).map(|t| y[[0, t % size]]).collect();
        Ok((xs, ys))
    }

    /// Replaces the inputs by their image under one seeded random projection
    /// with `N(0, 1/d_in)` weights, yielding scalar inputs.
    pub fn project_to_scalar(&self, seed: u64) -> Dataset {
        Dataset {
            inputs: scalar_projection(&self.inputs, seed),
            targets: self.targets.clone(),
        }
    }
}

/// Draws the synthetic dataset described by `(d_in, task, size, seed)`.
///
/// Regression: `xi ~ N(0, I)`, `y = w* . xi + 0.1 eps` with `w* ~ N(0, I/d_in)`
/// drawn once, so the targets have unit variance over the inputs and an
/// irreducible noise floor. Classification: two Gaussian blobs at `+-mu`
/// (`|mu| = 1.5`, unit isotropic spread 0.5) with alternating labels.
///
/// The generator streams are fixed (`w*`/centers from stream 0, inputs from
/// stream 1, noise from stream 2), so the same seed always produces the same
/// samples regardless of dataset size ordering elsewhere.
pub fn synth_dataset(d_in: usize, task: Task, size: usize, seed: u64) -> Dataset {
    let mut structure_rng = ChaCha12Rng::seed_from_u64(seed);
    structure_rng.set_stream(0);
    let mut input_rng = ChaCha12Rng::seed_from_u64(seed);
    input_rng.set_stream(1);
    let mut noise_rng = ChaCha12Rng::seed_from_u64(seed);
    noise_rng.set_stream(2);

    match task {
        Task::Regression => {
            let w_star: Array1<f64> = Array1::from_shape_fn(d_in, |_| {
                structure_rng.sample::<f64, _>(StandardNormal) / (d_in as f64).sqrt()
            });
            let inputs = Array2::from_shape_fn((d_in, size), |_| {
                input_rng.sample::<f64, _>(StandardNormal)
            });
            let mut y = Array2::zeros((1, size));
            for j in 0..size {
                let clean = w_star.dot(&inputs.slice(s![.., j]));
                let eps = noise_rng.sample::<f64, _>(StandardNormal);
                y[[0, j]] = clean + 0.1 * eps;
            }
            Dataset { inputs, targets: Targets::Regression(y) }
        }
        Task::Classification => {
            let mut mu: Array1<f64> = Array1::from_shape_fn(d_in, |_| {
                structure_rng.sample::<f64, _>(StandardNormal)
            });
            let norm = mu.dot(&mu).sqrt();
            if norm > 0.0 {
                mu.mapv_inplace(|v| 1.5 * v / norm);
            }
            let mut inputs = Array2::zeros((d_in, size));
            let mut labels = Vec::with_capacity(size);
            for j in 0..size {
                let class = j % 2;
                let sign = if class == 0 { 1.0 } else { -1.0 };
                for i in 0..d_in {
                    let eps = input_rng.sample::<f64, _>(StandardNormal);
                    inputs[[i, j]] = sign * mu[i] + 0.5 * eps;
                }
                labels.push(class);
            }
            Dataset { inputs, targets: Targets::Classes(labels) }
        }
    }
}

/// Materializes the dataset named by a [`DatasetSpec`].
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, HarnessError> {
    match spec {
        DatasetSpec::Synthetic { d_in, task, size, seed } => {
            Ok(synth_dataset(*d_in, *task, *size, *seed))
        }
        DatasetSpec::Idx { images, labels, mean, std, .. } => {
            let pair = load_idx(images, labels)?;
            let mut inputs = pair.images;
            inputs.mapv_inplace(|v| (v - mean) / std);
            Ok(Dataset { inputs, targets: Targets::Classes(pair.labels) })
        }
    }
}
