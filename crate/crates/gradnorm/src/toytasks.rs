//! Synthetic multitask regression benchmark.
//!
//! Each task maps the same input through `sigma_i * tanh((B + eps_i) x)`:
//! a base matrix `B` shared by all tasks, a per-task perturbation `eps_i`,
//! and a per-task output scale `sigma_i`. The scales are the interesting
//! knob — a larger `sigma_i` means a larger expected squared loss and larger
//! backpropagated gradients for that task.

use crate::error::{Error, Result};
use crate::linalg::{matmul_transpose_b, ElementwiseFn, Matrix, map_elementwise};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// How the second parameter of the element distributions is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleKind {
    /// `N(0, s)` means standard deviation `s` (the default reading).
    #[default]
    StdDev,
    /// `N(0, s)` means variance `s`.
    Variance,
}

impl ScaleKind {
    fn to_std(self, scale: f64) -> f64 {
        match self {
            ScaleKind::StdDev => scale,
            ScaleKind::Variance => scale.sqrt(),
        }
    }
}

/// The generated task set: everything needed to produce batches.
#[derive(Debug, Clone)]
pub struct ToyTaskSet<T> {
    base: Matrix<T>,
    perturbations: Vec<Matrix<T>>,
    /// Cached `base + perturbations[i]` per task.
    task_maps: Vec<Matrix<T>>,
    sigmas: Vec<T>,
    input_dim: usize,
    output_dim: usize,
}

impl<T: Scalar> ToyTaskSet<T> {
    /// Generate `B` (entries `N(0, base_scale)`) and one perturbation per
    /// task (entries `N(0, eps_scale)`), deterministic from the seed. Draw
    /// order is `B` first, then perturbations in task order.
    pub fn generate(
        seed: u64,
        sigmas: &[f64],
        input_dim: usize,
        output_dim: usize,
        base_scale: f64,
        eps_scale: f64,
        scale_kind: ScaleKind,
    ) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidArgument("need at least one task".into()));
        }
        for &s in sigmas {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "sigma {s} is not positive"
                )));
            }
        }
        let mut rng = Rng::new(seed);
        let base = Matrix::<T>::gaussian(
            &mut rng,
            output_dim,
            input_dim,
            0.0,
            scale_kind.to_std(base_scale),
        )?;
        let perturbations: Vec<Matrix<T>> = (0..sigmas.len())
            .map(|_| {
                Matrix::gaussian(
                    &mut rng,
                    output_dim,
                    input_dim,
                    0.0,
                    scale_kind.to_std(eps_scale),
                )
            })
            .collect::<Result<_>>()?;
        let task_maps = perturbations
            .iter()
            .map(|eps| base.add(eps))
            .collect::<Result<_>>()?;
        Ok(ToyTaskSet {
            base,
            perturbations,
            task_maps,
            sigmas: sigmas.iter().map(|&s| T::from_f64(s)).collect(),
            input_dim,
            output_dim,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.sigmas.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }

    pub fn base(&self) -> &Matrix<T> {
        &self.base
    }

    pub fn perturbation(&self, task: usize) -> &Matrix<T> {
        &self.perturbations[task]
    }

    /// Targets for given inputs: `sigma_i * tanh(x (B + eps_i)^T)` per task.
    /// A pure function of the task set and `x`.
    pub fn targets(&self, inputs: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        self.task_maps
            .iter()
            .zip(&self.sigmas)
            .map(|(map, &sigma)| {
                let pre = matmul_transpose_b(inputs, map)?;
                Ok(map_elementwise(&pre, ElementwiseFn::Tanh).scale(sigma))
            })
            .collect()
    }

    /// Draw a batch: inputs IID standard normal, targets from [`targets`].
    pub fn sample_batch(&self, rng: &mut Rng, batch_size: usize) -> Result<Batch<T>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let inputs = Matrix::gaussian(rng, batch_size, self.input_dim, 0.0, 1.0)?;
        let targets = self.targets(&inputs)?;
        Ok(Batch { inputs, targets })
    }

    /// Task indices sorted by descending `sigma^2`, the expected ordering of
    /// initial squared losses. `has_ties` flags equal scales.
    pub fn expected_initial_loss_ordering(&self) -> LossOrdering {
        let mut order: Vec<usize> = (0..self.sigmas.len()).collect();
        order.sort_by(|&a, &b| {
            let sa = self.sigmas[a] * self.sigmas[a];
            let sb = self.sigmas[b] * self.sigmas[b];
            sb.partial_cmp(&sa).expect("sigmas are finite")
        });
        let has_ties = self
            .sigmas
            .iter()
            .enumerate()
            .any(|(i, &s)| self.sigmas.iter().skip(i + 1).any(|&o| o == s));
        LossOrdering { order, has_ties }
    }
}

/// Inputs plus per-task targets for one step.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: Matrix<T>,
    pub targets: Vec<Matrix<T>>,
}

/// Ranking of tasks by expected initial loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossOrdering {
    /// Task indices, largest expected loss first.
    pub order: Vec<usize>,
    pub has_ties: bool,
}

/// Draw task scales as `|N(0, width)|`, redrawing any nonpositive value.
pub fn sample_sigmas(rng: &mut Rng, num_tasks: usize, width: f64) -> Vec<f64> {
    (0..num_tasks)
        .map(|_| loop {
            let s = rng.next_normal(0.0, width).abs();
            if s > 0.0 {
                break s;
            }
        })
        .collect()
}
