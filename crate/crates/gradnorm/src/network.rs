//! Multitask MLP: a fully-connected ReLU trunk shared by all tasks, with one
//! affine head per task.
//!
//! Forward passes cache every pre- and post-activation so backward passes
//! can be replayed against them. Gradients come in two flavors:
//!
//! * [`MlpModel::backward`] produces the gradient of the weighted total loss
//!   (one fused sweep) together with each task's unweighted gradient at the
//!   designated shared layer `W` — everything a balancing step needs.
//! * [`MlpModel::backward_per_task`] runs one full single-task sweep per
//!   task over the same cache, yielding complete per-task parameter
//!   gradients. It is the second route for checking gradient linearity.

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// One affine layer: `y = x * weight + bias`, weight stored input-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Affine<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Affine {
            weight: Matrix::zeros(input, output),
            bias: vec![T::zero(); output],
        }
    }

    fn init(rng: &mut Rng, input: usize, output: usize) -> Self {
        // Scaled-Gaussian init, std = sqrt(2 / fan_in), zero bias.
        let std = (2.0 / input as f64).sqrt();
        Affine {
            weight: Matrix::gaussian(rng, input, output, 0.0, std)
                .expect("std is nonnegative by construction"),
            bias: vec![T::zero(); output],
        }
    }

    fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = matmul(x, &self.weight)?;
        y.add_row_vector(&self.bias);
        Ok(y)
    }
}

/// Shared-trunk multitask model.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    trunk: Vec<Affine<T>>,
    heads: Vec<Affine<T>>,
    shared_layer_index: usize,
    input_dim: usize,
    output_dim: usize,
}

impl<T: Scalar> MlpModel<T> {
    /// Build a `depth`-layer ReLU trunk (`input_dim -> hidden -> ... ->
    /// hidden`) with `num_tasks` affine heads (`hidden -> output_dim`).
    /// Deterministic given the generator state; the shared layer defaults to
    /// the last trunk layer.
    pub fn init(
        rng: &mut Rng,
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        output_dim: usize,
        num_tasks: usize,
    ) -> Self {
        assert!(
            input_dim > 0 && hidden_dim > 0 && depth > 0 && output_dim > 0 && num_tasks > 0,
            "all model dimensions must be positive"
        );
        let mut trunk = Vec::with_capacity(depth);
        let mut fan_in = input_dim;
        for _ in 0..depth {
            trunk.push(Affine::init(rng, fan_in, hidden_dim));
            fan_in = hidden_dim;
        }
        let heads = (0..num_tasks)
            .map(|_| Affine::init(rng, hidden_dim, output_dim))
            .collect();
        MlpModel {
            trunk,
            heads,
            shared_layer_index: depth - 1,
            input_dim,
            output_dim,
        }
    }

    /// Assemble a model from explicit layers; shapes must chain from
    /// `input_dim` through the trunk to every head.
    pub fn from_parts(
        trunk: Vec<Affine<T>>,
        heads: Vec<Affine<T>>,
        shared_layer_index: usize,
    ) -> Result<Self> {
        if trunk.is_empty() || heads.is_empty() {
            return Err(Error::InvalidArgument(
                "model needs at least one trunk layer and one head".into(),
            ));
        }
        if shared_layer_index >= trunk.len() {
            return Err(Error::InvalidArgument(format!(
                "shared layer index {shared_layer_index} out of range for {} trunk layers",
                trunk.len()
            )));
        }
        for w in trunk.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::ShapeMismatch {
                    op: "from_parts",
                    lhs: w[0].weight.shape(),
                    rhs: w[1].weight.shape(),
                });
            }
        }
        let trunk_out = trunk.last().unwrap().weight.cols();
        let output_dim = heads[0].weight.cols();
        for h in &heads {
            if h.weight.rows() != trunk_out || h.weight.cols() != output_dim {
                return Err(Error::ShapeMismatch {
                    op: "from_parts",
                    lhs: (trunk_out, output_dim),
                    rhs: h.weight.shape(),
                });
            }
        }
        let input_dim = trunk[0].weight.rows();
        Ok(MlpModel {
            trunk,
            heads,
            shared_layer_index,
            input_dim,
            output_dim,
        })
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn depth(&self) -> usize {
        self.trunk.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn shared_layer_index(&self) -> usize {
        self.shared_layer_index
    }

    /// Re-point the norm-measurement layer `W`. Must address a trunk layer.
    pub fn set_shared_layer_index(&mut self, index: usize) -> Result<()> {
        if index >= self.trunk.len() {
            return Err(Error::InvalidArgument(format!(
                "shared layer index {index} out of range for {} trunk layers",
                self.trunk.len()
            )));
        }
        self.shared_layer_index = index;
        Ok(())
    }

    pub fn trunk_layer(&self, l: usize) -> &Affine<T> {
        &self.trunk[l]
    }

    pub fn head(&self, i: usize) -> &Affine<T> {
        &self.heads[i]
    }

    /// Replace a head (shapes must match the old one).
    pub fn set_head(&mut self, i: usize, head: Affine<T>) -> Result<()> {
        if head.weight.shape() != self.heads[i].weight.shape()
            || head.bias.len() != self.heads[i].bias.len()
        {
            return Err(Error::ShapeMismatch {
                op: "set_head",
                lhs: self.heads[i].weight.shape(),
                rhs: head.weight.shape(),
            });
        }
        self.heads[i] = head;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(|a| a.weight.as_slice().len() + a.bias.len())
            .sum()
    }

    /// Parameter blocks in a fixed order (trunk weights and biases, then
    /// head weights and biases); [`ModelGradients::grad_slices`] matches it.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(2 * (self.trunk.len() + self.heads.len()));
        for layer in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    /// Forward pass over a batch (rows are samples). Returns one prediction
    /// matrix per task plus the cache for backward passes.
    pub fn forward(&self, x: &Matrix<T>) -> Result<(Vec<Matrix<T>>, BatchCache<T>)> {
        if x.cols() != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_dim),
            });
        }
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut post = Vec::with_capacity(self.trunk.len());
        let mut activation = x;
        for layer in &self.trunk {
            let z = layer.forward(activation)?;
            let a = z.map(|v| if v > T::zero() { v } else { T::zero() });
            pre.push(z);
            post.push(a);
            activation = post.last().unwrap();
        }
        let preds = self
            .heads
            .iter()
            .map(|h| h.forward(activation))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            preds,
            BatchCache {
                input: x.clone(),
                pre,
                post,
                batch: x.rows(),
            },
        ))
    }

    fn validate_cache(&self, cache: &BatchCache<T>) -> Result<()> {
        let ok = cache.input.cols() == self.input_dim
            && cache.pre.len() == self.trunk.len()
            && cache.post.len() == self.trunk.len()
            && cache
                .pre
                .iter()
                .zip(&self.trunk)
                .all(|(z, l)| z.shape() == (cache.batch, l.weight.cols()))
            && cache.input.rows() == cache.batch;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "cache does not match this model (stale or from another forward pass)".into(),
            ))
        }
    }

    fn validate_residuals(&self, cache: &BatchCache<T>, residuals: &[Matrix<T>]) -> Result<()> {
        if residuals.len() != self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} residual matrices, got {}",
                self.heads.len(),
                residuals.len()
            )));
        }
        for r in residuals {
            if r.shape() != (cache.batch, self.output_dim) {
                return Err(Error::ShapeMismatch {
                    op: "backward",
                    lhs: r.shape(),
                    rhs: (cache.batch, self.output_dim),
                });
            }
        }
        Ok(())
    }

    /// Backward pass for the weighted total loss `sum_i w_i L_i`.
    ///
    /// `residuals[i]` is `dL_i/dpred_i` for the unweighted task loss. The
    /// returned [`ModelGradients`] is the full gradient of the weighted sum;
    /// [`TaskGradients`] carries each task's unweighted loss gradient at the
    /// shared layer, from which weighted norms follow by linearity.
    pub fn backward(
        &self,
        cache: &BatchCache<T>,
        residuals: &[Matrix<T>],
        task_weights: &[T],
    ) -> Result<(ModelGradients<T>, TaskGradients<T>)> {
        self.validate_cache(cache)?;
        self.validate_residuals(cache, residuals)?;
        if task_weights.len() != self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} task weights, got {}",
                self.heads.len(),
                task_weights.len()
            )));
        }

        let a_last = cache.post.last().unwrap();
        let hidden = a_last.cols();
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut task_entry = Vec::with_capacity(self.heads.len()); // dL_i/da_last, unweighted
        let mut combined = Matrix::zeros(cache.batch, hidden);
        for ((head, res), &w) in self.heads.iter().zip(residuals).zip(task_weights) {
            let weighted_res = res.scale(w);
            head_grads.push(AffineGrads {
                weight: matmul_transpose_a(a_last, &weighted_res)?,
                bias: weighted_res.column_sums(),
            });
            let entry = matmul_transpose_b(res, &head.weight)?;
            combined.add_scaled(&entry, w)?;
            task_entry.push(entry);
        }

        // Unweighted per-task gradients at the shared layer W.
        let mut shared = Vec::with_capacity(self.heads.len());
        for entry in &task_entry {
            shared.push(self.descend_to_layer(cache, entry.clone(), self.shared_layer_index)?);
        }

        let trunk_grads = self.trunk_backward(cache, combined)?;
        Ok((
            ModelGradients {
                trunk: trunk_grads,
                heads: head_grads,
            },
            TaskGradients {
                shared,
                shared_layer_index: self.shared_layer_index,
            },
        ))
    }

    /// Gradient of the weighted total loss only, skipping the per-task
    /// shared-layer work. Used on steps where no norms are consumed.
    pub fn backward_total(
        &self,
        cache: &BatchCache<T>,
        residuals: &[Matrix<T>],
        task_weights: &[T],
    ) -> Result<ModelGradients<T>> {
        self.validate_cache(cache)?;
        self.validate_residuals(cache, residuals)?;
        if task_weights.len() != self.heads.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} task weights, got {}",
                self.heads.len(),
                task_weights.len()
            )));
        }
        let a_last = cache.post.last().unwrap();
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut combined = Matrix::zeros(cache.batch, a_last.cols());
        for ((head, res), &w) in self.heads.iter().zip(residuals).zip(task_weights) {
            let weighted_res = res.scale(w);
            head_grads.push(AffineGrads {
                weight: matmul_transpose_a(a_last, &weighted_res)?,
                bias: weighted_res.column_sums(),
            });
            combined.add_scaled(&matmul_transpose_b(res, &head.weight)?, w)?;
        }
        let trunk_grads = self.trunk_backward(cache, combined)?;
        Ok(ModelGradients {
            trunk: trunk_grads,
            heads: head_grads,
        })
    }

    /// Full single-task gradients: one backward sweep per task over the same
    /// cache, heads other than the task's holding zero gradients.
    pub fn backward_per_task(
        &self,
        cache: &BatchCache<T>,
        residuals: &[Matrix<T>],
    ) -> Result<Vec<ModelGradients<T>>> {
        self.validate_cache(cache)?;
        self.validate_residuals(cache, residuals)?;
        let a_last = cache.post.last().unwrap();
        let mut out = Vec::with_capacity(self.heads.len());
        for (i, res) in residuals.iter().enumerate() {
            let mut head_grads: Vec<AffineGrads<T>> = self
                .heads
                .iter()
                .map(|h| AffineGrads {
                    weight: Matrix::zeros(h.weight.rows(), h.weight.cols()),
                    bias: vec![T::zero(); h.bias.len()],
                })
                .collect();
            head_grads[i] = AffineGrads {
                weight: matmul_transpose_a(a_last, res)?,
                bias: res.column_sums(),
            };
            let entry = matmul_transpose_b(res, &self.heads[i].weight)?;
            let trunk = self.trunk_backward(cache, entry)?;
            out.push(ModelGradients {
                trunk,
                heads: head_grads,
            });
        }
        Ok(out)
    }

    /// Propagate a gradient at the trunk output down to `target`, returning
    /// the weight gradient of that layer only.
    fn descend_to_layer(
        &self,
        cache: &BatchCache<T>,
        mut grad: Matrix<T>,
        target: usize,
    ) -> Result<Matrix<T>> {
        for l in (target..self.trunk.len()).rev() {
            let gz = grad.zip_map(&cache.pre[l], |g, z| if z > T::zero() { g } else { T::zero() })?;
            if l == target {
                return matmul_transpose_a(self.layer_input(cache, l), &gz);
            }
            grad = matmul_transpose_b(&gz, &self.trunk[l].weight)?;
        }
        unreachable!("target index validated against trunk length")
    }

    /// Full trunk sweep from a gradient at the trunk output.
    fn trunk_backward(
        &self,
        cache: &BatchCache<T>,
        mut grad: Matrix<T>,
    ) -> Result<Vec<AffineGrads<T>>> {
        let depth = self.trunk.len();
        let mut grads: Vec<Option<AffineGrads<T>>> = (0..depth).map(|_| None).collect();
        for l in (0..depth).rev() {
            let gz = grad.zip_map(&cache.pre[l], |g, z| if z > T::zero() { g } else { T::zero() })?;
            grads[l] = Some(AffineGrads {
                weight: matmul_transpose_a(self.layer_input(cache, l), &gz)?,
                bias: gz.column_sums(),
            });
            if l > 0 {
                grad = matmul_transpose_b(&gz, &self.trunk[l].weight)?;
            }
        }
        Ok(grads.into_iter().map(|g| g.unwrap()).collect())
    }

    fn layer_input<'a>(&self, cache: &'a BatchCache<T>, l: usize) -> &'a Matrix<T> {
        if l == 0 {
            &cache.input
        } else {
            &cache.post[l - 1]
        }
    }
}

/// Activations recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache<T> {
    input: Matrix<T>,
    pre: Vec<Matrix<T>>,
    post: Vec<Matrix<T>>,
    batch: usize,
}

impl<T> BatchCache<T> {
    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// Gradient of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

/// Gradients for every model parameter, in model layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients<T> {
    pub trunk: Vec<AffineGrads<T>>,
    pub heads: Vec<AffineGrads<T>>,
}

impl<T: Scalar> ModelGradients<T> {
    /// Blocks in the same order as [`MlpModel::param_slices_mut`].
    pub fn grad_slices(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(2 * (self.trunk.len() + self.heads.len()));
        for layer in self.trunk.iter().chain(self.heads.iter()) {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
        }
        out
    }

    /// `self += c * other`, block by block.
    pub fn add_scaled(&mut self, other: &ModelGradients<T>, c: T) -> Result<()> {
        if self.trunk.len() != other.trunk.len() || self.heads.len() != other.heads.len() {
            return Err(Error::InvalidArgument(
                "gradient layouts do not match".into(),
            ));
        }
        for (a, b) in self
            .trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .zip(other.trunk.iter().chain(other.heads.iter()))
        {
            a.weight.add_scaled(&b.weight, c)?;
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += c * y;
            }
        }
        Ok(())
    }

    pub fn zeros_like(model: &MlpModel<T>) -> Self {
        ModelGradients {
            trunk: model
                .trunk
                .iter()
                .map(|l| AffineGrads {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
            heads: model
                .heads
                .iter()
                .map(|l| AffineGrads {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }
}

/// Per-task unweighted loss gradients at the shared layer.
#[derive(Debug, Clone)]
pub struct TaskGradients<T> {
    shared: Vec<Matrix<T>>,
    shared_layer_index: usize,
}

impl<T: Scalar> TaskGradients<T> {
    /// `d L_i / d W` for the unweighted task loss.
    pub fn shared_grad(&self, task: usize) -> &Matrix<T> {
        &self.shared[task]
    }

    pub fn shared_layer_index(&self) -> usize {
        self.shared_layer_index
    }

    pub fn num_tasks(&self) -> usize {
        self.shared.len()
    }

    /// `||d L_i / d W||_2` per task.
    pub fn unweighted_norms(&self) -> Vec<T> {
        self.shared.iter().map(|g| g.l2_norm()).collect()
    }
}

/// Gradient norm of the weighted single-task loss at the shared layer:
/// `G_i = w_i * ||d L_i / d W||`, using linearity of the loss in the weight.
pub fn shared_layer_grad_norm<T: Scalar>(
    task_grads: &TaskGradients<T>,
    task: usize,
    weight: T,
) -> T {
    debug_assert!(weight >= T::zero(), "task weights are nonnegative");
    weight * task_grads.shared[task].l2_norm()
}

/// Mean over batch and output dimensions of the squared residual.
pub fn squared_loss<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "squared_loss",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    let n = T::from_f64((pred.rows() * pred.cols()) as f64);
    let total = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<T>();
    Ok(total / n)
}

/// `dL/dpred` for [`squared_loss`]: `2 (pred - target) / (batch * outputs)`.
pub fn squared_loss_residual<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<Matrix<T>> {
    let n = T::from_f64((pred.rows() * pred.cols()) as f64);
    let two = T::from_f64(2.0);
    Ok(pred.sub(target)?.map(|d| two * d / n))
}
