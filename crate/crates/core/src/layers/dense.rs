use crate::error::{Error, Result};
use crate::layers::LayerCache;
use crate::rng::{rng_normal, SeededRng};
use crate::tensor::{gemm_acc, matmul, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `in × out`
    pub weights: Tensor<T>,
    /// `out`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

impl<T: Real> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, out) = weights.dims2("DenseLayer::new")?;
        if bias.shape() != [out] {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::new",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Tensor::zeros([inputs, outputs]),
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn he(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let w = rng_normal(rng, inputs * outputs, 0.0, (2.0 / inputs as f64).sqrt())
            .and_then(|t| t.reshape([inputs, outputs]))
            .expect("stddev is positive");
        Self {
            weights: w,
            bias: Tensor::zeros([outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// `y = x·W + b`, bias broadcast over rows.
pub fn dense_forward<T: Real>(x: &Tensor<T>, layer: &DenseLayer<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (_, width) = x.dims2("dense_forward")?;
    if width != layer.inputs() {
        return Err(Error::ShapeMismatch {
            op: "dense_forward",
            left: x.shape().to_vec(),
            right: layer.weights.shape().to_vec(),
        });
    }
    let mut y = matmul(x, &layer.weights)?;
    let out = layer.outputs();
    for row in y.data_mut().chunks_exact_mut(out.max(1)) {
        for (v, &b) in row.iter_mut().zip(layer.bias.data()) {
            *v = *v + b;
        }
    }
    Ok((y, LayerCache::Dense(DenseCache { input: x.clone() })))
}

pub(crate) fn dense_backward_impl<T: Real>(
    grad_y: &Tensor<T>,
    cache: &LayerCache<T>,
    layer: &DenseLayer<T>,
    want_input_grad: bool,
) -> Result<DenseGrads<T>> {
    let LayerCache::Dense(cache) = cache else {
        return Err(Error::StaleCache {
            op: "dense_backward",
            expected: "dense_forward",
        });
    };
    let (n, inputs) = cache.input.dims2("dense_backward")?;
    let out = layer.outputs();
    if grad_y.shape() != [n, out] || inputs != layer.inputs() {
        return Err(Error::ShapeMismatch {
            op: "dense_backward",
            left: grad_y.shape().to_vec(),
            right: vec![n, out],
        });
    }

    let mut grad_b = vec![T::zero(); out];
    for row in grad_y.data().chunks_exact(out.max(1)) {
        for (gb, &g) in grad_b.iter_mut().zip(row) {
            *gb = *gb + g;
        }
    }

    let x_t = cache.input.transpose2()?;
    let mut grad_w = vec![T::zero(); inputs * out];
    gemm_acc(x_t.data(), grad_y.data(), &mut grad_w, inputs, n, out);

    let grad_x = if want_input_grad {
        matmul(grad_y, &layer.weights.transpose2()?)?
    } else {
        Tensor::zeros([n, inputs])
    };

    Ok(DenseGrads {
        grad_x,
        grad_w: Tensor::new([inputs, out], grad_w)?,
        grad_b: Tensor::new([out], grad_b)?,
    })
}

/// `grad_x = grad_y·Wᵀ`, `grad_w = xᵀ·grad_y`, `grad_b` = column sums.
pub fn dense_backward<T: Real>(
    grad_y: &Tensor<T>,
    cache: &LayerCache<T>,
    layer: &DenseLayer<T>,
) -> Result<DenseGrads<T>> {
    dense_backward_impl(grad_y, cache, layer, true)
}
