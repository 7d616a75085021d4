use crate::error::{Error, Result};
use crate::layers::LayerCache;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug)]
pub struct ReluCache {
    /// `x > 0` per element.
    mask: Vec<bool>,
    shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct FlattenCache {
    shape: [usize; 4],
}

impl FlattenCache {
    pub fn new(shape: [usize; 4]) -> Self {
        Self { shape }
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> (Tensor<T>, LayerCache<T>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (
        y,
        LayerCache::Relu(ReluCache {
            mask,
            shape: x.shape().to_vec(),
        }),
    )
}

/// `grad_x = grad_y ⊙ [x > 0]`; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Real>(grad_y: &Tensor<T>, cache: &LayerCache<T>) -> Result<Tensor<T>> {
    let LayerCache::Relu(cache) = cache else {
        return Err(Error::StaleCache {
            op: "relu_backward",
            expected: "relu",
        });
    };
    if grad_y.shape() != cache.shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            left: grad_y.shape().to_vec(),
            right: cache.shape.clone(),
        });
    }
    let data = grad_y
        .data()
        .iter()
        .zip(&cache.mask)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor::new(cache.shape.clone(), data)
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = logits.dims2("softmax")?;
    if c == 0 {
        return Err(Error::invalid("softmax", "need at least one class"));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

pub fn flatten<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (n, c, h, w) = x.dims4("flatten")?;
    let y = x.clone().reshape([n, c * h * w])?;
    Ok((y, LayerCache::Flatten(FlattenCache::new([n, c, h, w]))))
}

pub fn flatten_backward<T: Real>(grad_y: &Tensor<T>, cache: &LayerCache<T>) -> Result<Tensor<T>> {
    let LayerCache::Flatten(cache) = cache else {
        return Err(Error::StaleCache {
            op: "flatten_backward",
            expected: "flatten",
        });
    };
    grad_y.clone().reshape(cache.shape)
}
