//! Forward and backward passes for the layer types the network is built from.
//!
//! Every forward pass returns a [`LayerCache`] holding what its backward
//! pass needs. Handing a backward pass the cache of a different layer kind,
//! or an upstream gradient of the wrong shape, is an error.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{flatten, flatten_backward, relu, relu_backward, softmax, FlattenCache, ReluCache};
pub use conv::{conv2d_backward, conv2d_forward, conv2d_forward_direct, Conv2DLayer, ConvCache, ConvGrads, KERNEL};
pub use dense::{dense_backward, dense_forward, DenseCache, DenseGrads, DenseLayer};
pub use pool::{maxpool_backward, maxpool_forward, pooled_extent, MaxPool2DLayer, PoolCache};

pub(crate) use conv::conv2d_backward_impl;
pub(crate) use dense::dense_backward_impl;

#[derive(Clone, Debug)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    Pool(PoolCache),
    Dense(DenseCache<T>),
    Relu(ReluCache),
    Flatten(FlattenCache),
}
