use crate::error::{Error, Result};
use crate::layers::LayerCache;
use crate::tensor::{Real, Tensor};

/// 2×2 max pooling, stride 2. Odd extents are floored: the last row or
/// column is dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaxPool2DLayer;

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: [usize; 4],
    /// Flat input index of the winning element for every output element.
    argmax: Vec<usize>,
}

pub fn pooled_extent(extent: usize) -> usize {
    extent / 2
}

pub fn maxpool_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (n, c, h, w) = x.dims4("maxpool_forward")?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    if oh == 0 || ow == 0 {
        return Err(Error::invalid(
            "maxpool_forward",
            format!("input {h}x{w} pools to an empty {oh}x{ow} map"),
        ));
    }
    let xd = x.data();
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                // Row-major scan; strict `>` keeps the first maximum.
                let mut best = base + (2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let y = Tensor::new([n, c, oh, ow], y)?;
    Ok((
        y,
        LayerCache::Pool(PoolCache {
            input_shape: [n, c, h, w],
            argmax,
        }),
    ))
}

pub fn maxpool_backward<T: Real>(grad_y: &Tensor<T>, cache: &LayerCache<T>) -> Result<Tensor<T>> {
    let LayerCache::Pool(cache) = cache else {
        return Err(Error::StaleCache {
            op: "maxpool_backward",
            expected: "maxpool_forward",
        });
    };
    let [n, c, h, w] = cache.input_shape;
    let expected = [n, c, pooled_extent(h), pooled_extent(w)];
    if grad_y.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "maxpool_backward",
            left: grad_y.shape().to_vec(),
            right: expected.to_vec(),
        });
    }
    let mut gx = vec![T::zero(); n * c * h * w];
    for (&idx, &g) in cache.argmax.iter().zip(grad_y.data()) {
        gx[idx] = gx[idx] + g;
    }
    Tensor::new([n, c, h, w], gx)
}
