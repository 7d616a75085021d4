//! 3×3 convolution, stride 1, one pixel of zero padding on every border.
//!
//! The forward pass lowers each sample to a patch matrix and runs a single
//! matrix product. [`conv2d_forward_direct`] is the nested-loop reference;
//! both accumulate `bias, then Σ over (channel, row, col)` in the same
//! order, so they agree bit for bit.

use crate::error::{Error, Result};
use crate::layers::LayerCache;
use crate::rng::{rng_normal, SeededRng};
use crate::tensor::{gemm_acc, transpose_into, Real, Tensor};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2DLayer<T> {
    /// `out_ch × in_ch × 3 × 3`
    pub weights: Tensor<T>,
    /// `out_ch`
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input_shape: [usize; 4],
    /// Per-sample patch matrices, `N × (C·9) × (H·W)` laid end to end.
    cols: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Tensor<T>,
}

impl<T: Real> Conv2DLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (o, _, kh, kw) = weights.dims4("Conv2DLayer::new")?;
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::invalid(
                "Conv2DLayer::new",
                format!("kernel must be 3x3, got {kh}x{kw}"),
            ));
        }
        if bias.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "Conv2DLayer::new",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            weights: Tensor::zeros([out_ch, in_ch, KERNEL, KERNEL]),
            bias: Tensor::zeros([out_ch]),
        }
    }

    /// He-normal weights (`σ = √(2 / fan_in)`, `fan_in = in_ch·9`), zero bias.
    pub fn he(in_ch: usize, out_ch: usize, rng: &mut SeededRng) -> Self {
        let fan_in = (in_ch * TAPS) as f64;
        let w = rng_normal(rng, out_ch * in_ch * TAPS, 0.0, (2.0 / fan_in).sqrt())
            .and_then(|t| t.reshape([out_ch, in_ch, KERNEL, KERNEL]))
            .expect("stddev is positive");
        Self {
            weights: w,
            bias: Tensor::zeros([out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4(op)?;
        if dims.1 != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op,
                left: x.shape().to_vec(),
                right: self.weights.shape().to_vec(),
            });
        }
        Ok(dims)
    }
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    debug_assert_eq!(cols.len(), c * TAPS * hw);
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for u in 0..KERNEL {
            for v in 0..KERNEL {
                let row = &mut cols[((ch * KERNEL + u) * KERNEL + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let sj = j as isize + v as isize - 1;
                        *d = if sj < 0 || sj >= w as isize {
                            T::zero()
                        } else {
                            src[sj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_acc<T: Real>(cols: &[T], c: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for u in 0..KERNEL {
            for v in 0..KERNEL {
                let row = &cols[((ch * KERNEL + u) * KERNEL + v) * hw..][..hw];
                for i in 0..h {
                    let si = i as isize + u as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &row[i * w..(i + 1) * w];
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    for (j, &g) in src.iter().enumerate() {
                        let sj = j as isize + v as isize - 1;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] = dst[sj as usize] + g;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, layer: &Conv2DLayer<T>) -> Result<(Tensor<T>, LayerCache<T>)> {
    let (n, c, h, w) = layer.check_input(x, "conv2d_forward")?;
    let o = layer.out_channels();
    let hw = h * w;
    let k = c * TAPS;
    let mut cols = vec![T::zero(); n * k * hw];
    let mut y = vec![T::zero(); n * o * hw];
    for s in 0..n {
        let xs = &x.data()[s * c * hw..(s + 1) * c * hw];
        let cs = &mut cols[s * k * hw..(s + 1) * k * hw];
        im2col(xs, c, h, w, cs);
        let ys = &mut y[s * o * hw..(s + 1) * o * hw];
        for (plane, &b) in ys.chunks_exact_mut(hw.max(1)).zip(layer.bias.data()) {
            plane.fill(b);
        }
        gemm_acc(layer.weights.data(), cs, ys, o, k, hw);
    }
    let y = Tensor::new([n, o, h, w], y)?;
    let cache = LayerCache::Conv(ConvCache {
        input_shape: [n, c, h, w],
        cols,
    });
    Ok((y, cache))
}

/// Reference forward pass: explicit loops over the zero-padded input.
pub fn conv2d_forward_direct<T: Real>(x: &Tensor<T>, layer: &Conv2DLayer<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = layer.check_input(x, "conv2d_forward_direct")?;
    let o = layer.out_channels();
    let xd = x.data();
    let wd = layer.weights.data();
    let mut y = Tensor::zeros([n, o, h, w]);
    let yd = y.data_mut();
    for s in 0..n {
        for oc in 0..o {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = layer.bias.data()[oc];
                    for ic in 0..c {
                        for u in 0..KERNEL {
                            for v in 0..KERNEL {
                                let si = i as isize + u as isize - 1;
                                let sj = j as isize + v as isize - 1;
                                let xv = if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                    T::zero()
                                } else {
                                    xd[((s * c + ic) * h + si as usize) * w + sj as usize]
                                };
                                acc = acc + wd[((oc * c + ic) * KERNEL + u) * KERNEL + v] * xv;
                            }
                        }
                    }
                    yd[((s * o + oc) * h + i) * w + j] = acc;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of the convolution. `want_input_grad = false` skips `grad_x`
/// (returned as zeros), which the first layer of a network never needs.
pub(crate) fn conv2d_backward_impl<T: Real>(
    grad_y: &Tensor<T>,
    cache: &LayerCache<T>,
    layer: &Conv2DLayer<T>,
    want_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let LayerCache::Conv(cache) = cache else {
        return Err(Error::StaleCache {
            op: "conv2d_backward",
            expected: "conv2d_forward",
        });
    };
    let [n, c, h, w] = cache.input_shape;
    let o = layer.out_channels();
    if grad_y.shape() != [n, o, h, w] || layer.in_channels() != c {
        return Err(Error::ShapeMismatch {
            op: "conv2d_backward",
            left: grad_y.shape().to_vec(),
            right: vec![n, o, h, w],
        });
    }
    let hw = h * w;
    let k = c * TAPS;
    let gy = grad_y.data();

    let mut grad_b = vec![T::zero(); o];
    let mut grad_w = vec![T::zero(); o * k];
    let mut grad_x = vec![T::zero(); n * c * hw];

    let mut w_t = vec![T::zero(); k * o];
    transpose_into(layer.weights.data(), o, k, &mut w_t);
    let mut cols_t = vec![T::zero(); hw * k];
    let mut grad_cols = vec![T::zero(); k * hw];

    for s in 0..n {
        let gys = &gy[s * o * hw..(s + 1) * o * hw];
        for (gb, plane) in grad_b.iter_mut().zip(gys.chunks_exact(hw.max(1))) {
            for &g in plane {
                *gb = *gb + g;
            }
        }
        let cs = &cache.cols[s * k * hw..(s + 1) * k * hw];
        transpose_into(cs, k, hw, &mut cols_t);
        gemm_acc(gys, &cols_t, &mut grad_w, o, hw, k);

        if want_input_grad {
            grad_cols.fill(T::zero());
            gemm_acc(&w_t, gys, &mut grad_cols, k, o, hw);
            col2im_acc(&grad_cols, c, h, w, &mut grad_x[s * c * hw..(s + 1) * c * hw]);
        }
    }

    Ok(ConvGrads {
        grad_x: Tensor::new([n, c, h, w], grad_x)?,
        grad_w: Tensor::new(layer.weights.shape().to_vec(), grad_w)?,
        grad_b: Tensor::new([o], grad_b)?,
    })
}

pub fn conv2d_backward<T: Real>(
    grad_y: &Tensor<T>,
    cache: &LayerCache<T>,
    layer: &Conv2DLayer<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(grad_y, cache, layer, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_kernel() -> Conv2DLayer<f64> {
        let mut l = Conv2DLayer::zeros(1, 1);
        l.weights.data_mut()[4] = 1.0;
        l
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let n = shape.iter().product();
        rng_normal(&mut SeededRng::new(seed), n, 0.0, 1.0)
            .unwrap()
            .reshape(shape)
            .unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = random([2, 1, 5, 4], 1);
        let (y, _) = conv2d_forward(&x, &delta_kernel()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut l = Conv2DLayer::<f64>::zeros(2, 3);
        l.bias = Tensor::from_f64([3], &[0.5, -1.0, 2.0]).unwrap();
        let (y, _) = conv2d_forward(&random([1, 2, 4, 4], 2), &l).unwrap();
        for (oc, plane) in y.data().chunks(16).enumerate() {
            assert!(plane.iter().all(|&v| v == l.bias.data()[oc]));
        }
    }

    #[test]
    fn all_ones_kernel_on_ramp() {
        let x = Tensor::<f64>::from_f64([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let l = Conv2DLayer::new(Tensor::full([1, 1, 3, 3], 1.0), Tensor::zeros([1])).unwrap();
        let (y, _) = conv2d_forward(&x, &l).unwrap();
        assert_eq!(y.data()[4], 45.0);
        assert_eq!(y.data()[0], 12.0);
        assert_eq!(y, conv2d_forward_direct(&x, &l).unwrap());
    }

    #[test]
    fn lowered_path_matches_direct_bit_for_bit() {
        let mut rng = SeededRng::new(11);
        let l = Conv2DLayer::<f64>::he(3, 4, &mut rng);
        let mut l = l;
        l.bias = rng_normal(&mut rng, 4, 0.0, 1.0).unwrap();
        let x = random([2, 3, 7, 5], 12);
        let (fast, _) = conv2d_forward(&x, &l).unwrap();
        let slow = conv2d_forward_direct(&x, &l).unwrap();
        assert_eq!(fast, slow);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let l = Conv2DLayer::<f64>::zeros(2, 1);
        assert!(matches!(
            conv2d_forward(&random([1, 3, 4, 4], 0), &l),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeededRng::new(3);
        let l = Conv2DLayer::<f64>::he(2, 3, &mut rng);
        let x = random([2, 2, 4, 4], 4);
        let (y, cache) = conv2d_forward(&x, &l).unwrap();
        let g = conv2d_backward(&Tensor::zeros(y.shape().to_vec()), &cache, &l).unwrap();
        assert!(g.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_w.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_b.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_delta_passes_gradient_through() {
        let x = Tensor::<f64>::from_f64([1, 1, 1, 1], &[3.0]).unwrap();
        let l = delta_kernel();
        let (_, cache) = conv2d_forward(&x, &l).unwrap();
        let gy = Tensor::from_f64([1, 1, 1, 1], &[-2.5]).unwrap();
        let g = conv2d_backward(&gy, &cache, &l).unwrap();
        assert_eq!(g.grad_x, gy);
        assert_eq!(g.grad_b.data(), &[-2.5]);
        // Only the centre tap sees the pixel.
        assert_eq!(g.grad_w.data()[4], -7.5);
    }

    #[test]
    fn wrong_cache_kind_rejected() {
        let l = delta_kernel();
        let cache = LayerCache::<f64>::Flatten(crate::layers::FlattenCache::new([1, 1, 2, 2]));
        assert!(matches!(
            conv2d_backward(&Tensor::zeros([1, 1, 2, 2]), &cache, &l),
            Err(Error::StaleCache { .. })
        ));
    }

    #[test]
    fn grad_shape_must_match_forward() {
        let l = delta_kernel();
        let (_, cache) = conv2d_forward(&random([1, 1, 3, 3], 5), &l).unwrap();
        assert!(conv2d_backward(&Tensor::zeros([1, 1, 2, 3]), &cache, &l).is_err());
    }
}
