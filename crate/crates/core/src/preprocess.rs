//! Image preparation: grayscale conversion, 3×3 median denoising, Laplacian
//! edge enhancement, bilinear resizing, augmentation and normalization.
//!
//! Neighbourhood filters use replicate padding: pixels beyond the border
//! take the value of the nearest edge pixel.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Single-channel 8-bit image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

/// Interleaved 8-bit image with an arbitrary channel count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("GrayImage::new", "extents must be positive"));
        }
        if pixels.len() != height * width {
            return Err(Error::invalid(
                "GrayImage::new",
                format!("{height}x{width} image needs {} pixels, got {}", height * width, pixels.len()),
            ));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("positive extents")
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let pixels = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, pixels).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Pixel lookup with replicate padding.
    #[inline]
    fn clamped(&self, row: isize, col: isize) -> u8 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.pixels[r * self.width + c]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// ITU-R 601 luma: `round(0.299 R + 0.587 G + 0.114 B)`. One-channel
/// images pass through unchanged.
pub fn to_grayscale(img: &ChannelImage) -> Result<GrayImage> {
    match img.channels {
        1 => GrayImage::new(img.height, img.width, img.data.clone()),
        3 => {
            if img.data.len() != img.height * img.width * 3 {
                return Err(Error::invalid("to_grayscale", "pixel buffer does not match extents"));
            }
            let pixels = img
                .data
                .chunks_exact(3)
                .map(|px| {
                    let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                    y.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            GrayImage::new(img.height, img.width, pixels)
        }
        n => Err(Error::invalid(
            "to_grayscale",
            format!("expected 1 or 3 channels, got {n}"),
        )),
    }
}

pub fn median_filter_3x3(img: &GrayImage) -> GrayImage {
    let mut out = Vec::with_capacity(img.pixels.len());
    let mut window = [0u8; 9];
    for r in 0..img.height as isize {
        for c in 0..img.width as isize {
            let mut k = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    window[k] = img.clamped(r + dr, c + dc);
                    k += 1;
                }
            }
            // Partial selection is enough for the 5th order statistic.
            let (_, median, _) = window.select_nth_unstable(4);
            out.push(*median);
        }
    }
    GrayImage {
        height: img.height,
        width: img.width,
        pixels: out,
    }
}

/// Signed response of the 4-neighbour Laplacian `[[0,-1,0],[-1,4,-1],[0,-1,0]]`.
pub fn laplacian(img: &GrayImage) -> Vec<i32> {
    let mut out = Vec::with_capacity(img.pixels.len());
    for r in 0..img.height as isize {
        for c in 0..img.width as isize {
            let centre = img.clamped(r, c) as i32;
            let around = img.clamped(r - 1, c) as i32
                + img.clamped(r + 1, c) as i32
                + img.clamped(r, c - 1) as i32
                + img.clamped(r, c + 1) as i32;
            out.push(4 * centre - around);
        }
    }
    out
}

/// Adds the Laplacian edge map back onto the image, saturating to `[0, 255]`.
pub fn highpass_enhance(img: &GrayImage) -> Result<GrayImage> {
    if img.height < 3 || img.width < 3 {
        return Err(Error::invalid(
            "highpass_enhance",
            format!("image {}x{} is smaller than the 3x3 kernel", img.height, img.width),
        ));
    }
    let edges = laplacian(img);
    let pixels = img
        .pixels
        .iter()
        .zip(&edges)
        .map(|(&p, &e)| (p as i32 + e).clamp(0, 255) as u8)
        .collect();
    Ok(GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    })
}

/// Source coordinate for output index `i` on a corner-aligned grid, as an
/// integer part and an exact fractional remainder.
fn corner_aligned(i: usize, src: usize, dst: usize) -> (usize, f64) {
    if dst <= 1 || src <= 1 {
        return (0, 0.0);
    }
    let num = i * (src - 1);
    let den = dst - 1;
    (num / den, (num % den) as f64 / den as f64)
}

/// Bilinear resize with corner-aligned sampling (output corners land exactly
/// on input corners).
pub fn resize(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize", "output extents must be positive"));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (r0, fr) = corner_aligned(i, img.height, out_h);
        let r1 = (r0 + 1).min(img.height - 1);
        for j in 0..out_w {
            let (c0, fc) = corner_aligned(j, img.width, out_w);
            let c1 = (c0 + 1).min(img.width - 1);
            let top = img.get(r0, c0) as f64 * (1.0 - fc) + img.get(r0, c1) as f64 * fc;
            let bottom = img.get(r1, c0) as f64 * (1.0 - fc) + img.get(r1, c1) as f64 * fc;
            let v = top * (1.0 - fr) + bottom * fr;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(out_h, out_w, pixels)
}

/// Quarter turn counterclockwise.
pub fn rot90(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height, img.width);
    // Output is w×h; output (r, c) comes from input (c, w-1-r).
    GrayImage::from_fn(w, h, |r, c| img.get(c, w - 1 - r))
}

pub fn rot180(img: &GrayImage) -> GrayImage {
    let mut pixels = img.pixels.clone();
    pixels.reverse();
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    }
}

pub fn rot270(img: &GrayImage) -> GrayImage {
    let (h, w) = (img.height, img.width);
    GrayImage::from_fn(w, h, |r, c| img.get(h - 1 - c, r))
}

/// Mirrors columns.
pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let mut pixels = img.pixels.clone();
    for row in pixels.chunks_exact_mut(img.width) {
        row.reverse();
    }
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    }
}

/// `[original, rot90, rot180, rot270, flip]`.
pub fn augment(img: &GrayImage) -> Vec<GrayImage> {
    vec![
        img.clone(),
        rot90(img),
        rot180(img),
        rot270(img),
        flip_horizontal(img),
    ]
}

pub const AUGMENT_FACTOR: usize = 5;

/// Pixels scaled to `[0, 1]` as a `1×H×W` tensor.
pub fn normalize<T: Real>(img: &GrayImage) -> Tensor<T> {
    let scale = T::of(1.0 / 255.0);
    let data = img.pixels.iter().map(|&p| T::of(p as f64) * scale).collect();
    Tensor::new([1, img.height, img.width], data).expect("extents match")
}

/// Grayscale image through denoise, enhance and resize. Images too small for
/// the enhancement kernel skip that step.
pub fn pipeline(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    let denoised = median_filter_3x3(img);
    let enhanced = if img.height >= 3 && img.width >= 3 {
        highpass_enhance(&denoised)?
    } else {
        denoised
    };
    resize(&enhanced, out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_image(max: usize) -> impl Strategy<Value = GrayImage> {
        (1..=max, 1..=max).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<u8>(), h * w)
                .prop_map(move |px| GrayImage::new(h, w, px).unwrap())
        })
    }

    /// Copies each replicate-padded window, sorts it, takes element 4.
    fn median_oracle(img: &GrayImage) -> GrayImage {
        let (h, w) = (img.height() as isize, img.width() as isize);
        GrayImage::from_fn(img.height(), img.width(), |r, c| {
            let mut win = Vec::new();
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let rr = (r as isize + dr).max(0).min(h - 1) as usize;
                    let cc = (c as isize + dc).max(0).min(w - 1) as usize;
                    win.push(img.get(rr, cc));
                }
            }
            win.sort();
            win[4]
        })
    }

    /// Explicit signed convolution, then a saturating add.
    fn highpass_oracle(img: &GrayImage) -> GrayImage {
        const K: [[i32; 3]; 3] = [[0, -1, 0], [-1, 4, -1], [0, -1, 0]];
        let (h, w) = (img.height() as isize, img.width() as isize);
        let mut edge = vec![0i32; img.pixels().len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0;
                for (u, krow) in K.iter().enumerate() {
                    for (v, &k) in krow.iter().enumerate() {
                        let rr = (r + u as isize - 1).max(0).min(h - 1);
                        let cc = (c + v as isize - 1).max(0).min(w - 1);
                        acc += k * img.get(rr as usize, cc as usize) as i32;
                    }
                }
                edge[(r * w + c) as usize] = acc;
            }
        }
        GrayImage::from_fn(img.height(), img.width(), |r, c| {
            let s = img.get(r, c) as i32 + edge[r * img.width() + c];
            s.max(0).min(255) as u8
        })
    }

    #[test]
    fn grayscale_examples() {
        let rgb = |r, g, b| ChannelImage {
            height: 1,
            width: 1,
            channels: 3,
            data: vec![r, g, b],
        };
        assert_eq!(to_grayscale(&rgb(77, 77, 77)).unwrap().pixels(), &[77]);
        assert_eq!(to_grayscale(&rgb(0, 0, 0)).unwrap().pixels(), &[0]);
        assert_eq!(to_grayscale(&rgb(255, 255, 255)).unwrap().pixels(), &[255]);
        assert_eq!(to_grayscale(&rgb(255, 0, 0)).unwrap().pixels(), &[76]);

        let gray = ChannelImage { height: 1, width: 2, channels: 1, data: vec![3, 9] };
        assert_eq!(to_grayscale(&gray).unwrap().pixels(), &[3, 9]);
        let rgba = ChannelImage { height: 1, width: 1, channels: 4, data: vec![0; 4] };
        assert!(to_grayscale(&rgba).is_err());
    }

    #[test]
    fn median_examples() {
        let flat = GrayImage::filled(4, 5, 93);
        assert_eq!(median_filter_3x3(&flat), flat);
        let img = GrayImage::new(3, 3, vec![7, 0, 5, 3, 8, 1, 6, 2, 4]).unwrap();
        assert_eq!(median_filter_3x3(&img).get(1, 1), 4);
    }

    #[test]
    fn highpass_examples() {
        let flat = GrayImage::filled(5, 5, 120);
        assert!(laplacian(&flat).iter().all(|&e| e == 0));
        assert_eq!(highpass_enhance(&flat).unwrap(), flat);

        for v in [10u8, 63, 64, 200] {
            let img = GrayImage::from_fn(5, 5, |r, c| if (r, c) == (2, 2) { v } else { 0 });
            assert_eq!(laplacian(&img)[12], 4 * v as i32);
            let out = highpass_enhance(&img).unwrap().get(2, 2);
            let expected = (5 * v as i32).min(255) as u8;
            assert_eq!(out, expected);
            if v >= 64 {
                assert_eq!(out, 255);
            }
        }
        assert!(highpass_enhance(&GrayImage::filled(2, 5, 0)).is_err());
    }

    #[test]
    fn resize_examples() {
        let col = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        assert_eq!(resize(&col, 4, 1).unwrap().pixels(), &[0, 85, 170, 255]);
        let flat = GrayImage::filled(3, 7, 42);
        assert_eq!(resize(&flat, 11, 2).unwrap(), GrayImage::filled(11, 2, 42));
        assert!(resize(&flat, 0, 2).is_err());
    }

    #[test]
    fn augment_permutations() {
        let img = GrayImage::new(2, 2, vec![1, 2, 3, 4]).unwrap(); // [[a,b],[c,d]]
        let out = augment(&img);
        assert_eq!(out.len(), AUGMENT_FACTOR);
        assert_eq!(out[0], img);
        assert_eq!(out[1].pixels(), &[2, 4, 1, 3]);
        assert_eq!(out[2].pixels(), &[4, 3, 2, 1]);
        assert_eq!(out[3].pixels(), &[3, 1, 4, 2]);
        assert_eq!(out[4].pixels(), &[2, 1, 4, 3]);
    }

    #[test]
    fn normalize_examples() {
        let t = normalize::<f64>(&GrayImage::filled(2, 3, 0));
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert!(t.data().iter().all(|&v| v == 0.0));
        let t = normalize::<f64>(&GrayImage::filled(2, 2, 255));
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let t = normalize::<f64>(&GrayImage::filled(1, 1, 128));
        assert!((t.data()[0] - 128.0 / 255.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn median_matches_sort_oracle(img in arb_image(9)) {
            prop_assert_eq!(median_filter_3x3(&img), median_oracle(&img));
        }

        #[test]
        fn median_stays_in_input_range(img in arb_image(9)) {
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            let out = median_filter_3x3(&img);
            prop_assert!(out.pixels().iter().all(|&p| p >= lo && p <= hi));
        }

        #[test]
        fn highpass_matches_two_pass_oracle(img in arb_image(9).prop_filter("kernel fits", |i| i.height() >= 3 && i.width() >= 3)) {
            prop_assert_eq!(highpass_enhance(&img).unwrap(), highpass_oracle(&img));
        }

        #[test]
        fn rotation_and_flip_group_laws(img in arb_image(8)) {
            let mut r = img.clone();
            for _ in 0..4 {
                r = rot90(&r);
            }
            prop_assert_eq!(&r, &img);
            prop_assert_eq!(flip_horizontal(&flip_horizontal(&img)), img.clone());
            prop_assert_eq!(rot90(&rot90(&img)), rot180(&img));
            prop_assert_eq!(rot90(&rot180(&img)), rot270(&img));
        }

        #[test]
        fn augmentations_preserve_pixel_multiset(img in arb_image(8)) {
            let mut base = img.pixels().to_vec();
            base.sort_unstable();
            for a in augment(&img) {
                let mut px = a.into_pixels();
                px.sort_unstable();
                prop_assert_eq!(&px, &base);
            }
        }

        #[test]
        fn resize_to_same_size_is_identity(img in arb_image(8)) {
            prop_assert_eq!(resize(&img, img.height(), img.width()).unwrap(), img);
        }

        #[test]
        fn pipeline_is_deterministic(img in arb_image(12)) {
            let a = normalize::<f32>(&pipeline(&img, 6, 6).unwrap());
            let b = normalize::<f32>(&pipeline(&img, 6, 6).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
