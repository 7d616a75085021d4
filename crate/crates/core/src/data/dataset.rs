//! Preprocessed images held in memory, ready to batch.

use crate::data::manifest::Manifest;
use crate::data::pgm::read_pgm;
use crate::error::{Error, Result};
use crate::preprocess::{augment, normalize, pipeline, GrayImage, AUGMENT_FACTOR};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Vec<GrayImage>,
    /// Class indices, 1 = tumor.
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
}

impl ImageSet {
    pub fn new(images: Vec<GrayImage>, labels: Vec<usize>, subjects: Vec<String>) -> Result<Self> {
        if images.len() != labels.len() || images.len() != subjects.len() {
            return Err(Error::invalid(
                "ImageSet",
                format!(
                    "{} images, {} labels, {} subjects",
                    images.len(),
                    labels.len(),
                    subjects.len()
                ),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid("ImageSet", format!("label {bad} is not 0 or 1")));
        }
        if let Some(first) = images.first() {
            let dims = (first.height(), first.width());
            if images.iter().any(|i| (i.height(), i.width()) != dims) {
                return Err(Error::invalid("ImageSet", "images differ in size"));
            }
        }
        Ok(Self {
            images,
            labels,
            subjects,
        })
    }

    /// Reads every manifest entry and runs it through the preprocessing
    /// pipeline at `height × width`.
    pub fn from_manifest(manifest: &Manifest, height: usize, width: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.len());
        for s in &manifest.samples {
            images.push(pipeline(&read_pgm(&s.path)?, height, width)?);
        }
        Self::new(
            images,
            manifest.samples.iter().map(|s| s.label.index()).collect(),
            manifest.samples.iter().map(|s| s.subject_id.clone()).collect(),
        )
    }

    /// Already-sized images (e.g. straight from the generator) through the
    /// same pipeline.
    pub fn from_images(raw: Vec<(GrayImage, usize, String)>, height: usize, width: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(raw.len());
        let mut labels = Vec::with_capacity(raw.len());
        let mut subjects = Vec::with_capacity(raw.len());
        for (img, label, subject) in raw {
            images.push(pipeline(&img, height, width)?);
            labels.push(label);
            subjects.push(subject);
        }
        Self::new(images, labels, subjects)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|i| (i.height(), i.width()))
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    /// Each image followed by its four variants. Rotations only keep the
    /// shape of square images, so other shapes are rejected.
    pub fn augmented(&self) -> Result<Self> {
        if let Some((h, w)) = self.dims() {
            if h != w {
                return Err(Error::invalid("augment", format!("{h}x{w} images are not square")));
            }
        }
        let mut out = Self {
            images: Vec::with_capacity(self.len() * AUGMENT_FACTOR),
            labels: Vec::with_capacity(self.len() * AUGMENT_FACTOR),
            subjects: Vec::with_capacity(self.len() * AUGMENT_FACTOR),
        };
        for ((img, &label), subject) in self.images.iter().zip(&self.labels).zip(&self.subjects) {
            for variant in augment(img) {
                out.images.push(variant);
                out.labels.push(label);
                out.subjects.push(subject.clone());
            }
        }
        Ok(out)
    }

    /// `N×1×H×W` batch of the selected images, scaled to `[0, 1]`.
    pub fn batch_tensor<T: Real>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = self
            .dims()
            .ok_or_else(|| Error::invalid("batch_tensor", "empty image set"))?;
        let mut data = Vec::with_capacity(idx.len() * h * w);
        for &i in idx {
            let img = self
                .images
                .get(i)
                .ok_or_else(|| Error::invalid("batch_tensor", format!("index {i} out of range")))?;
            data.extend(normalize::<T>(img).into_data());
        }
        Tensor::new([idx.len(), 1, h, w], data)
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(n: usize) -> ImageSet {
        ImageSet::new(
            (0..n).map(|i| GrayImage::from_fn(4, 4, |r, c| (i * 16 + r * 4 + c) as u8)).collect(),
            (0..n).map(|i| i % 2).collect(),
            (0..n).map(|i| format!("s{}", i / 2)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn augmentation_is_fivefold() {
        let s = set(3);
        let a = s.augmented().unwrap();
        assert_eq!(a.len(), 3 * AUGMENT_FACTOR);
        assert_eq!(a.images[5], s.images[1]);
        assert_eq!(a.labels[5..10], [1; 5]);
    }

    #[test]
    fn non_square_augmentation_rejected() {
        let s = ImageSet::new(vec![GrayImage::filled(2, 3, 0)], vec![0], vec!["a".into()]).unwrap();
        assert!(s.augmented().is_err());
    }

    #[test]
    fn batch_layout() {
        let s = set(3);
        let t = s.batch_tensor::<f32>(&[2, 0]).unwrap();
        assert_eq!(t.shape(), &[2, 1, 4, 4]);
        assert_eq!(t.data()[0], 32.0 / 255.0);
        assert_eq!(t.data()[16], 0.0);
        assert_eq!(s.batch_labels(&[2, 1]), vec![0, 1]);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(ImageSet::new(vec![GrayImage::filled(2, 2, 0)], vec![], vec![]).is_err());
        assert!(ImageSet::new(vec![GrayImage::filled(2, 2, 0)], vec![2], vec!["a".into()]).is_err());
    }
}
