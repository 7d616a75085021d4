//! Synthetic brain-like slices for end-to-end runs without real scans.
//!
//! Every image is a bright disc with a smooth radial profile on a dark
//! background, plus Gaussian noise. Tumor images add one rotated ellipse of
//! raised intensity. Images are grouped into subjects of `subject_block`
//! consecutive samples; a subject's disc geometry is shared by all its
//! images. Each image draws from its own stream seeded with
//! `seed ^ index`, so output is a pure function of the config.

use std::fs;
use std::path::Path;

use crate::data::manifest::{write_manifest, Label, Manifest, Sample};
use crate::data::pgm::write_pgm;
use crate::error::{Error, Result};
use crate::preprocess::GrayImage;
use crate::rng::SeededRng;

const SUBJECT_STREAM: u64 = 0x5u64 << 56;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Square image side in pixels.
    pub size: usize,
    pub healthy: usize,
    pub tumor: usize,
    pub noise_stddev: f64,
    /// Intensity added inside the tumor ellipse.
    pub tumor_delta: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub subject_block: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            healthy: 500,
            tumor: 500,
            noise_stddev: 8.0,
            tumor_delta: 60.0,
            radius_min: 3.0,
            radius_max: 8.0,
            subject_block: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("SynthConfig", msg));
        if self.size < 16 {
            return bad(format!("image size {} is below 16", self.size));
        }
        if self.subject_block == 0 {
            return bad("subject_block must be positive".into());
        }
        if !(self.noise_stddev >= 0.0) {
            return bad("noise_stddev must be >= 0".into());
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return bad(format!(
                "need 1 <= radius_min <= radius_max, got {}..{}",
                self.radius_min, self.radius_max
            ));
        }
        // The ellipse must fit inside the disc, which spans 0.8 of the image.
        if self.radius_max > 0.2 * self.size as f64 {
            return bad(format!(
                "radius_max {} does not fit a {}px image (limit {})",
                self.radius_max,
                self.size,
                0.2 * self.size as f64
            ));
        }
        Ok(())
    }

    /// Labels in generation order: alternating while both classes remain.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = Vec::with_capacity(self.healthy + self.tumor);
        let (mut h, mut t) = (self.healthy, self.tumor);
        while h > 0 || t > 0 {
            if h > 0 {
                out.push(Label::Healthy);
                h -= 1;
            }
            if t > 0 {
                out.push(Label::Tumor);
                t -= 1;
            }
        }
        out
    }

    pub fn subject_of(&self, index: usize) -> String {
        format!("subj{:04}", index / self.subject_block)
    }
}

struct Disc {
    cy: f64,
    cx: f64,
    radius: f64,
    level: f64,
}

fn subject_disc(cfg: &SynthConfig, subject: usize) -> Disc {
    let mut rng = SeededRng::new(cfg.seed ^ SUBJECT_STREAM ^ subject as u64);
    let s = cfg.size as f64;
    Disc {
        cy: s / 2.0 + rng.uniform_range(-0.04, 0.04) * s,
        cx: s / 2.0 + rng.uniform_range(-0.04, 0.04) * s,
        radius: s * rng.uniform_range(0.36, 0.40),
        level: rng.uniform_range(85.0, 105.0),
    }
}

/// Renders image `index` of the dataset.
pub fn synth_image(cfg: &SynthConfig, index: usize, label: Label) -> GrayImage {
    let disc = subject_disc(cfg, index / cfg.subject_block);
    let mut rng = SeededRng::new(cfg.seed ^ index as u64);

    let tumor = (label == Label::Tumor).then(|| {
        let a = rng.uniform_range(cfg.radius_min, cfg.radius_max);
        let b = rng.uniform_range(cfg.radius_min, cfg.radius_max);
        let theta = rng.uniform_range(0.0, std::f64::consts::PI);
        // Centre far enough inside the disc that the ellipse stays within it.
        let reach = (disc.radius - cfg.radius_max).max(0.0) * rng.uniform().sqrt();
        let phi = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        (disc.cy + reach * phi.sin(), disc.cx + reach * phi.cos(), a, b, theta)
    });

    let mut pixels = Vec::with_capacity(cfg.size * cfg.size);
    for r in 0..cfg.size {
        for c in 0..cfg.size {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let d = ((y - disc.cy).powi(2) + (x - disc.cx).powi(2)).sqrt() / disc.radius;
            // Smooth falloff across the rim, brighter toward the centre.
            let inside = (1.0 - (d - 1.0) / 0.06).clamp(0.0, 1.0);
            let mut v = 12.0 + inside * (disc.level + 25.0 * (1.0 - d * d).max(0.0));
            if let Some((ty, tx, a, b, theta)) = tumor {
                let (dy, dx) = (y - ty, x - tx);
                let u = dx * theta.cos() + dy * theta.sin();
                let w = -dx * theta.sin() + dy * theta.cos();
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += cfg.tumor_delta;
                }
            }
            v += cfg.noise_stddev * rng.standard_normal();
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(cfg.size, cfg.size, pixels).expect("positive size")
}

/// Renders the whole dataset in memory, in generation order.
pub fn synth_images(cfg: &SynthConfig) -> Result<Vec<(GrayImage, Label, String)>> {
    cfg.validate()?;
    Ok(cfg
        .labels()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (synth_image(cfg, i, l), l, cfg.subject_of(i)))
        .collect())
}

/// Writes `images/NNNNN_<label>.pgm` files and `manifest.csv` under `out_dir`.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut samples = Vec::with_capacity(cfg.healthy + cfg.tumor);
    for (i, label) in cfg.labels().into_iter().enumerate() {
        let path = img_dir.join(format!("{i:05}_{label}.pgm"));
        write_pgm(&synth_image(cfg, i, label), &path)?;
        samples.push(Sample {
            path,
            label,
            subject_id: cfg.subject_of(i),
        });
    }
    let manifest = Manifest::new(samples, format!("synthetic seed={}", cfg.seed));
    write_manifest(&manifest, out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_manifest;
    use std::collections::HashMap;

    fn small(healthy: usize, tumor: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            healthy,
            tumor,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn empty_counts() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&small(0, 0, 1), dir.path()).unwrap();
        assert!(m.is_empty());
        assert_eq!(fs::read_dir(dir.path().join("images")).unwrap().count(), 0);
        assert!(load_manifest(dir.path().join("manifest.csv")).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic(&small(6, 5, 3), a.path()).unwrap();
        generate_synthetic(&small(6, 5, 3), b.path()).unwrap();
        for entry in fs::read_dir(a.path().join("images")).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(a.path().join("images").join(&name)).unwrap(),
                fs::read(b.path().join("images").join(&name)).unwrap()
            );
        }
        assert_eq!(
            fs::read(a.path().join("manifest.csv")).unwrap(),
            fs::read(b.path().join("manifest.csv")).unwrap()
        );
    }

    #[test]
    fn subject_blocks() {
        let cfg = small(500, 500, 0);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for i in 0..cfg.labels().len() {
            *counts.entry(cfg.subject_of(i)).or_default() += 1;
        }
        assert_eq!(counts.len(), 100);
        assert!(counts.values().all(|&c| c == 10));
    }

    #[test]
    fn labels_alternate_then_fill() {
        let l = small(2, 4, 0).labels();
        use Label::*;
        assert_eq!(l, vec![Healthy, Tumor, Healthy, Tumor, Tumor, Tumor]);
    }

    #[test]
    fn tumors_are_brighter_on_average() {
        let imgs = synth_images(&small(100, 100, 9)).unwrap();
        let mean = |want: Label| {
            let v: Vec<f64> = imgs.iter().filter(|(_, l, _)| *l == want).map(|(i, _, _)| i.mean()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(Label::Tumor) > mean(Label::Healthy));
    }

    #[test]
    fn generated_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&small(7, 9, 2), dir.path()).unwrap();
        let loaded = load_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(loaded.samples, m.samples);
        loaded.check_trainable().unwrap();
    }

    #[test]
    fn rejects_oversized_radius() {
        let cfg = SynthConfig {
            radius_max: 20.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
