//! Synthetic blob-segmentation data.
//!
//! Each sample thresholds a sum of 3 to 6 random Gaussians into a mask, then
//! renders an image with overlapping foreground/background intensities,
//! optional blur across the boundary, a smooth multiplicative bias field and
//! additive noise. Images are quantized to 8 bits so a dataset written to
//! disk reloads to the same tensors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, SamplePair};
use crate::error::{Error, Result};
use crate::model::SIZE_MULTIPLE;
use crate::tensor::Tensor;

/// Bumped whenever the generator's output for a given seed changes.
pub const GENERATOR_VERSION: u32 = 1;

/// Slices generated per source id.
pub const SLICES_PER_SOURCE: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Difficulty {
    /// Clean contrast, no blur, bias or noise.
    Easy,
    #[default]
    Medium,
    /// Weak boundaries and strong intensity inhomogeneity.
    Hard,
}

impl Difficulty {
    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    pub fn render_params(&self) -> RenderParams {
        match self {
            Difficulty::Easy => RenderParams {
                fg_level: 0.7,
                bg_level: 0.3,
                texture: 0.08,
                blur_sigma: 0.0,
                bias_amplitude: 0.0,
                noise_sigma: 0.0,
            },
            Difficulty::Medium => RenderParams {
                fg_level: 0.62,
                bg_level: 0.38,
                texture: 0.1,
                blur_sigma: 1.0,
                bias_amplitude: 0.2,
                noise_sigma: 0.04,
            },
            Difficulty::Hard => RenderParams {
                fg_level: 0.58,
                bg_level: 0.42,
                texture: 0.12,
                blur_sigma: 2.0,
                bias_amplitude: 0.35,
                noise_sigma: 0.07,
            },
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Config(format!("unknown difficulty {other:?} (easy|medium|hard)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderParams {
    pub fg_level: f64,
    pub bg_level: f64,
    /// Amplitude of smooth intensity texture inside both regions.
    pub texture: f64,
    pub blur_sigma: f64,
    pub bias_amplitude: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub size: usize,
    pub difficulty: Difficulty,
    pub seed: u64,
    /// Target foreground fraction is drawn uniformly from this interval.
    pub fg_fraction: (f64, f64),
}

impl SynthSpec {
    pub fn new(n: usize, size: usize, difficulty: Difficulty, seed: u64) -> Self {
        SynthSpec {
            n,
            size,
            difficulty,
            seed,
            fg_fraction: (0.02, 0.25),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % SIZE_MULTIPLE != 0 {
            return Err(Error::dim(format!("size {} is not a positive multiple of {SIZE_MULTIPLE}", self.size)));
        }
        let (lo, hi) = self.fg_fraction;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Spec(format!("foreground fraction range ({lo}, {hi}) must lie in (0, 1)")));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let samples = (0..self.n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(i as u64);
                let (lo, hi) = self.fg_fraction;
                let frac = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let (image, mask) = render(self.size, frac, &self.difficulty.render_params(), &mut rng)?;
                let source = format!("p{:03}", i / SLICES_PER_SOURCE);
                let name = format!("{source}_{}", i % SLICES_PER_SOURCE);
                SamplePair::new(image, mask, source, name)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(samples))
    }
}

/// `n` square samples of side `size`, deterministic in `seed`.
pub fn make_synthetic(n: usize, size: usize, difficulty: Difficulty, seed: u64) -> Result<Dataset> {
    SynthSpec::new(n, size, difficulty, seed).generate()
}

/// Sum of 3..=6 isotropic Gaussians with centres away from the border.
fn blob_field<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f64> {
    let s = size as f64;
    let k = rng.random_range(3..=6);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            let cx = rng.random_range(0.25..0.75) * s;
            let cy = rng.random_range(0.25..0.75) * s;
            let sigma = rng.random_range(0.06..0.16) * s;
            let amp = rng.random_range(0.5..1.0);
            (cx, cy, sigma, amp)
        })
        .collect();
    let mut field = vec![0.0; size * size];
    for (y, row) in field.chunks_mut(size).enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            *v = bumps
                .iter()
                .map(|&(cx, cy, sg, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * sg * sg)).exp()
                })
                .sum();
        }
    }
    field
}

/// Smooth field in roughly [-1, 1]: a few random low-frequency cosines.
fn smooth_field<R: Rng + ?Sized>(size: usize, waves: usize, rng: &mut R) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = (0..waves)
        .map(|_| {
            let fx = rng.random_range(-1.5..1.5);
            let fy = rng.random_range(-1.5..1.5);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (fx, fy, phase)
        })
        .collect();
    let s = size as f64;
    let mut out = vec![0.0; size * size];
    for (y, row) in out.chunks_mut(size).enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (u, w) = (x as f64 / s, y as f64 / s);
            *v = params
                .iter()
                .map(|&(fx, fy, ph)| (std::f64::consts::TAU * (fx * u + fy * w) + ph).cos())
                .sum::<f64>()
                / waves as f64;
        }
    }
    out
}

fn gaussian_blur(img: &[f64], size: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let clampi = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * img[y * size + clampi(x as isize + d)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..size {
        for x in 0..size {
            out[y * size + x] = (-r..=r)
                .map(|d| kernel[(d + r) as usize] * tmp[clampi(y as isize + d) * size + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

/// One image/mask pair whose mask covers about `fraction` of the frame.
pub fn render<R: Rng + ?Sized>(size: usize, fraction: f64, p: &RenderParams, rng: &mut R) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let field = blob_field(size, rng);
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let keep = ((fraction * sorted.len() as f64).round() as usize).clamp(1, sorted.len() - 1);
    let threshold = sorted[keep - 1];
    let mask: Vec<f64> = field.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect();

    let texture = smooth_field(size, 4, rng);
    let mut img: Vec<f64> = mask
        .iter()
        .zip(&texture)
        .map(|(&m, &t)| if m > 0.0 { p.fg_level } else { p.bg_level } + p.texture * t)
        .collect();
    if p.blur_sigma > 0.0 {
        img = gaussian_blur(&img, size, p.blur_sigma);
    }
    let bias = smooth_field(size, 2, rng);
    if p.bias_amplitude > 0.0 {
        for (v, b) in img.iter_mut().zip(&bias) {
            *v *= 1.0 + p.bias_amplitude * b;
        }
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;
        for v in img.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    let quantized: Vec<f64> = img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Ok((
        Tensor::from_f64([1, 1, size, size], &quantized)?,
        Tensor::from_f64([1, 1, size, size], &mask)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(make_synthetic(0, 32, Difficulty::Hard, 1).unwrap().is_empty());
        let a = make_synthetic(5, 32, Difficulty::Hard, 9).unwrap();
        let b = make_synthetic(5, 32, Difficulty::Hard, 9).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic(5, 32, Difficulty::Hard, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn size_must_be_multiple_of_16() {
        assert!(matches!(make_synthetic(1, 60, Difficulty::Easy, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn source_grouping() {
        let d = make_synthetic(6, 16, Difficulty::Easy, 0).unwrap();
        assert_eq!(d.samples[0].name, "p000_0");
        assert_eq!(d.samples[5].name, "p001_1");
        assert_eq!(d.sources(), vec!["p000".to_string(), "p001".to_string()]);
    }

    #[test]
    fn easy_contrast() {
        let d = make_synthetic(100, 32, Difficulty::Easy, 3).unwrap();
        let (mut fg, mut bg) = (0.0, 0.0);
        for s in &d.samples {
            let (mut sf, mut nf, mut sb, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for (&v, &m) in s.image.data().iter().zip(s.mask.data()) {
                if m > 0.0 {
                    sf += v as f64;
                    nf += 1.0;
                } else {
                    sb += v as f64;
                    nb += 1.0;
                }
            }
            fg += sf / nf;
            bg += sb / nb;
        }
        assert!((fg - bg) / 100.0 > 0.3);
    }

    #[test]
    fn foreground_fraction_in_range() {
        for diff in [Difficulty::Easy, Difficulty::Hard] {
            for s in make_synthetic(40, 32, diff, 5).unwrap().samples {
                let f = s.foreground_fraction();
                assert!((0.005..=0.40).contains(&f), "{f}");
            }
        }
    }
}
