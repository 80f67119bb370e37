//! Random translation, rotation and zoom applied jointly to image and mask.

use rand::Rng;

use super::SamplePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ranges the random transform is drawn from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Maximum shift as a fraction of the image width/height.
    pub translate: f64,
    /// Maximum rotation in degrees, either direction.
    pub rotate_deg: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            translate: 0.1,
            rotate_deg: 15.0,
            zoom_min: 0.9,
            zoom_max: 1.1,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            translate: 0.0,
            rotate_deg: 0.0,
            zoom_min: 1.0,
            zoom_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.zoom_min <= 0.0 || self.zoom_max <= 0.0 {
            return Err(Error::Spec("zoom must be > 0".into()));
        }
        if self.zoom_min > self.zoom_max {
            return Err(Error::Spec("zoom_min exceeds zoom_max".into()));
        }
        if !(self.translate >= 0.0 && self.rotate_deg >= 0.0) {
            return Err(Error::Spec("translation and rotation ranges must be >= 0".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> Result<AffineParams> {
        self.validate()?;
        let sym = |rng: &mut R, r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        let dx = sym(rng, self.translate * width as f64);
        let dy = sym(rng, self.translate * height as f64);
        let rotate_deg = sym(rng, self.rotate_deg);
        let zoom = if self.zoom_max > self.zoom_min {
            rng.random_range(self.zoom_min..=self.zoom_max)
        } else {
            self.zoom_min
        };
        Ok(AffineParams {
            dx,
            dy,
            rotate_deg,
            zoom,
        })
    }
}

/// One concrete transform: zoom and rotation about the image centre,
/// then a shift of `dx` columns and `dy` rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub dx: f64,
    pub dy: f64,
    pub rotate_deg: f64,
    pub zoom: f64,
}

impl AffineParams {
    pub fn is_identity(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.rotate_deg == 0.0 && self.zoom == 1.0
    }

    /// Source coordinate (x, y) that lands on destination pixel (x, y).
    fn source(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let (s, c) = self.rotate_deg.to_radians().sin_cos();
        let (u, v) = ((x - cx - self.dx) / self.zoom, (y - cy - self.dy) / self.zoom);
        // inverse rotation
        (cx + c * u + s * v, cy - s * u + c * v)
    }

    pub fn apply(&self, sample: &SamplePair) -> Result<SamplePair> {
        if self.zoom <= 0.0 {
            return Err(Error::Spec("zoom must be > 0".into()));
        }
        if self.is_identity() {
            return Ok(sample.clone());
        }
        let s = sample.image.shape();
        let (h, w) = (s.height, s.width);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let mut image = Tensor::<f32>::zeros(s)?;
        let mut mask = Tensor::<f32>::zeros(sample.mask.shape())?;
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x as f64, y as f64, cx, cy);
                for c in 0..s.channels {
                    let v = bilinear(sample.image.plane(0, c), h, w, sx, sy);
                    image.set(0, c, y, x, v as f32);
                }
                let m = nearest(sample.mask.plane(0, 0), h, w, sx, sy);
                mask.set(0, 0, y, x, if m > 0.5 { 1.0 } else { 0.0 });
            }
        }
        SamplePair::new(image, mask, sample.source.clone(), sample.name.clone())
    }
}

fn pixel(plane: &[f32], h: usize, w: usize, x: isize, y: isize) -> f64 {
    if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
        0.0
    } else {
        plane[y as usize * w + x as usize] as f64
    }
}

fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let v00 = pixel(plane, h, w, x0, y0);
    let v01 = pixel(plane, h, w, x0 + 1, y0);
    let v10 = pixel(plane, h, w, x0, y0 + 1);
    let v11 = pixel(plane, h, w, x0 + 1, y0 + 1);
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

fn nearest(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    pixel(plane, h, w, x.round() as isize, y.round() as isize)
}

/// Draws a transform from `spec` and applies it to image and mask.
pub fn augment<R: Rng + ?Sized>(sample: &SamplePair, spec: &AugmentSpec, rng: &mut R) -> Result<SamplePair> {
    let s = sample.image.shape();
    spec.sample(s.height, s.width, rng)?.apply(sample)
}
