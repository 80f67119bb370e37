//! Convolution, pooling and resampling kernels.
//!
//! All convolution arithmetic is done in `f64`. The three convolution
//! primitives below are enough for both directions of both layer types:
//! a transposed convolution's forward pass is [`conv_input_grad`], and its
//! input gradient is [`conv_forward`].
//!
//! Work is split into bands of at most [`BAND`] output pixels per image.
//! Bands are fixed-size and independent of the thread count; partial
//! results are combined in band order.

use crate::error::{Error, Result};
use crate::parallel;

/// Output pixels per work item.
pub const BAND: usize = 1024;

/// Geometry of a 2-D cross-correlation with square kernel and symmetric
/// zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        in_ch: usize,
        in_h: usize,
        in_w: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 || in_ch == 0 || out_ch == 0 {
            return Err(Error::dim("kernel, stride and channel counts must be >= 1"));
        }
        if in_h + 2 * pad < kernel || in_w + 2 * pad < kernel {
            return Err(Error::dim(format!(
                "kernel {kernel} larger than padded input {in_h}x{in_w} (pad {pad})"
            )));
        }
        Ok(ConvGeom {
            in_ch,
            in_h,
            in_w,
            out_ch,
            kernel,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Rows of the unfolded patch matrix: `in_ch * kernel * kernel`.
    pub fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn in_image(&self) -> usize {
        self.in_ch * self.in_h * self.in_w
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_image(&self) -> usize {
        self.out_ch * self.out_plane()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn bands(&self, batch: usize) -> Vec<(usize, usize, usize)> {
        let p = self.out_plane();
        let mut out = Vec::with_capacity(batch * p.div_ceil(BAND));
        for b in 0..batch {
            let mut p0 = 0;
            while p0 < p {
                let p1 = (p0 + BAND).min(p);
                out.push((b, p0, p1));
                p0 = p1;
            }
        }
        out
    }
}

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    fn new(data: &'a [f64], rs: usize, cs: usize) -> Self {
        View { data, rs, cs }
    }
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, with `c` row-major.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * a.rs + (k - 1) * a.cs < a.data.len(), "gemm: lhs out of bounds");
    assert!((k - 1) * b.rs + (n - 1) * b.cs < b.data.len(), "gemm: rhs out of bounds");
    // SAFETY: the asserts above bound every index the routine touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds output pixels `p0..p1` of one image into `cols[patch_len x (p1 - p0)]`.
fn im2col_band(x: &[f64], g: &ConvGeom, p0: usize, p1: usize, cols: &mut [f64]) {
    let nb = p1 - p0;
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let src = &x[c * in_plane..(c + 1) * in_plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * nb..(row + 1) * nb];
                let (mut oy, mut ox) = (p0 / g.out_w, p0 % g.out_w);
                for d in dst.iter_mut() {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    *d = if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                        src[iy as usize * g.in_w + ix as usize]
                    } else {
                        0.0
                    };
                    ox += 1;
                    if ox == g.out_w {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_band`]: scatters `cols` back onto one image, adding.
fn col2im_band_add(cols: &[f64], g: &ConvGeom, p0: usize, p1: usize, x: &mut [f64]) {
    let nb = p1 - p0;
    let k = g.kernel;
    let in_plane = g.in_h * g.in_w;
    for c in 0..g.in_ch {
        let dst = &mut x[c * in_plane..(c + 1) * in_plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * nb..(row + 1) * nb];
                let (mut oy, mut ox) = (p0 / g.out_w, p0 % g.out_w);
                for &v in src {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                        dst[iy as usize * g.in_w + ix as usize] += v;
                    }
                    ox += 1;
                    if ox == g.out_w {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

fn check_len(what: &str, got: usize, want: usize) {
    assert_eq!(got, want, "{what}: buffer length {got}, expected {want}");
}

/// Cross-correlation without bias.
///
/// `x` is `batch x in_ch x in_h x in_w`, `w` is `out_ch x patch_len`;
/// returns `batch x out_ch x out_h x out_w`.
pub fn conv_forward(x: &[f64], batch: usize, w: &[f64], g: &ConvGeom) -> Vec<f64> {
    check_len("conv input", x.len(), batch * g.in_image());
    check_len("conv weight", w.len(), g.out_ch * g.patch_len());
    let (kk, o, p) = (g.patch_len(), g.out_ch, g.out_plane());
    let bands = g.bands(batch);
    let parts = parallel::map_slice(&bands, |&(b, p0, p1)| {
        let nb = p1 - p0;
        let xi = &x[b * g.in_image()..(b + 1) * g.in_image()];
        let mut yb = vec![0.0; o * nb];
        if g.is_pointwise() {
            gemm(o, kk, nb, View::new(w, kk, 1), View::new(&xi[p0..], p, 1), &mut yb, 0.0);
        } else {
            let mut cols = vec![0.0; kk * nb];
            im2col_band(xi, g, p0, p1, &mut cols);
            gemm(o, kk, nb, View::new(w, kk, 1), View::new(&cols, nb, 1), &mut yb, 0.0);
        }
        yb
    });
    let mut y = vec![0.0; batch * g.out_image()];
    for (&(b, p0, p1), yb) in bands.iter().zip(parts) {
        let nb = p1 - p0;
        for oc in 0..o {
            let dst = &mut y[(b * o + oc) * p + p0..(b * o + oc) * p + p1];
            dst.copy_from_slice(&yb[oc * nb..(oc + 1) * nb]);
        }
    }
    y
}

/// Gradient of [`conv_forward`] with respect to its input.
///
/// `dy` is `batch x out_ch x out_h x out_w`; returns `batch x in_ch x in_h x in_w`.
pub fn conv_input_grad(w: &[f64], dy: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    check_len("conv weight", w.len(), g.out_ch * g.patch_len());
    check_len("conv upstream", dy.len(), batch * g.out_image());
    let (kk, o, p) = (g.patch_len(), g.out_ch, g.out_plane());
    let bands = g.bands(batch);
    let parts = parallel::map_slice(&bands, |&(b, p0, p1)| {
        let nb = p1 - p0;
        let dyb = &dy[b * g.out_image() + p0..];
        let mut dcols = vec![0.0; kk * nb];
        gemm(kk, o, nb, View::new(w, 1, kk), View::new(dyb, p, 1), &mut dcols, 0.0);
        dcols
    });
    let mut dx = vec![0.0; batch * g.in_image()];
    for (&(b, p0, p1), dcols) in bands.iter().zip(parts) {
        let img = &mut dx[b * g.in_image()..(b + 1) * g.in_image()];
        if g.is_pointwise() {
            let nb = p1 - p0;
            for c in 0..g.in_ch {
                for (d, s) in img[c * p + p0..c * p + p1]
                    .iter_mut()
                    .zip(&dcols[c * nb..(c + 1) * nb])
                {
                    *d += s;
                }
            }
        } else {
            col2im_band_add(&dcols, g, p0, p1, img);
        }
    }
    dx
}

/// Gradient of [`conv_forward`] with respect to its weights (`out_ch x patch_len`).
pub fn conv_weight_grad(x: &[f64], dy: &[f64], batch: usize, g: &ConvGeom) -> Vec<f64> {
    check_len("conv input", x.len(), batch * g.in_image());
    check_len("conv upstream", dy.len(), batch * g.out_image());
    let (kk, o, p) = (g.patch_len(), g.out_ch, g.out_plane());
    let bands = g.bands(batch);
    let parts = parallel::map_slice(&bands, |&(b, p0, p1)| {
        let nb = p1 - p0;
        let xi = &x[b * g.in_image()..(b + 1) * g.in_image()];
        let dyb = &dy[b * g.out_image() + p0..];
        let mut part = vec![0.0; o * kk];
        if g.is_pointwise() {
            gemm(o, nb, kk, View::new(dyb, p, 1), View::new(&xi[p0..], 1, p), &mut part, 0.0);
        } else {
            let mut cols = vec![0.0; kk * nb];
            im2col_band(xi, g, p0, p1, &mut cols);
            gemm(o, nb, kk, View::new(dyb, p, 1), View::new(&cols, 1, nb), &mut part, 0.0);
        }
        part
    });
    let mut dw = vec![0.0; o * kk];
    for part in parts {
        for (d, s) in dw.iter_mut().zip(&part) {
            *d += s;
        }
    }
    dw
}

/// Per-channel sum of `dy` (`batch x channels x plane`), i.e. the bias gradient.
pub fn channel_sums(dy: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            let s = (b * channels + c) * plane;
            *o += dy[s..s + plane].iter().sum::<f64>();
        }
    }
    out
}

/// Adds `bias[c]` to every pixel of channel `c`.
pub fn add_bias(y: &mut [f64], bias: &[f64], batch: usize, plane: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            let s = (b * channels + c) * plane;
            y[s..s + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// 2x2 stride-2 max pooling over `planes` planes of `h x w`.
///
/// Returns pooled values and, per output, the flat input index of the
/// window maximum (first in row-major order on ties).
pub fn max_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut y = vec![0.0; planes * oh * ow];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut y[pl * oh * ow..(pl + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = row[ox / factor];
            }
        }
    }
    y
}

/// Adjoint of [`upsample_nearest`]: sums each `factor x factor` block.
pub fn upsample_nearest_grad(dy: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (h * factor, w * factor);
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let src = &dy[pl * oh * ow..(pl + 1) * oh * ow];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            let row = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, &g) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                row[ox / factor] += g;
            }
        }
    }
    dx
}
