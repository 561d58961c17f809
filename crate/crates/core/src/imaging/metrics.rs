use serde::{Deserialize, Serialize};

use super::{ImageBuffer, ImagingError};

/// Parameters of the windowed structural-similarity index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimParams {
    /// Side of the square Gaussian window; must be odd.
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<(), ImagingError> {
        let ok = self.window_size % 2 == 1
            && self.gaussian_sigma > 0.0
            && self.k1 > 0.0
            && self.k2 > 0.0
            && self.dynamic_range > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ImagingError::InvalidSsimParams(*self))
        }
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as f64;
        let two_var = 2.0 * self.gaussian_sigma * self.gaussian_sigma;
        let taps: Vec<f64> = (0..self.window_size)
            .map(|i| (-(i as f64 - r).powi(2) / two_var).exp())
            .collect();
        let total: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / total).collect()
    }
}

/// Mean structural similarity over every window that fits entirely inside the
/// image, averaged over channels.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer, params: &SsimParams) -> Result<f64, ImagingError> {
    params.validate()?;
    a.ensure_same_shape(b)?;
    let (h, w, channels) = a.shape();
    let win = params.window_size;
    if h < win || w < win {
        return Err(ImagingError::TooSmall {
            height: h,
            width: w,
            window: win,
        });
    }
    let kernel = params.kernel();
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);

    let mut total = 0.0;
    for c in 0..channels {
        let pa = a.plane(c);
        let pb = b.plane(c);
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let mu_a = filter_valid(&pa, h, w, &kernel);
        let mu_b = filter_valid(&pb, h, w, &kernel);
        let e_aa = filter_valid(&aa, h, w, &kernel);
        let e_bb = filter_valid(&bb, h, w, &kernel);
        let e_ab = filter_valid(&ab, h, w, &kernel);

        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            sum += num / den;
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}

/// Separable "valid" filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = kernel.iter().zip(&src[x..x + k]).map(|(g, v)| g * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, g) in kernel.iter().enumerate() {
                acc += g * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean squared error over all samples.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    a.ensure_same_shape(b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels()
        .iter()
        .zip(b.pixels())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range. Identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    let err = mse(a, b)?;
    Ok(psnr_from_mse(err))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}
