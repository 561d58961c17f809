//! Procedural clean scenes and rain-like degradations.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageBuffer, ImagingError};

/// The four degradation families: daytime/nighttime crossed with
/// streaks/drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DegradationKind {
    #[serde(rename = "DRS")]
    DayStreak,
    #[serde(rename = "DRD")]
    DayDrop,
    #[serde(rename = "NRS")]
    NightStreak,
    #[serde(rename = "NRD")]
    NightDrop,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 4] = [
        DegradationKind::DayStreak,
        DegradationKind::DayDrop,
        DegradationKind::NightStreak,
        DegradationKind::NightDrop,
    ];

    pub fn code(self) -> &'static str {
        match self {
            DegradationKind::DayStreak => "DRS",
            DegradationKind::DayDrop => "DRD",
            DegradationKind::NightStreak => "NRS",
            DegradationKind::NightDrop => "NRD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn is_night(self) -> bool {
        matches!(
            self,
            DegradationKind::NightStreak | DegradationKind::NightDrop
        )
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for DegradationKind {
    type Err = ImagingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| ImagingError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    /// In `(0, 1]`; scales element counts, opacities and darkening.
    pub intensity: f64,
    pub seed: u64,
}

/// Night scenes are dimmed to this fraction of their brightness at full
/// intensity.
pub const NIGHT_BRIGHTNESS: f64 = 0.4;

/// Deterministic clean scene: a two-colour linear gradient with a handful of
/// rectangles and discs on top. Returns a `size x size` RGB image.
pub fn synth_clean(seed: u64, size: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());

    let mut img = ImageBuffer::filled(size, size, 3, 0.0);
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy + 0.75) / 1.5;
            for c in 0..3 {
                img.set(y, x, c, c0[c] + (c1[c] - c0[c]) * u);
            }
        }
    }

    let shapes = rng.random_range(3..=6);
    for _ in 0..shapes {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.95));
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let half = rng.random_range(0.08..0.25) * s;
        let disc = rng.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    px * px + py * py <= half * half
                } else {
                    px.abs() <= half && py.abs() <= half * 0.7
                };
                if inside {
                    for (c, &v) in color.iter().enumerate() {
                        img.set(y, x, c, v);
                    }
                }
            }
        }
    }
    img
}

/// Applies the degradation recipe for `spec.kind`.
///
/// * streaks: bright line segments sharing one angle, added to the scene;
/// * drops: soft-edged discs showing a blurred, slightly brightened copy of
///   what lies beneath;
/// * night variants first dim the scene (towards 0.4x at full intensity); night
///   drops also add warm glow spots.
///
/// The result is a pure function of `clean` and `spec`.
pub fn degrade(clean: &ImageBuffer, spec: &DegradationSpec) -> ImageBuffer {
    let intensity = spec.intensity.clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut out = clean.clone();
    let area = (clean.height() * clean.width()) as f64;

    if spec.kind.is_night() {
        let factor = 1.0 - (1.0 - NIGHT_BRIGHTNESS) * intensity;
        for p in out.pixels_mut() {
            *p *= factor;
        }
    }
    match spec.kind {
        DegradationKind::DayStreak | DegradationKind::NightStreak => {
            let count = (intensity * area / 25.0).round() as usize;
            let opacity = 0.2 + 0.4 * intensity;
            add_streaks(&mut out, &mut rng, count, opacity);
        }
        DegradationKind::DayDrop | DegradationKind::NightDrop => {
            let count = (intensity * area / 110.0).round() as usize;
            let opacity = 0.5 + 0.5 * intensity;
            add_drops(&mut out, &mut rng, count, opacity);
            if spec.kind == DegradationKind::NightDrop {
                let glows = (intensity * area / 300.0).round() as usize;
                add_glow(&mut out, &mut rng, glows, 0.6 * intensity);
            }
        }
    }
    out.clamp_in_place();
    out
}

fn add_streaks(img: &mut ImageBuffer, rng: &mut ChaCha8Rng, count: usize, opacity: f64) {
    let (h, w) = (img.height(), img.width());
    let angle: f64 = rng.random_range(-0.4..0.4);
    let (sx, sy) = (angle.sin(), angle.cos());
    let mut mask = vec![0.0f64; h * w];
    for _ in 0..count {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let len = rng.random_range(3.0..(0.35 * h as f64).max(4.0));
        let alpha = opacity * rng.random_range(0.6..1.0);
        let steps = (len * 2.0).ceil() as usize;
        for i in 0..=steps {
            let t = i as f64 / 2.0;
            let (x, y) = (x0 + sx * t, y0 + sy * t);
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let idx = y as usize * w + x as usize;
            mask[idx] = mask[idx].max(alpha);
        }
    }
    let channels = img.channels();
    for (i, m) in mask.into_iter().enumerate() {
        if m > 0.0 {
            for c in 0..channels {
                img.pixels_mut()[i * channels + c] += m;
            }
        }
    }
}

fn add_drops(img: &mut ImageBuffer, rng: &mut ChaCha8Rng, count: usize, opacity: f64) {
    let (h, w, channels) = img.shape();
    let blurred = box_blur(img, 2);
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let r = rng.random_range(1.5..(0.12 * h as f64).max(2.0));
        let y_lo = (cy - r - 1.0).max(0.0) as usize;
        let y_hi = ((cy + r + 1.0) as usize).min(h - 1);
        let x_lo = (cx - r - 1.0).max(0.0) as usize;
        let x_hi = ((cx + r + 1.0) as usize).min(w - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
                let edge = ((r - d) / 1.5).clamp(0.0, 1.0);
                if edge == 0.0 {
                    continue;
                }
                let a = opacity * edge;
                for c in 0..channels {
                    let under = blurred.get(y, x, c) + 0.12;
                    let v = img.get(y, x, c);
                    img.pixels_mut()[(y * w + x) * channels + c] = v + a * (under - v);
                }
            }
        }
    }
}

fn add_glow(img: &mut ImageBuffer, rng: &mut ChaCha8Rng, count: usize, amplitude: f64) {
    let (h, w, channels) = img.shape();
    let tint = [1.0, 0.8, 0.5];
    for _ in 0..count {
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let sigma = rng.random_range(1.5..4.0);
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let g = amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..channels.min(3) {
                    img.pixels_mut()[(y * w + x) * channels + c] += g * tint[c];
                }
            }
        }
    }
}

fn box_blur(img: &ImageBuffer, radius: usize) -> ImageBuffer {
    let (h, w, channels) = img.shape();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let (y0, y1) = (y.saturating_sub(radius), (y + radius).min(h - 1));
            let (x0, x1) = (x.saturating_sub(radius), (x + radius).min(w - 1));
            let n = ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
            for c in 0..channels {
                let mut acc = 0.0;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        acc += img.get(yy, xx, c);
                    }
                }
                out.pixels_mut()[(y * w + x) * channels + c] = acc / n;
            }
        }
    }
    out
}
