//! sRGB to CIELAB conversion, the CIEDE2000 color difference, and per-pixel
//! image comparison with a banded heatmap.

use std::f64::consts::PI;

use thiserror::Error;

use crate::image::Image;
use crate::shading::Rgb;

/// D65 reference white, `Y = 1`.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

pub type Lab = [f64; 3];

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn srgb_to_xyz(rgb: Rgb) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    [
        0.4124564 * r + 0.3575761 * g + 0.1804375 * b,
        0.2126729 * r + 0.7151522 * g + 0.0721750 * b,
        0.0193339 * r + 0.1191920 * g + 0.9503041 * b,
    ]
}

pub fn xyz_to_lab(xyz: [f64; 3]) -> Lab {
    let eps = 216.0 / 24389.0;
    let kappa = 24389.0 / 27.0;
    let f = |t: f64| if t > eps { t.cbrt() } else { (kappa * t + 16.0) / 116.0 };
    let [fx, fy, fz] = [f(xyz[0] / WHITE[0]), f(xyz[1] / WHITE[1]), f(xyz[2] / WHITE[2])];
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn srgb_to_lab(rgb: Rgb) -> Lab {
    xyz_to_lab(srgb_to_xyz(rgb))
}

/// CIEDE2000 difference of two CIELAB colors with `k_L = k_C = k_H = 1`.
pub fn ciede2000(lab1: Lab, lab2: Lab) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let deg = PI / 180.0;

    let c_bar = (a1.hypot(b1) + a2.hypot(b2)) / 2.0;
    let c7 = c_bar.powi(7);
    let g = 0.5 * (1.0 - (c7 / (c7 + 25f64.powi(7))).sqrt());
    let (a1p, a2p) = ((1.0 + g) * a1, (1.0 + g) * a2);
    let (c1p, c2p) = (a1p.hypot(b1), a2p.hypot(b2));
    let hue = |b: f64, a: f64| {
        if b == 0.0 && a == 0.0 {
            0.0
        } else {
            let h = b.atan2(a) / deg;
            if h < 0.0 {
                h + 360.0
            } else {
                h
            }
        }
    };
    let (h1p, h2p) = (hue(b1, a1p), hue(b2, a2p));

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else if (h2p - h1p).abs() <= 180.0 {
        h2p - h1p
    } else if h2p - h1p > 180.0 {
        h2p - h1p - 360.0
    } else {
        h2p - h1p + 360.0
    };
    let dhh = 2.0 * (c1p * c2p).sqrt() * (dh * deg / 2.0).sin();

    let l_bar = (l1 + l2) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let hp_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * ((hp_bar - 30.0) * deg).cos()
        + 0.24 * (2.0 * hp_bar * deg).cos()
        + 0.32 * ((3.0 * hp_bar + 6.0) * deg).cos()
        - 0.20 * ((4.0 * hp_bar - 63.0) * deg).cos();
    let d_theta = 30.0 * (-((hp_bar - 275.0) / 25.0).powi(2)).exp();
    let cp7 = cp_bar.powi(7);
    let r_c = 2.0 * (cp7 / (cp7 + 25f64.powi(7))).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * cp_bar;
    let s_h = 1.0 + 0.015 * cp_bar * t;
    let r_t = -(2.0 * d_theta * deg).sin() * r_c;

    let (tl, tc, th) = (dl / s_l, dc / s_c, dhh / s_h);
    (tl * tl + tc * tc + th * th + r_t * tc * th).sqrt()
}

/// CIEDE2000 between two sRGB colors in `[0, 1]`.
pub fn delta_e(a: Rgb, b: Rgb) -> f64 {
    ciede2000(srgb_to_lab(a), srgb_to_lab(b))
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEStats {
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub stats: DeltaEStats,
    /// Per-pixel ΔE, row-major.
    pub delta_e: Vec<f64>,
    pub heatmap: Image,
}

pub const HEAT_GREY: [u8; 3] = [128, 128, 128];
pub const HEAT_BLUE: [u8; 3] = [0, 0, 255];
pub const HEAT_GREEN: [u8; 3] = [0, 255, 0];
pub const HEAT_RED: [u8; 3] = [255, 0, 0];

/// Heatmap band: grey up to 1, blue up to 5, green up to 10, red above.
pub fn heat_color(de: f64) -> [u8; 3] {
    if de <= 1.0 {
        HEAT_GREY
    } else if de <= 5.0 {
        HEAT_BLUE
    } else if de <= 10.0 {
        HEAT_GREEN
    } else {
        HEAT_RED
    }
}

pub fn stats_of(values: &[f64]) -> DeltaEStats {
    if values.is_empty() {
        return DeltaEStats { max: 0.0, mean: 0.0, var: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = values.iter().copied().fold(0.0, f64::max);
    DeltaEStats { max, mean, var }
}

pub fn compare_images(a: &Image, b: &Image) -> Result<Comparison, CompareError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(CompareError::SizeMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    let (w, h) = (a.width(), a.height());
    let mut delta = Vec::with_capacity((w * h) as usize);
    let mut heatmap = Image::new(w, h, HEAT_GREY);
    for y in 0..h {
        for x in 0..w {
            let de = if a.get(x, y) == b.get(x, y) { 0.0 } else { delta_e(a.get_rgb(x, y), b.get_rgb(x, y)) };
            heatmap.set(x, y, heat_color(de));
            delta.push(de);
        }
    }
    Ok(Comparison { stats: stats_of(&delta), delta_e: delta, heatmap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_maps_to_l100() {
        let lab = srgb_to_lab([1.0, 1.0, 1.0]);
        assert!((lab[0] - 100.0).abs() < 1e-3, "{lab:?}");
        assert!(lab[1].abs() < 1e-2 && lab[2].abs() < 1e-2);
    }

    #[test]
    fn identical_and_symmetric() {
        let (a, b) = ([0.2, 0.5, 0.9], [0.8, 0.1, 0.3]);
        assert_eq!(delta_e(a, a), 0.0);
        assert_eq!(delta_e(a, b), delta_e(b, a));
    }

    #[test]
    fn banding_edges() {
        assert_eq!(heat_color(1.0), HEAT_GREY);
        assert_eq!(heat_color(5.0), HEAT_BLUE);
        assert_eq!(heat_color(10.0), HEAT_GREEN);
        assert_eq!(heat_color(10.01), HEAT_RED);
    }
}
