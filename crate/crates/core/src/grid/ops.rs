use num_complex::Complex64;
use rayon::prelude::*;

use super::{center_index, Fft3Plan, Image2D};
use crate::error::{invalid, Result};

/// 2D DFT of a real image, returned row-major.
pub fn fft2_real(img: &Image2D, plan: &Fft3Plan) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut buf);
    buf
}

/// Circular cross-correlation `c(τ) = Σ_t a(t)·b(t+τ)` with zero lag placed at
/// `(width/2, height/2)`.
pub fn xcorr2(a: &Image2D, b: &Image2D) -> Result<Image2D> {
    if !a.same_shape(b) {
        return invalid(format!(
            "correlation operands differ in shape: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ));
    }
    let plan = Fft3Plan::new(a.width(), a.height(), 1)?;
    let fa = fft2_real(a, &plan);
    let fb = fft2_real(b, &plan);
    Ok(xcorr2_spectra(&fa, &fb, a.width(), a.height(), &plan))
}

/// Correlation from precomputed spectra (same plan and shape).
pub(crate) fn xcorr2_spectra(fa: &[Complex64], fb: &[Complex64], w: usize, h: usize, plan: &Fft3Plan) -> Image2D {
    let mut prod: Vec<Complex64> = fa.par_iter().zip(fb.par_iter()).map(|(x, y)| x.conj() * y).collect();
    plan.inverse(&mut prod);
    let (cx, cy) = (center_index(w), center_index(h));
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(oy, row)| {
        let ty = (oy + h - cy) % h;
        for (ox, v) in row.iter_mut().enumerate() {
            let tx = (ox + w - cx) % w;
            *v = prod[ty * w + tx].re;
        }
    });
    Image2D::new(w, h, out).expect("shape preserved")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Bilinear,
    Bicubic,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            other => Err(format!("unknown interpolation `{other}`")),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        })
    }
}

/// Magnifies (`factor > 1`) or minifies the image about its centre pixel,
/// keeping the output shape. Samples that fall outside the source are zero.
pub fn rescale2(img: &Image2D, factor: f64, method: Interpolation) -> Result<Image2D> {
    if !(factor > 0.0) || !factor.is_finite() {
        return invalid(format!("scale factor must be positive and finite, got {factor}"));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = (center_index(w) as f64, center_index(h) as f64);
    let inv = 1.0 / factor;
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let sy = cy + (y as f64 - cy) * inv;
        for (x, v) in row.iter_mut().enumerate() {
            let sx = cx + (x as f64 - cx) * inv;
            *v = match method {
                Interpolation::Bilinear => sample_bilinear(img, sx, sy),
                Interpolation::Bicubic => sample_bicubic(img, sx, sy),
            };
        }
    });
    Image2D::new(w, h, out)
}

#[inline]
fn inside(img: &Image2D, sx: f64, sy: f64) -> bool {
    sx >= 0.0 && sy >= 0.0 && sx <= (img.width() - 1) as f64 && sy <= (img.height() - 1) as f64
}

fn sample_bilinear(img: &Image2D, sx: f64, sy: f64) -> f64 {
    if !inside(img, sx, sy) {
        return 0.0;
    }
    let x0 = sx.floor() as usize;
    let y0 = sy.floor() as usize;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let top = (1.0 - fx) * img.get(x0, y0) + fx * img.get(x1, y0);
    let bottom = (1.0 - fx) * img.get(x0, y1) + fx * img.get(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

// Keys cubic convolution kernel, a = -0.5.
#[inline]
fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

fn sample_bicubic(img: &Image2D, sx: f64, sy: f64) -> f64 {
    if !inside(img, sx, sy) {
        return 0.0;
    }
    let x0 = sx.floor() as i64;
    let y0 = sy.floor() as i64;
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut acc = 0.0;
    for j in -1..=2 {
        let wy = cubic_weight(fy - j as f64);
        if wy == 0.0 {
            continue;
        }
        let yy = (y0 + j).clamp(0, h - 1) as usize;
        let mut row = 0.0;
        for i in -1..=2 {
            let wx = cubic_weight(fx - i as f64);
            if wx == 0.0 {
                continue;
            }
            let xx = (x0 + i).clamp(0, w - 1) as usize;
            row += wx * img.get(xx, yy);
        }
        acc += wy * row;
    }
    acc
}

/// Block average over `factor × factor` tiles.
pub fn downsample2(img: &Image2D, factor: usize) -> Result<Image2D> {
    if factor == 0 {
        return invalid("downsampling factor must be at least 1");
    }
    let (w, h) = (img.width(), img.height());
    if w % factor != 0 || h % factor != 0 {
        return invalid(format!("downsampling factor {factor} does not divide {w}x{h}"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (ow, oh) = (w / factor, h / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Image2D::from_fn(ow, oh, |ox, oy| {
        let mut acc = 0.0;
        for y in oy * factor..(oy + 1) * factor {
            for x in ox * factor..(ox + 1) * factor {
                acc += img.get(x, y);
            }
        }
        acc * norm
    })
}

/// Central `out_w × out_h` window, anchored so the input centre pixel lands on
/// the output centre pixel.
pub fn crop_center(img: &Image2D, out_w: usize, out_h: usize) -> Result<Image2D> {
    let (w, h) = (img.width(), img.height());
    if out_w == 0 || out_h == 0 || out_w > w || out_h > h {
        return invalid(format!("cannot crop {out_w}x{out_h} from {w}x{h}"));
    }
    let x0 = center_index(w) - center_index(out_w);
    let y0 = center_index(h) - center_index(out_h);
    Image2D::from_fn(out_w, out_h, |x, y| img.get(x0 + x, y0 + y))
}
