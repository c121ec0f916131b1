//! Full-reference image quality metrics on `[0, 1]` images.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Channel-averaged PSNR with peak 1.0, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr")?;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mse = a
            .channel(c)
            .iter()
            .zip(b.channel(c))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.pixels() as f64;
        total += if mse == 0.0 {
            PSNR_CAP_DB
        } else {
            (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
        };
    }
    Ok(total / a.channels() as f64)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Valid-region separable filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (k, t) in taps.iter().enumerate() {
            let line = &rows[(y + k) * ow..(y + k + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(line) {
                *o += t * v;
            }
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let taps = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, w, h, &taps);
    let mu_b = filter_valid(b, w, h, &taps);
    let e_aa = filter_valid(&prod(|x, _| x * x), w, h, &taps);
    let e_bb = filter_valid(&prod(|_, y| y * y), w, h, &taps);
    let e_ab = filter_valid(&prod(|x, y| x * y), w, h, &taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.len() as f64
}

/// Mean SSIM over all fully-contained 11x11 Gaussian windows, averaged over channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(CoreError::Input(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let total: f64 = (0..a.channels())
        .map(|c| ssim_plane(a.channel(c), b.channel(c), a.width(), a.height()))
        .sum();
    Ok(total / a.channels() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricReport {
    /// Scores each `(name, prediction, reference)` triple and averages.
    pub fn evaluate<'a>(
        items: impl IntoIterator<Item = (String, &'a Image, &'a Image)>,
    ) -> Result<Self> {
        let mut per_image = Vec::new();
        for (name, pred, reference) in items {
            per_image.push(ImageMetrics {
                psnr_db: psnr(pred, reference)?,
                ssim: ssim(pred, reference)?,
                name,
            });
        }
        Ok(Self::from_images(per_image))
    }

    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        MetricReport {
            psnr_db: per_image.iter().map(|m| m.psnr_db).sum::<f64>() / n,
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
            per_image,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per image followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "psnr_db", "ssim"]).expect("in-memory write");
        for m in &self.per_image {
            w.serialize((&m.name, m.psnr_db, m.ssim)).expect("in-memory write");
        }
        w.serialize(("mean", self.psnr_db, self.ssim)).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("csv is utf-8")
    }
}
