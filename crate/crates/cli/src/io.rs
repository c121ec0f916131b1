use std::path::{Path, PathBuf};

use edeblur_core::formats::{pnm, tnsr};
use edeblur_core::Image;

use crate::error::{CliError, Result};

/// Frames named by number (`0.pgm`, `0001.ppm`, ...) in numeric order.
pub fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("pgm" | "ppm" | "pnm")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let k: u64 = stem
            .parse()
            .map_err(|_| CliError::input(format!("{}: frame names must be numbers", path.display())))?;
        numbered.push((k, path));
    }
    numbered.sort();
    if let Some(w) = numbered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(CliError::input(format!("{} and {} share frame number {}", w[0].1.display(), w[1].1.display(), w[0].0)));
    }
    if numbered.is_empty() {
        return Err(CliError::input(format!("{}: no PGM/PPM frames", dir.display())));
    }
    numbered.iter().map(|(_, p)| read_image(p)).collect()
}

pub fn read_image(path: &Path) -> Result<Image> {
    pnm::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    Ok(pnm::write(path, &image.clone().clamp01())?)
}

pub fn write_tensor_image(path: &Path, image: &Image) -> Result<()> {
    Ok(tnsr::write(path, &image.to_tensor())?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(edeblur_core::formats::write_file(path, text.as_bytes())?)
}

/// `MANIFEST:INDEX`
pub fn parse_sample(spec: &str) -> Result<(PathBuf, usize)> {
    let (m, i) = spec
        .rsplit_once(':')
        .ok_or_else(|| CliError::usage(format!("--sample expects MANIFEST:INDEX, got {spec:?}")))?;
    let idx = i
        .parse()
        .map_err(|_| CliError::usage(format!("--sample index {i:?} is not a number")))?;
    Ok((PathBuf::from(m), idx))
}

/// Image extension matching the channel count.
pub fn pnm_ext(image: &Image) -> &'static str {
    if image.channels() == 3 {
        "ppm"
    } else {
        "pgm"
    }
}
