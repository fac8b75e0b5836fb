//! Grayscale image I/O: 8/16-bit PNG and binary PGM in, 16-bit PNG plus a
//! raw float sidecar out. The sidecar avoids quantisation in test pipelines:
//! a 16-byte little-endian header (magic `TVIC`, u32 rows, u32 cols, u32
//! reserved) followed by row-major f64 samples.

use crate::CliError;
use image::DynamicImage;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use tvic::ImageGrid;

const MAGIC: &[u8; 4] = b"TVIC";

pub fn load_grid(path: &Path) -> Result<ImageGrid, CliError> {
    if path.extension().and_then(|e| e.to_str()) == Some("tvic") {
        return load_sidecar(path);
    }
    let img = image::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (rows, cols, data) = match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            (h as usize, w as usize, data)
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
            (h as usize, w as usize, data)
        }
        other => {
            return Err(CliError::Io(format!(
                "{}: unsupported pixel format {:?} (grayscale 8/16-bit expected)",
                path.display(),
                other.color()
            )))
        }
    };
    ImageGrid::new(rows, cols, data).map_err(|e| CliError::Io(e.to_string()))
}

pub fn save_png16(grid: &ImageGrid, path: &Path) -> Result<(), CliError> {
    let (rows, cols) = grid.shape();
    let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(cols as u32, rows as u32);
    for (k, px) in buf.pixels_mut().enumerate() {
        let x = grid.as_slice()[k].clamp(0.0, 1.0);
        px.0[0] = (x * 65535.0).round() as u16;
    }
    buf.save(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn save_sidecar(grid: &ImageGrid, path: &Path) -> Result<(), CliError> {
    let mut out = Vec::with_capacity(16 + grid.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &x in grid.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn load_sidecar(path: &Path) -> Result<ImageGrid, CliError> {
    let mut file =
        fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if &header[0..4] != MAGIC {
        return Err(CliError::Io(format!("{}: bad magic", path.display())));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if raw.len() != rows * cols * 8 {
        return Err(CliError::Io(format!(
            "{}: payload is {} bytes, expected {}",
            path.display(),
            raw.len(),
            rows * cols * 8
        )));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageGrid::new(rows, cols, data).map_err(|e| CliError::Io(e.to_string()))
}

/// Writes both the 16-bit PNG and the raw sidecar for `stem`.
pub fn save_outputs(grid: &ImageGrid, dir: &Path, stem: &str) -> Result<(), CliError> {
    save_png16(grid, &dir.join(format!("{stem}.png")))?;
    save_sidecar(grid, &dir.join(format!("{stem}.tvic")))
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut f =
        fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
