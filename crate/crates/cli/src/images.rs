use std::path::Path;

use anyhow::{Context as _, Result};
use drasic::autodiff::Tensor;
use image::GrayImage;

/// Reads a PNG or PGM as a `[1, 1, h, w]` grayscale batch in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|p| p as f32 / 255.0)
        .collect();
    Ok(Tensor::new(vec![1, 1, h as usize, w as usize], data)?)
}

/// Writes one `[1, 1, h, w]` image; the format follows the extension.
pub fn write_gray(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let [_, _, h, w] = image.dims4()?;
    let bytes = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).context("image buffer size")?;
    img.save(path)
        .with_context(|| format!("writing image {}", path.display()))
}
