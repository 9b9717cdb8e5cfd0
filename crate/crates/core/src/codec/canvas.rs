//! Zero-padding images up to the code grid and cropping them back.

use super::arch::DOWNSAMPLE;
use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Smallest multiple of the downsampling factor that is `>= side`.
pub fn padded_side(side: usize) -> usize {
    side.div_ceil(DOWNSAMPLE) * DOWNSAMPLE
}

/// Places each `[c, h, w]` image in the top-left corner of a zero canvas of
/// `height x width`.
pub fn pad_images<F: Scalar>(images: &Tensor<F>, height: usize, width: usize) -> Result<Tensor<F>> {
    let [n, c, h, w] = images.dims4()?;
    if height < h || width < w {
        return Err(Error::shape(
            "pad_images",
            format!("cannot pad {h}x{w} images into a {height}x{width} canvas"),
        ));
    }
    if (height, width) == (h, w) {
        return Ok(images.clone());
    }
    let mut out = vec![F::zero(); n * c * height * width];
    for plane in 0..n * c {
        let src = &images.data()[plane * h * w..][..h * w];
        let dst = &mut out[plane * height * width..][..height * width];
        for y in 0..h {
            dst[y * width..y * width + w].copy_from_slice(&src[y * w..][..w]);
        }
    }
    Tensor::new(vec![n, c, height, width], out)
}

/// Pads to the next multiple of the downsampling factor on both axes.
pub fn pad_to_grid<F: Scalar>(images: &Tensor<F>) -> Result<Tensor<F>> {
    let [_, _, h, w] = images.dims4()?;
    pad_images(images, padded_side(h), padded_side(w))
}

/// Inverse of [`pad_images`]: keeps the top-left `height x width` region.
pub fn crop_images<F: Scalar>(
    images: &Tensor<F>,
    height: usize,
    width: usize,
) -> Result<Tensor<F>> {
    let [n, c, h, w] = images.dims4()?;
    if height > h || width > w || height == 0 || width == 0 {
        return Err(Error::shape(
            "crop_images",
            format!("cannot crop {h}x{w} images to {height}x{width}"),
        ));
    }
    let mut out = Vec::with_capacity(n * c * height * width);
    for plane in 0..n * c {
        let src = &images.data()[plane * h * w..][..h * w];
        for y in 0..height {
            out.extend_from_slice(&src[y * w..y * w + width]);
        }
    }
    Tensor::new(vec![n, c, height, width], out)
}
