use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// PSNR reported for a zero-error reconstruction.
pub const PSNR_CAP_DB: f64 = 100.0;

/// PSNR in dB of one image against its reconstruction, both clipped to
/// `[0, 1]` first. Capped at [`PSNR_CAP_DB`].
pub fn psnr_image(x: &[f32], y: &[f32]) -> f64 {
    let clip = |v: f32| v.clamp(0.0, 1.0) as f64;
    let mse = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = clip(a) - clip(b);
            d * d
        })
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Per-image PSNR of two `[n, ...]` batches.
pub fn psnr_per_image(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<Vec<f64>> {
    if x.shape() != y.shape() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ));
    }
    let n = x.shape().first().copied().unwrap_or(0).max(1);
    let per = x.len() / n;
    Ok(x.data()
        .chunks_exact(per)
        .zip(y.data().chunks_exact(per))
        .map(|(a, b)| psnr_image(a, b))
        .collect())
}

/// Mean over images of the per-image PSNR.
pub fn psnr(x: &Tensor<f32>, y: &Tensor<f32>) -> Result<f64> {
    let v = psnr_per_image(x, y)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-step mean and sample standard deviation across curves.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    /// `None` for a single curve.
    pub sd: Option<Vec<f64>>,
}

impl Band {
    pub fn lower(&self) -> Option<Vec<f64>> {
        self.sd
            .as_ref()
            .map(|sd| self.mean.iter().zip(sd).map(|(m, s)| m - s).collect())
    }

    pub fn upper(&self) -> Option<Vec<f64>> {
        self.sd
            .as_ref()
            .map(|sd| self.mean.iter().zip(sd).map(|(m, s)| m + s).collect())
    }
}

/// Mean curve with a `±1` sample-standard-deviation band across sources.
pub fn confidence_band(curves: &[Vec<f64>]) -> Result<Band> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to aggregate".into()))?;
    if curves.iter().any(|c| c.len() != first.len()) {
        return Err(Error::InvalidArgument("curves differ in length".into()));
    }
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..first.len())
        .map(|t| curves.iter().map(|c| c[t]).sum::<f64>() / n)
        .collect();
    let sd = (curves.len() > 1).then(|| {
        (0..first.len())
            .map(|t| {
                let ss: f64 = curves.iter().map(|c| (c[t] - mean[t]).powi(2)).sum();
                (ss / (n - 1.0)).sqrt()
            })
            .collect()
    });
    Ok(Band { mean, sd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_arithmetic() {
        let x = Tensor::full(&[1, 1, 2, 2], 0.5f32);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        // |d| = 0.1 everywhere: MSE 0.01 -> 20 dB.
        let y = Tensor::full(&[1, 1, 2, 2], 0.6f32);
        assert!((psnr(&x, &y).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&x, &Tensor::zeros(&[2, 1, 2, 2])).is_err());
    }

    #[test]
    fn psnr_clips_before_comparing() {
        let x = Tensor::full(&[1, 1, 1, 4], 1.0f32);
        let y = Tensor::full(&[1, 1, 1, 4], 1.7f32);
        assert_eq!(psnr(&x, &y).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn band_arithmetic() {
        let b = confidence_band(&[vec![20.0, 1.0], vec![22.0, 1.0]]).unwrap();
        assert_eq!(b.mean, vec![21.0, 1.0]);
        let sd = b.sd.unwrap();
        assert!((sd[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(sd[1], 0.0);
        let single = confidence_band(&[vec![3.0]]).unwrap();
        assert_eq!(single.sd, None);
        assert!(confidence_band(&[]).is_err());
        assert!(confidence_band(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
