use super::mnist::Dataset;
use super::split::SourceSplit;
use crate::error::{Error, Result};

/// Mean flattened image of every source.
pub fn source_means(split: &SourceSplit, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    split.check_matches(dataset)?;
    let per = dataset.images.len() / dataset.len().max(1);
    let px = dataset.images.data();
    split
        .source_indices()
        .iter()
        .enumerate()
        .map(|(s, idx)| {
            if idx.is_empty() {
                return Err(Error::Data(format!("source {s} is empty")));
            }
            let mut mean = vec![0.0f64; per];
            for &i in idx {
                for (m, &p) in mean.iter_mut().zip(&px[i * per..(i + 1) * per]) {
                    *m += p as f64;
                }
            }
            mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
            Ok(mean)
        })
        .collect()
}

/// Pearson correlation of two equal-length vectors; `None` when either has
/// zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// `M x M` correlation between per-source mean images. The diagonal is
/// exactly 1 and the matrix is exactly symmetric.
pub fn pearson_matrix(split: &SourceSplit, dataset: &Dataset) -> Result<Vec<Vec<f64>>> {
    let means = source_means(split, dataset)?;
    let m = means.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        if pearson(&means[i], &means[i]).is_none() {
            return Err(Error::Data(format!(
                "mean image of source {i} is constant; its correlation is undefined"
            )));
        }
        out[i][i] = 1.0;
        for j in 0..i {
            let r = pearson(&means[i], &means[j]).expect("variances checked above");
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    Ok(out)
}

/// Population variance of the strictly off-diagonal entries.
pub fn off_diagonal_variance(matrix: &[Vec<f64>]) -> f64 {
    let vals: Vec<f64> = matrix
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(move |(j, _)| *j != i)
                .map(|(_, &v)| v)
        })
        .collect();
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{split_by_label, DataSplit};

    #[test]
    fn pearson_basics() {
        approx::assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        approx::assert_abs_diff_eq!(
            pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn matrix_symmetric_unit_diagonal() {
        let ds = Dataset::new(
            "toy",
            DataSplit::Train,
            Tensor::from_fn(&[40, 1, 3, 3], |i| ((i * i) % 13) as f32 / 13.0),
            (0..40).map(|i| (i % 4) as u8).collect(),
        )
        .unwrap();
        let m = pearson_matrix(&split_by_label(&ds, 4).unwrap(), &ds).unwrap();
        for i in 0..4 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..4 {
                assert_eq!(m[i][j], m[j][i]);
                assert!((-1.0..=1.0).contains(&m[i][j]));
            }
        }
    }

    #[test]
    fn constant_mean_rejected() {
        let ds = Dataset::new(
            "flat",
            DataSplit::Train,
            Tensor::full(&[4, 1, 2, 2], 0.5f32),
            vec![0, 1, 0, 1],
        )
        .unwrap();
        assert!(pearson_matrix(&split_by_label(&ds, 2).unwrap(), &ds).is_err());
    }

    #[test]
    fn off_diagonal_variance_ignores_diagonal() {
        let m = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
        assert_eq!(off_diagonal_variance(&m), 0.0);
    }
}
