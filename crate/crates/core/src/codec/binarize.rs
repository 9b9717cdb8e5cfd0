use rand::Rng;

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinarizeMode {
    /// `+1` with probability `(1 + z) / 2`, else `-1`.
    Stochastic,
    /// `sign(z)`, with `z = 0` mapped to `+1`.
    Deterministic,
    /// Passes `z` through unchanged. Only meaningful for checking gradients
    /// of the straight-through path against finite differences.
    Relaxed,
}

/// Binary bottleneck codes of one iteration, every element `-1` or `+1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeTensor {
    /// 1-based iteration that produced the codes.
    pub iteration: usize,
    shape: [usize; 4],
    values: Vec<i8>,
}

impl CodeTensor {
    pub fn new(iteration: usize, shape: [usize; 4], values: Vec<i8>) -> Result<Self> {
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(
                "code tensor",
                format!(
                    "{shape:?} needs {} values, got {}",
                    shape.iter().product::<usize>(),
                    values.len()
                ),
            ));
        }
        if let Some(bad) = values.iter().find(|&&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(format!(
                "code value {bad} is not -1 or +1"
            )));
        }
        Ok(CodeTensor {
            iteration,
            shape,
            values,
        })
    }

    pub fn from_tensor<F: Scalar>(iteration: usize, t: &Tensor<F>) -> Result<Self> {
        let shape = t.dims4()?;
        let values = t
            .data()
            .iter()
            .map(|&v| {
                if v == F::one() {
                    Ok(1)
                } else if v == -F::one() {
                    Ok(-1)
                } else {
                    Err(Error::InvalidArgument(format!(
                        "{v:?} is not a binary code"
                    )))
                }
            })
            .collect::<Result<Vec<i8>>>()?;
        Ok(CodeTensor {
            iteration,
            shape,
            values,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn to_tensor<F: Scalar>(&self) -> Tensor<F> {
        Tensor::new(
            self.shape.to_vec(),
            self.values
                .iter()
                .map(|&v| if v > 0 { F::one() } else { -F::one() })
                .collect(),
        )
        .expect("validated shape")
    }

    /// Codes of images `start..start + len`.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.shape;
        if len == 0 || start + len > n {
            return Err(Error::shape(
                "code slice",
                format!("{start}+{len} outside batch {n}"),
            ));
        }
        let per = c * h * w;
        Ok(CodeTensor {
            iteration: self.iteration,
            shape: [len, c, h, w],
            values: self.values[start * per..(start + len) * per].to_vec(),
        })
    }
}

/// Quantizes `z` (elementwise in `[-1, 1]`) to `{-1, +1}`.
pub fn binarize_values<F: Scalar>(
    z: &Tensor<F>,
    mode: BinarizeMode,
    rng: &mut impl Rng,
) -> Result<Tensor<F>> {
    if let Some(v) = z.data().iter().find(|v| v.is_nan() || v.abs() > F::one()) {
        return Err(Error::InvalidArgument(format!(
            "binarizer input {v:?} lies outside [-1, 1]; the bottleneck must end in tanh"
        )));
    }
    let one = F::one();
    Ok(match mode {
        BinarizeMode::Relaxed => z.clone(),
        BinarizeMode::Deterministic => z.map(|v| if v >= F::zero() { one } else { -one }),
        BinarizeMode::Stochastic => {
            let half = F::lit(0.5);
            let data = z
                .data()
                .iter()
                .map(|&v| {
                    let u = F::lit(rng.gen::<f64>());
                    if u < (one + v) * half {
                        one
                    } else {
                        -one
                    }
                })
                .collect();
            Tensor::new(z.shape().to_vec(), data)?
        }
    })
}

/// Graph binarizer with a straight-through (identity) gradient.
pub fn binarize<F: Scalar>(
    g: &mut Graph<F>,
    z: Var,
    mode: BinarizeMode,
    rng: &mut impl Rng,
) -> Result<Var> {
    let b = binarize_values(g.value(z), mode, rng)?;
    g.straight_through(z, b)
}
