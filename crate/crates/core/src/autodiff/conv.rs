//! 2-D convolution kernels (NCHW, weights `[out, in, k, k]`) lowered to GEMM
//! through im2col over chunks of the batch.

use super::tensor::{gemm, Mat, Scalar};
use crate::error::{Error, Result};

/// Geometry of one square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if kernel_size == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv spec needs positive channels, kernel and stride \
                 (in {in_channels}, out {out_channels}, kernel {kernel_size}, stride {stride})"
            )));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        })
    }

    /// "Same" convolution: odd kernel, stride 1, padding `k / 2`.
    pub fn same(in_channels: usize, out_channels: usize, kernel_size: usize) -> Result<Self> {
        Self::new(in_channels, out_channels, kernel_size, 1, kernel_size / 2)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    /// `floor((in + 2 * padding - kernel) / stride) + 1`, rejected when < 1.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "spatial size {input} with padding {} is smaller than kernel {}",
                    self.padding, self.kernel_size
                ),
            ));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    /// Validates input/weight/bias shapes and returns the output shape.
    pub fn check(
        &self,
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
    ) -> Result<[usize; 4]> {
        let &[n, c, h, w] = input else {
            return Err(Error::shape(
                "conv2d",
                format!("input must have 4 axes (batch, channel, height, width), got {input:?}"),
            ));
        };
        if c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channel axis is {c} but spec expects {}",
                    self.in_channels
                ),
            ));
        }
        if weight != self.weight_shape() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weight axes (out, in, kh, kw) are {weight:?} but spec expects {:?}",
                    self.weight_shape()
                ),
            ));
        }
        if let Some(b) = bias {
            if b != [self.out_channels] {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "bias axis is {b:?} but spec expects [{}]",
                        self.out_channels
                    ),
                ));
            }
        }
        Ok([
            n,
            self.out_channels,
            self.output_size(h)?,
            self.output_size(w)?,
        ])
    }
}

const CHUNK_ELEMS: usize = 1 << 21;

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(spec: &ConvSpec, input: [usize; 4]) -> Result<Self> {
        let [n, c, h, w] = input;
        Ok(Geometry {
            n,
            c,
            h,
            w,
            ho: spec.output_size(h)?,
            wo: spec.output_size(w)?,
            k: spec.kernel_size,
            stride: spec.stride,
            pad: spec.padding,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk(&self) -> usize {
        (CHUNK_ELEMS / (self.rows() * self.plane()).max(1)).clamp(1, self.n)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// cols[(c, ky, kx), (img, oy, ox)] for images `i0..i0 + nc`.
    fn im2col<F: Scalar>(&self, x: &[F], i0: usize, nc: usize, cols: &mut [F]) {
        let (p, cols_w) = (self.plane(), nc * self.plane());
        let hw = self.h * self.w;
        if self.is_pointwise() {
            for ch in 0..self.c {
                let row = &mut cols[ch * cols_w..(ch + 1) * cols_w];
                for j in 0..nc {
                    let src = &x[((i0 + j) * self.c + ch) * hw..][..hw];
                    row[j * p..(j + 1) * p].copy_from_slice(src);
                }
            }
            return;
        }
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ch * self.k + ky) * self.k + kx;
                    let row = &mut cols[r * cols_w..(r + 1) * cols_w];
                    let (lo, hi) = self.valid_cols(kx);
                    for j in 0..nc {
                        let img = &x[((i0 + j) * self.c + ch) * hw..][..hw];
                        for oy in 0..self.ho {
                            let dst = &mut row[j * p + oy * self.wo..][..self.wo];
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                dst.fill(F::zero());
                                continue;
                            }
                            let src = &img[iy as usize * self.w..][..self.w];
                            dst[..lo].fill(F::zero());
                            dst[hi..].fill(F::zero());
                            if lo < hi {
                                let start = lo * self.stride + kx - self.pad;
                                if self.stride == 1 {
                                    dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                                } else {
                                    for (d, &v) in dst[lo..hi]
                                        .iter_mut()
                                        .zip(src[start..].iter().step_by(self.stride))
                                    {
                                        *d = v;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose kernel tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Scatter-adds column gradients back into `dx`.
    fn col2im<F: Scalar>(&self, cols: &[F], i0: usize, nc: usize, dx: &mut [F]) {
        let (p, cols_w) = (self.plane(), nc * self.plane());
        let hw = self.h * self.w;
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ch * self.k + ky) * self.k + kx;
                    let row = &cols[r * cols_w..(r + 1) * cols_w];
                    let (lo, hi) = self.valid_cols(kx);
                    for j in 0..nc {
                        let img = &mut dx[((i0 + j) * self.c + ch) * hw..][..hw];
                        for oy in 0..self.ho {
                            let src = &row[j * p + oy * self.wo..][..self.wo];
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let dst = &mut img[iy as usize * self.w..][..self.w];
                            if lo < hi {
                                let start = lo * self.stride + kx - self.pad;
                                for (d, &g) in dst[start..]
                                    .iter_mut()
                                    .step_by(self.stride)
                                    .zip(&src[lo..hi])
                                {
                                    *d = *d + g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Grows `buf` to at least `len` elements and returns that prefix. Contents
/// are stale; callers overwrite them.
fn scratch<F: Scalar>(buf: &mut Vec<F>, len: usize) -> &mut [F] {
    if buf.len() < len {
        buf.resize(len, F::zero());
    }
    &mut buf[..len]
}

/// Forward convolution; returns the NCHW output and its shape.
pub(crate) fn conv2d_forward<F: Scalar>(
    x: &[F],
    input: [usize; 4],
    weight: &[F],
    bias: Option<&[F]>,
    spec: &ConvSpec,
    bufs: &mut ConvScratch<F>,
) -> Result<(Vec<F>, [usize; 4])> {
    let g = Geometry::new(spec, input)?;
    let o = spec.out_channels;
    let p = g.plane();
    let mut out = Vec::with_capacity(g.n * o * p);
    let chunk = g.chunk();
    let wmat = Mat::new(weight, o, g.rows());
    for i0 in (0..g.n).step_by(chunk) {
        let nc = chunk.min(g.n - i0);
        let cols = scratch(&mut bufs.cols, g.rows() * nc * p);
        let tmp = scratch(&mut bufs.mat, o * nc * p);
        g.im2col(x, i0, nc, cols);
        gemm(wmat, Mat::new(cols, g.rows(), nc * p), F::zero(), tmp);
        for j in 0..nc {
            for oc in 0..o {
                let b = bias.map_or(F::zero(), |b| b[oc]);
                let src = &tmp[oc * nc * p + j * p..][..p];
                out.extend(src.iter().map(|&s| s + b));
            }
        }
    }
    Ok((out, [g.n, o, g.ho, g.wo]))
}

/// Reusable im2col and GEMM buffers.
pub(crate) struct ConvScratch<F> {
    cols: Vec<F>,
    mat: Vec<F>,
}

impl<F> Default for ConvScratch<F> {
    fn default() -> Self {
        ConvScratch {
            cols: Vec::new(),
            mat: Vec::new(),
        }
    }
}

/// Gradients requested from [`conv2d_backward`]; each buffer is accumulated into.
pub(crate) struct ConvGrads<'a, F> {
    pub input: Option<&'a mut [F]>,
    pub weight: Option<&'a mut [F]>,
    pub bias: Option<&'a mut [F]>,
}

pub(crate) fn conv2d_backward<F: Scalar>(
    x: &[F],
    input: [usize; 4],
    weight: &[F],
    spec: &ConvSpec,
    grad_out: &[F],
    grads: ConvGrads<'_, F>,
    bufs: &mut ConvScratch<F>,
) -> Result<()> {
    let g = Geometry::new(spec, input)?;
    let o = spec.out_channels;
    let p = g.plane();
    let chunk = g.chunk();
    let ConvGrads {
        input: mut dx,
        weight: mut dw,
        bias: mut db,
    } = grads;
    let wmat = Mat::new(weight, o, g.rows());
    for i0 in (0..g.n).step_by(chunk) {
        let nc = chunk.min(g.n - i0);
        let gm = scratch(&mut bufs.mat, o * nc * p);
        for j in 0..nc {
            for oc in 0..o {
                gm[oc * nc * p + j * p..][..p]
                    .copy_from_slice(&grad_out[((i0 + j) * o + oc) * p..][..p]);
            }
        }
        if let Some(db) = db.as_deref_mut() {
            for oc in 0..o {
                let s: F = gm[oc * nc * p..(oc + 1) * nc * p].iter().copied().sum();
                db[oc] = db[oc] + s;
            }
        }
        let cols = scratch(&mut bufs.cols, g.rows() * nc * p);
        if let Some(dw) = dw.as_deref_mut() {
            g.im2col(x, i0, nc, cols);
            gemm(
                Mat::new(gm, o, nc * p),
                Mat::new(cols, g.rows(), nc * p).t(),
                F::one(),
                dw,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            gemm(wmat.t(), Mat::new(gm, o, nc * p), F::zero(), cols);
            g.col2im(cols, i0, nc, dx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution, used as an oracle.
    fn naive(x: &[f64], input: [usize; 4], w: &[f64], b: &[f64], s: &ConvSpec) -> Vec<f64> {
        let [n, c, h, wd] = input;
        let ho = s.output_size(h).unwrap();
        let wo = s.output_size(wd).unwrap();
        let k = s.kernel_size;
        let mut out = vec![0.0; n * s.out_channels * ho * wo];
        for i in 0..n {
            for oc in 0..s.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[oc];
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd
                                    {
                                        acc += x
                                            [((i * c + ic) * h + iy as usize) * wd + ix as usize]
                                            * w[((oc * c + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((i * s.out_channels + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_loops() {
        let cases = [
            (ConvSpec::new(3, 4, 3, 2, 1).unwrap(), [2, 3, 7, 6]),
            (ConvSpec::new(2, 5, 1, 1, 0).unwrap(), [3, 2, 4, 4]),
            (ConvSpec::new(1, 2, 3, 1, 1).unwrap(), [1, 1, 5, 5]),
            (ConvSpec::new(2, 3, 2, 3, 0).unwrap(), [2, 2, 8, 7]),
        ];
        for (spec, input) in cases {
            let len: usize = input.iter().product();
            let x: Vec<f64> = (0..len)
                .map(|i| ((i * 37) % 11) as f64 / 7.0 - 0.6)
                .collect();
            let w: Vec<f64> = (0..spec.weight_shape().iter().product::<usize>())
                .map(|i| ((i * 13) % 17) as f64 / 9.0 - 0.9)
                .collect();
            let b: Vec<f64> = (0..spec.out_channels).map(|i| i as f64 * 0.1).collect();
            let (got, _) =
                conv2d_forward(&x, input, &w, Some(&b), &spec, &mut ConvScratch::default())
                    .unwrap();
            let want = naive(&x, input, &w, &b, &spec);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn output_size_formula() {
        let s = ConvSpec::new(1, 1, 3, 2, 1).unwrap();
        assert_eq!(s.output_size(32).unwrap(), 16);
        assert_eq!(s.output_size(7).unwrap(), 4);
        let s = ConvSpec::new(1, 1, 5, 1, 0).unwrap();
        assert!(s.output_size(4).is_err());
    }

    #[test]
    fn rejects_bad_specs_and_shapes() {
        assert!(ConvSpec::new(1, 1, 0, 1, 0).is_err());
        assert!(ConvSpec::new(1, 1, 3, 0, 0).is_err());
        let s = ConvSpec::new(3, 4, 3, 1, 1).unwrap();
        let err = s.check(&[1, 2, 8, 8], &[4, 3, 3, 3], None).unwrap_err();
        assert!(err.to_string().contains("channel"), "{err}");
        let err = s.check(&[1, 3, 8, 8], &[4, 3, 1, 3], None).unwrap_err();
        assert!(err.to_string().contains("weight"), "{err}");
    }
}
