//! Scalable code container.
//!
//! ```text
//! "DRSC" | version u8 | orig_h u32 | orig_w u32 | channels u32
//! padded_h u32 | padded_w u32 | code_bits u32 | iterations u32
//! source_id u32 | model_hash u64 | payload
//! ```
//!
//! Integers are little-endian. The payload holds one block per iteration,
//! iteration-major, so keeping the first `t` blocks is a byte-prefix cut.
//! Inside a block the codes of one image are flattened channel-major then
//! row-major and packed most-significant bit first (`+1` is bit 1); the last
//! byte of each block is zero-padded.

use std::fs;
use std::path::Path;

use crate::codec::{CodeTensor, DOWNSAMPLE};
use crate::error::{Error, Result};

pub const STREAM_MAGIC: &[u8; 4] = b"DRSC";
pub const STREAM_VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 4 + 1 + 8 * 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub orig_height: usize,
    pub orig_width: usize,
    pub channels: usize,
    pub padded_height: usize,
    pub padded_width: usize,
    pub code_bits: usize,
    /// Number of iteration blocks stored.
    pub iterations: usize,
    pub source_id: usize,
    /// Fingerprint of the decoder parameters the codes were made for.
    pub model_hash: u64,
}

impl StreamHeader {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.iterations == 0 {
            return bad("stream stores no iterations".into());
        }
        if self.padded_height == 0
            || self.padded_width == 0
            || self.padded_height % DOWNSAMPLE != 0
            || self.padded_width % DOWNSAMPLE != 0
        {
            return bad(format!(
                "padded size {}x{} is not a positive multiple of {DOWNSAMPLE}",
                self.padded_height, self.padded_width
            ));
        }
        if self.orig_height == 0
            || self.orig_width == 0
            || self.orig_height > self.padded_height
            || self.orig_width > self.padded_width
        {
            return bad(format!(
                "original size {}x{} does not fit the {}x{} canvas",
                self.orig_height, self.orig_width, self.padded_height, self.padded_width
            ));
        }
        if self.code_bits == 0 || self.channels == 0 {
            return bad("code_bits and channels must be positive".into());
        }
        Ok(())
    }

    /// Code shape of one image and one iteration.
    pub fn code_shape(&self) -> [usize; 4] {
        [
            1,
            self.code_bits,
            self.padded_height / DOWNSAMPLE,
            self.padded_width / DOWNSAMPLE,
        ]
    }

    pub fn bits_per_block(&self) -> usize {
        self.code_shape().iter().product()
    }

    pub fn block_bytes(&self) -> usize {
        self.bits_per_block().div_ceil(8)
    }
}

/// Which pixel count divides the bit count in [`bpp_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BppDenominator {
    /// The padded canvas the codec and PSNR operate on.
    Padded,
    /// The image before padding.
    Original,
}

impl BppDenominator {
    pub fn as_str(self) -> &'static str {
        match self {
            BppDenominator::Padded => "padded",
            BppDenominator::Original => "original",
        }
    }
}

impl std::str::FromStr for BppDenominator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "padded" => Ok(BppDenominator::Padded),
            "original" => Ok(BppDenominator::Original),
            _ => Err(Error::InvalidArgument(format!(
                "unknown bpp denominator {s:?} (padded or original)"
            ))),
        }
    }
}

/// Bits per pixel after `t` iterations over the padded canvas.
pub fn bpp(header: &StreamHeader, t: usize) -> f64 {
    bpp_with(header, t, BppDenominator::Padded)
}

pub fn bpp_with(header: &StreamHeader, t: usize, denominator: BppDenominator) -> f64 {
    let pixels = match denominator {
        BppDenominator::Padded => header.padded_height * header.padded_width,
        BppDenominator::Original => header.orig_height * header.orig_width,
    };
    (t * header.bits_per_block()) as f64 / pixels as f64
}

/// Header plus `iterations` packed code blocks of a single image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalableStream {
    pub header: StreamHeader,
    pub payload: Vec<u8>,
}

/// Packs the code blocks of one image (iterations `1..=T`, each shaped
/// `[1, code_bits, H/8, W/8]`).
pub fn pack(codes: &[CodeTensor], header: StreamHeader) -> Result<ScalableStream> {
    header.validate()?;
    if codes.len() != header.iterations {
        return Err(Error::InvalidArgument(format!(
            "header promises {} iterations, got {} code blocks",
            header.iterations,
            codes.len()
        )));
    }
    let want = header.code_shape();
    let block = header.block_bytes();
    let mut payload = vec![0u8; block * codes.len()];
    for (t, c) in codes.iter().enumerate() {
        if c.iteration != t + 1 {
            return Err(Error::InvalidArgument(format!(
                "block {} holds iteration {}; codes must be the prefix 1..={}",
                t + 1,
                c.iteration,
                codes.len()
            )));
        }
        if c.shape() != want {
            return Err(Error::shape(
                "pack",
                format!(
                    "code block {} is {:?}, header implies {want:?}",
                    t + 1,
                    c.shape()
                ),
            ));
        }
        let out = &mut payload[t * block..(t + 1) * block];
        for (i, &v) in c.values().iter().enumerate() {
            if v > 0 {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
    }
    Ok(ScalableStream { header, payload })
}

/// Packs every image of a batch of code blocks (each `[n, code_bits, H/8,
/// W/8]`) into its own stream, all sharing `header`.
pub fn pack_batch(codes: &[CodeTensor], header: StreamHeader) -> Result<Vec<ScalableStream>> {
    let n = codes.first().map_or(0, |c| c.shape()[0]);
    (0..n)
        .map(|i| {
            let per_image = codes
                .iter()
                .map(|c| c.slice_batch(i, 1))
                .collect::<Result<Vec<_>>>()?;
            pack(&per_image, header)
        })
        .collect()
}

/// Inverse of [`pack`].
pub fn unpack(stream: &ScalableStream) -> Result<Vec<CodeTensor>> {
    let h = &stream.header;
    h.validate()?;
    let block = h.block_bytes();
    if stream.payload.len() != block * h.iterations {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            stream.payload.len(),
            block * h.iterations
        )));
    }
    let bits = h.bits_per_block();
    (0..h.iterations)
        .map(|t| {
            let bytes = &stream.payload[t * block..(t + 1) * block];
            let values = (0..bits)
                .map(|i| {
                    if bytes[i / 8] & (0x80 >> (i % 8)) != 0 {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            CodeTensor::new(t + 1, h.code_shape(), values)
        })
        .collect()
}

/// Keeps the first `t` iteration blocks.
pub fn truncate(stream: &ScalableStream, t: usize) -> Result<ScalableStream> {
    if t == 0 || t > stream.header.iterations {
        return Err(Error::InvalidArgument(format!(
            "cannot truncate a {}-iteration stream to {t}",
            stream.header.iterations
        )));
    }
    let mut header = stream.header;
    header.iterations = t;
    Ok(ScalableStream {
        header,
        payload: stream.payload[..t * header.block_bytes()].to_vec(),
    })
}

impl ScalableStream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_BYTES + self.payload.len());
        out.extend_from_slice(STREAM_MAGIC);
        out.push(STREAM_VERSION);
        for v in [
            h.orig_height,
            h.orig_width,
            h.channels,
            h.padded_height,
            h.padded_width,
            h.code_bits,
            h.iterations,
            h.source_id,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&h.model_hash.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 || &bytes[..4] != STREAM_MAGIC {
            return Err(Error::Format("not a DRSC stream (bad magic)".into()));
        }
        if bytes[4] != STREAM_VERSION {
            return Err(Error::Format(format!(
                "stream version {} is not supported (expected {STREAM_VERSION})",
                bytes[4]
            )));
        }
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Format(format!(
                "stream header truncated: {} of {HEADER_BYTES} bytes",
                bytes.len()
            )));
        }
        let u =
            |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
        let header = StreamHeader {
            orig_height: u(0),
            orig_width: u(1),
            channels: u(2),
            padded_height: u(3),
            padded_width: u(4),
            code_bits: u(5),
            iterations: u(6),
            source_id: u(7),
            model_hash: u64::from_le_bytes(bytes[37..45].try_into().unwrap()),
        };
        header.validate()?;
        let stream = ScalableStream {
            header,
            payload: bytes[HEADER_BYTES..].to_vec(),
        };
        if stream.payload.len() != header.block_bytes() * header.iterations {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {}",
                stream.payload.len(),
                header.block_bytes() * header.iterations
            )));
        }
        Ok(stream)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(t: usize) -> StreamHeader {
        StreamHeader {
            orig_height: 28,
            orig_width: 28,
            channels: 1,
            padded_height: 32,
            padded_width: 32,
            code_bits: 2,
            iterations: t,
            source_id: 3,
            model_hash: 0xdead_beef_0123_4567,
        }
    }

    fn codes(t: usize, f: impl Fn(usize, usize) -> i8) -> Vec<CodeTensor> {
        (0..t)
            .map(|it| {
                CodeTensor::new(it + 1, [1, 2, 4, 4], (0..32).map(|i| f(it, i)).collect()).unwrap()
            })
            .collect()
    }

    #[test]
    fn one_block_is_four_bytes() {
        let s = pack(&codes(1, |_, _| 1), header(1)).unwrap();
        assert_eq!(s.payload, vec![0xff; 4]);
        let s = pack(&codes(1, |_, i| if i == 0 { 1 } else { -1 }), header(1)).unwrap();
        assert_eq!(s.payload, vec![0x80, 0, 0, 0]);
    }

    #[test]
    fn bpp_values() {
        assert_eq!(bpp(&header(16), 1), 0.03125);
        assert_eq!(bpp(&header(16), 16), 0.5);
        assert!((bpp_with(&header(16), 1, BppDenominator::Original) - 32.0 / 784.0).abs() < 1e-15);
    }

    #[test]
    fn header_and_shape_checks() {
        assert!(pack(&codes(2, |_, _| 1), header(3)).is_err());
        let mut c = codes(2, |_, _| 1);
        c.swap(0, 1);
        assert!(pack(&c, header(2)).is_err());
        let mut h = header(1);
        h.padded_width = 30;
        assert!(pack(&codes(1, |_, _| 1), h).is_err());
    }

    #[test]
    fn bytes_round_trip_and_rejects_damage() {
        let s = pack(
            &codes(3, |t, i| if (t + i) % 3 == 0 { 1 } else { -1 }),
            header(3),
        )
        .unwrap();
        let b = s.to_bytes();
        assert_eq!(ScalableStream::from_bytes(&b).unwrap(), s);
        assert!(ScalableStream::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(ScalableStream::from_bytes(&b[..20]).is_err());
        let mut bad = b.clone();
        bad[1] = b'X';
        assert!(ScalableStream::from_bytes(&bad).is_err());
        let mut ver = b;
        ver[4] = 7;
        assert!(ScalableStream::from_bytes(&ver).is_err());
    }

    #[test]
    fn truncate_bounds() {
        let s = pack(&codes(4, |_, _| -1), header(4)).unwrap();
        assert_eq!(truncate(&s, 4).unwrap(), s);
        assert!(truncate(&s, 0).is_err());
        assert!(truncate(&s, 5).is_err());
    }
}
