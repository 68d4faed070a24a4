//! Dense row-major `f32` tensors, their byte format, and RGB image buffers.
//!
//! # Byte format
//!
//! All multi-byte fields are little-endian:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 6         | magic `b"UGVT\x00\x01"`                 |
//! | 6      | 2         | reserved, must be zero                  |
//! | 8      | 1         | `ndim` (u8, ≥ 1)                        |
//! | 9      | 4 × ndim  | dims, outermost first (u32, each ≥ 1)   |
//! | …      | 4 × numel | payload, `f32` row-major, no padding    |
//!
//! Floats are copied by bit pattern, so NaN payloads survive a round trip.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

pub const MAGIC: [u8; 6] = *b"UGVT\x00\x01";
pub const HEADER_FIXED_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("invalid dims {0:?}: need at least one dimension and every dim >= 1")]
    InvalidDims(Vec<usize>),
    #[error("shape mismatch: dims {dims:?} hold {expected} elements, got {found}")]
    LengthMismatch {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("shape error: {0}")]
    Shape(alloc::string::String),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("malformed header: {0}")]
    Format(&'static str),
    #[error("truncated tensor data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension product overflows")]
    Overflow,
}

/// Dense row-major tensor of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn checked_numel(dims: &[usize]) -> Result<usize, TensorError> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::InvalidDims(dims.to_vec()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(TensorError::Overflow)
}

impl Tensor {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self, TensorError> {
        let dims = dims.into();
        let n = checked_numel(&dims)?;
        if n != data.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                expected: n,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: f32) -> Result<Self, TensorError> {
        let n = checked_numel(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self, TensorError> {
        Self::full(dims, 0.0)
    }

    /// Zero-filled `[c, h, w]` feature map. Panics on a zero extent.
    pub fn zeros_chw(c: usize, h: usize, w: usize) -> Self {
        assert!(c > 0 && h > 0 && w > 0, "feature map extents must be positive");
        Self {
            dims: vec![c, h, w],
            data: vec![0.0; c * h * w],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// `(c, h, w)` of a 3-D tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Shape(alloc::format!(
                "expected a [C, H, W] feature map, got dims {:?}",
                self.dims
            ))),
        }
    }

    /// Same data under new dims with an equal element count.
    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self, TensorError> {
        let n = checked_numel(&dims)?;
        if n != self.data.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                expected: n,
                found: self.data.len(),
            });
        }
        self.dims = dims;
        Ok(self)
    }

    /// Plane `c` of a `[C, H, W]` tensor.
    pub fn channel(&self, c: usize) -> &[f32] {
        let (_, h, w) = self.chw().expect("channel() needs a 3-D tensor");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let (_, h, w) = self.chw().expect("channel_mut() needs a 3-D tensor");
        &mut self.data[c * h * w..(c + 1) * h * w]
    }

    /// Element at `(c, i, j)` of a `[C, H, W]` tensor.
    pub fn at3(&self, c: usize, i: usize, j: usize) -> f32 {
        let h = self.dims[1];
        let w = self.dims[2];
        self.data[(c * h + i) * w + j]
    }

    /// Concatenate `[C_k, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let first = parts
            .first()
            .ok_or(TensorError::Shape("concat of zero tensors".into()))?;
        let (_, h, w) = first.chw()?;
        let mut c_total = 0;
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(TensorError::Shape(alloc::format!(
                    "concat spatial mismatch: {:?} vs {:?}",
                    first.dims,
                    p.dims
                )));
            }
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            dims: vec![c_total, h, w],
            data,
        })
    }

    /// Encoded size in bytes.
    pub fn encoded_len(&self) -> usize {
        HEADER_FIXED_LEN + 4 * self.dims.len() + 4 * self.data.len()
    }

    /// Serialize into the byte format described in the module docs.
    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorError> {
        let ndim = u8::try_from(self.dims.len()).map_err(|_| TensorError::Format("ndim > 255"))?;
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&[0, 0]);
        out.push(ndim);
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| TensorError::Format("dim exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        Ok(out)
    }

    /// Parse one tensor from the start of `bytes`; returns it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Tensor, usize), TensorError> {
        let dims = decode_header(bytes)?;
        let header = HEADER_FIXED_LEN + 4 * dims.len();
        let numel = checked_numel(&dims)?;
        let payload = numel.checked_mul(4).ok_or(TensorError::Overflow)?;
        let total = header.checked_add(payload).ok_or(TensorError::Overflow)?;
        if bytes.len() < total {
            return Err(TensorError::Truncated {
                expected: total,
                found: bytes.len(),
            });
        }
        let data = bytes[header..total]
            .chunks_exact(4)
            .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Ok((Tensor { dims, data }, total))
    }
}

/// Validate the fixed header and read the dims list.
pub fn decode_header(bytes: &[u8]) -> Result<Vec<usize>, TensorError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(TensorError::BadMagic);
    }
    if bytes.len() < HEADER_FIXED_LEN {
        return Err(TensorError::Truncated {
            expected: HEADER_FIXED_LEN,
            found: bytes.len(),
        });
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(TensorError::Format("reserved bytes are not zero"));
    }
    let ndim = bytes[8] as usize;
    if ndim == 0 {
        return Err(TensorError::Format("ndim is zero"));
    }
    let header = HEADER_FIXED_LEN + 4 * ndim;
    if bytes.len() < header {
        return Err(TensorError::Truncated {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[HEADER_FIXED_LEN..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    if dims.contains(&0) {
        return Err(TensorError::InvalidDims(dims));
    }
    Ok(dims)
}

/// RGB image with values in `[0, 1]`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// `data` is `[3, height, width]`; values are clamped into `[0, 1]`.
    pub fn new(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self, TensorError> {
        let dims = vec![Self::CHANNELS, height, width];
        let n = checked_numel(&dims)?;
        if n != data.len() {
            return Err(TensorError::LengthMismatch {
                dims,
                expected: n,
                found: data.len(),
            });
        }
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self, TensorError> {
        let plane = height * width;
        let mut data = Vec::with_capacity(3 * plane);
        for v in rgb {
            data.extend(core::iter::repeat_n(v, plane));
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f32; 3] {
        let plane = self.height * self.width;
        let k = i * self.width + j;
        [self.data[k], self.data[plane + k], self.data[2 * plane + k]]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![3, self.height, self.width],
            data: self.data.clone(),
        }
    }

    /// Bilinear resize with half-pixel-center alignment.
    ///
    /// Source coordinate of output pixel `d` is `(d + 0.5) * in / out - 0.5`, clamped to the
    /// valid range. Aspect ratio is not preserved; each axis scales independently.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<ImageBuffer, TensorError> {
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::InvalidDims(vec![3, out_h, out_w]));
        }
        if out_h == self.height && out_w == self.width {
            return Ok(self.clone());
        }
        let ys = sample_axis(self.height, out_h);
        let xs = sample_axis(self.width, out_w);
        let in_plane = self.height * self.width;
        let mut data = Vec::with_capacity(3 * out_h * out_w);
        for c in 0..3 {
            let src = &self.data[c * in_plane..(c + 1) * in_plane];
            for &(y0, y1, fy) in &ys {
                let r0 = &src[y0 * self.width..(y0 + 1) * self.width];
                let r1 = &src[y1 * self.width..(y1 + 1) * self.width];
                for &(x0, x1, fx) in &xs {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    data.push(top + (bot - top) * fy);
                }
            }
        }
        Ok(ImageBuffer {
            height: out_h,
            width: out_w,
            data,
        })
    }
}

/// Per output index: the two source taps and the fractional weight of the second.
fn sample_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let s0 = s as usize;
            let s1 = (s0 + 1).min(n_in - 1);
            (s0, s1, (s - s0 as f64) as f32)
        })
        .collect()
}
