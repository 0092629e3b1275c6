//! IEEE 754 binary16 conversion and the `CKTF` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CKTF" | u32 version (1) | u32 tensor count
//! per tensor: u32 name length | name (UTF-8) | u8 dtype (0 = f32, 1 = f16)
//!             | u8 rank | u32 extent * rank | payload
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CKTF";
pub const VERSION: u32 = 1;
pub const F16_MAX: f32 = 65504.0;

/// Raw binary16 bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Half(pub u16);

impl Half {
    pub const MAX: Half = Half(0x7BFF);
    pub const QUIET_NAN: Half = Half(0x7E00);

    pub fn to_bits(self) -> u16 {
        self.0
    }

    pub fn is_nan(self) -> bool {
        self.0 & 0x7C00 == 0x7C00 && self.0 & 0x03FF != 0
    }

    pub fn to_f32(self) -> f32 {
        f16_to_f32(self)
    }
}

/// Outcome of a single narrowing conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Narrowed {
    pub half: Half,
    /// The rounded magnitude exceeded the largest finite half and was
    /// clamped to it.
    pub saturated: bool,
}

/// Round-to-nearest-even narrowing; overflow saturates to ±65504, NaN maps
/// to a quiet NaN with the input's sign.
pub fn f32_to_f16(x: f32) -> Half {
    narrow(x).half
}

pub fn narrow(x: f32) -> Narrowed {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;

    let done = |h: u16| Narrowed {
        half: Half(h),
        saturated: false,
    };
    let saturate = Narrowed {
        half: Half(sign | Half::MAX.0),
        saturated: true,
    };

    if exp == 0xFF {
        return if man != 0 {
            done(sign | Half::QUIET_NAN.0)
        } else {
            saturate
        };
    }
    // Unbiased exponent of the f32 value.
    let e = exp - 127;
    if e > 15 {
        return saturate;
    }
    if e >= -14 {
        // Normal half: keep 10 mantissa bits, round the 13 dropped bits.
        let mut h = (((e + 15) as u32) << 10) | (man >> 13);
        let rest = man & 0x1FFF;
        if rest > 0x1000 || (rest == 0x1000 && h & 1 == 1) {
            h += 1; // may carry into the exponent, which is still correct
        }
        if h >= 0x7C00 {
            return saturate;
        }
        return done(sign | h as u16);
    }
    if exp == 0 || e < -25 {
        // f32 subnormals and anything below half the smallest half subnormal.
        return done(sign);
    }
    // Subnormal half: value = full * 2^(e - 23), unit = 2^-24.
    let full = man | 0x0080_0000;
    let shift = (-1 - e) as u32; // 14..=24
    let mut h = full >> shift;
    let rest = full & ((1 << shift) - 1);
    let halfway = 1 << (shift - 1);
    if rest > halfway || (rest == halfway && h & 1 == 1) {
        h += 1;
    }
    done(sign | h as u16)
}

/// Exact widening.
pub fn f16_to_f32(h: Half) -> f32 {
    let sign = u32::from(h.0 & 0x8000) << 16;
    let exp = u32::from((h.0 >> 10) & 0x1F);
    let man = u32::from(h.0 & 0x03FF);
    let bits = match (exp, man) {
        (0, 0) => sign,
        (0, _) => {
            // Subnormal: normalize into an f32 normal.
            let lead = 31 - man.leading_zeros(); // position of the top set bit, 0..=9
            let e = lead as i32 - 24; // value = man * 2^-24
            let frac = (man << (23 - lead)) & 0x007F_FFFF;
            sign | (((e + 127) as u32) << 23) | frac
        }
        (0x1F, 0) => sign | 0x7F80_0000,
        (0x1F, _) => sign | 0x7FC0_0000 | (man << 13),
        _ => sign | ((exp + 127 - 15) << 23) | (man << 13),
    };
    f32::from_bits(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u32>,
    /// Little-endian element bytes.
    pub payload: Vec<u8>,
}

impl Tensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }

    pub fn from_f32(name: impl Into<String>, shape: Vec<u32>, values: &[f32]) -> Result<Self> {
        let t = Tensor {
            name: name.into(),
            dtype: DType::F32,
            shape,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        };
        if t.element_count() != values.len() {
            return Err(Error::Contract(format!(
                "shape {:?} holds {} elements, got {}",
                t.shape,
                t.element_count(),
                values.len()
            )));
        }
        Ok(t)
    }

    /// Element values widened to f32.
    pub fn values(&self) -> Vec<f32> {
        match self.dtype {
            DType::F32 => self
                .payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            DType::F16 => self
                .payload
                .chunks_exact(2)
                .map(|c| f16_to_f32(Half(u16::from_le_bytes([c[0], c[1]]))))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn payload_bytes(&self) -> usize {
        self.tensors.iter().map(|t| t.payload.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_names()?;
        let mut out = Vec::with_capacity(12 + self.payload_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(
            &u32::try_from(self.tensors.len())
                .map_err(too_many)?
                .to_le_bytes(),
        );
        for t in &self.tensors {
            if t.payload.len() != t.element_count() * t.dtype.size() {
                return Err(Error::Contract(format!(
                    "tensor {:?} payload does not match its shape",
                    t.name
                )));
            }
            out.extend_from_slice(&u32::try_from(t.name.len()).map_err(too_many)?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.code());
            out.push(u8::try_from(t.shape.len()).map_err(too_many)?);
            for d in &t.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&t.payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.error(0, "bad magic, expected CKTF"));
        }
        let at = r.pos;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(at, format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut tensors = Vec::new();
        let mut names = HashSet::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.error(at + 4, "tensor name is not UTF-8"))?
                .to_string();
            if !names.insert(name.clone()) {
                return Err(r.error(at, format!("duplicate tensor name {name:?}")));
            }
            let at = r.pos;
            let dtype = match r.u8()? {
                0 => DType::F32,
                1 => DType::F16,
                c => return Err(r.error(at, format!("unknown dtype code {c}"))),
            };
            let rank = r.u8()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let at = r.pos;
            let n = shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d as usize))
                .ok_or_else(|| r.error(at, "tensor size overflows"))?;
            let payload = r.take(n)?.to_vec();
            tensors.push(Tensor {
                name,
                dtype,
                shape,
                payload,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(TensorFile { tensors })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.tensors {
            if !seen.insert(&t.name) {
                return Err(Error::Contract(format!(
                    "duplicate tensor name {:?}",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

fn too_many(_: std::num::TryFromIntError) -> Error {
    Error::Contract("field does not fit the container's integer width".into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::TensorFormat {
            offset,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.error(self.pos, format!("truncated: need {n} more bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorReport {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    /// Largest `|x - q(x)| / |x|` over non-zero finite inputs.
    pub max_rel_error: f64,
    pub saturated: usize,
    /// Tensor was already f16 and was copied unchanged.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionReport {
    pub tensors: Vec<TensorReport>,
    pub bytes_before: usize,
    pub bytes_after: usize,
    pub warnings: Vec<String>,
}

/// Converts every f32 tensor to f16, keeping record order.
pub fn quantize(file: &TensorFile) -> (TensorFile, ConversionReport) {
    let converted: Vec<(Tensor, TensorReport)> =
        file.tensors.par_iter().map(quantize_tensor).collect();
    let warnings = converted
        .iter()
        .filter(|(_, r)| r.skipped)
        .map(|(_, r)| format!("tensor {:?} is already f16, left unchanged", r.name))
        .collect();
    let (tensors, reports): (Vec<_>, Vec<_>) = converted.into_iter().unzip();
    let out = TensorFile { tensors };
    let report = ConversionReport {
        tensors: reports,
        bytes_before: file.payload_bytes(),
        bytes_after: out.payload_bytes(),
        warnings,
    };
    (out, report)
}

fn quantize_tensor(t: &Tensor) -> (Tensor, TensorReport) {
    let mut report = TensorReport {
        name: t.name.clone(),
        elements: t.element_count(),
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        saturated: 0,
        skipped: t.dtype == DType::F16,
    };
    if report.skipped {
        return (t.clone(), report);
    }
    let mut payload = Vec::with_capacity(t.payload.len() / 2);
    for x in t.values() {
        let n = narrow(x);
        report.saturated += usize::from(n.saturated);
        payload.extend_from_slice(&n.half.0.to_le_bytes());
        if x.is_finite() {
            let err = (f64::from(x) - f64::from(f16_to_f32(n.half))).abs();
            report.max_abs_error = report.max_abs_error.max(err);
            if x != 0.0 {
                report.max_rel_error = report.max_rel_error.max(err / f64::from(x).abs());
            }
        }
    }
    let out = Tensor {
        name: t.name.clone(),
        dtype: DType::F16,
        shape: t.shape.clone(),
        payload,
    };
    (out, report)
}

pub fn quantize_file(input: &Path, output: &Path) -> Result<ConversionReport> {
    let file = TensorFile::read(input)?;
    let (out, report) = quantize(&file);
    out.write(output)?;
    Ok(report)
}
