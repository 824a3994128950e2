//! BTF1 tensor files.
//!
//! Layout, all integers little-endian:
//!
//! | field   | size            |
//! |---------|-----------------|
//! | magic   | 4 bytes `BTF1`  |
//! | dtype   | u32 (1 = real64, 2 = complex128 interleaved) |
//! | ndim    | u32             |
//! | dims    | ndim x u64      |
//! | payload | f64 values, row-major |
//! | crc     | u32 CRC32 of every preceding byte |

use std::path::Path;

use crate::autodiff::{numel, DType, Tensor, C64};
use crate::beamformer::BeamformerWeights;
use crate::error::{bail, Result};
use crate::mixture::MixtureParams;
use crate::types::ClassAffiliations;

pub const MAGIC: &[u8; 4] = b"BTF1";

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.ndim() + 16 * t.numel() + 4);
    out.extend_from_slice(MAGIC);
    let code: u32 = match t.dtype() {
        DType::Real => 1,
        DType::Complex => 2,
    };
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    if let Some(v) = t.as_real() {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    } else if let Some(v) = t.as_complex() {
        for z in v {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            bail!(Format, "truncated tensor file at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Tensor> {
    if buf.len() < 16 {
        bail!(Format, "tensor file too short ({} bytes)", buf.len());
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        bail!(Format, "CRC mismatch");
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!(Format, "bad magic, expected BTF1");
    }
    let code = r.u32()?;
    let ndim = r.u32()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(usize::try_from(r.u64()?).map_err(|_| crate::Error::Format("dimension overflows usize".into()))?);
    }
    let n = numel(&shape);
    let width = match code {
        1 => 1,
        2 => 2,
        _ => bail!(Format, "unknown dtype code {code}"),
    };
    if body.len() - r.pos != 8 * width * n {
        bail!(Format, "payload has {} bytes, dims {:?} need {}", body.len() - r.pos, shape, 8 * width * n);
    }
    if code == 1 {
        let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::real(&shape, v)
    } else {
        let v = (0..n).map(|_| Ok(C64::new(r.f64()?, r.f64()?))).collect::<Result<Vec<_>>>()?;
        Tensor::complex(&shape, v)
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// `(K, T, F)` real tensor.
pub fn affiliations_tensor(g: &ClassAffiliations<f64>) -> Tensor {
    Tensor::real(&[g.classes(), g.frames(), g.bins()], g.data().to_vec()).expect("consistent size")
}

pub fn affiliations_from_tensor(t: &Tensor) -> Result<ClassAffiliations<f64>> {
    let (s, v) = match (t.shape(), t.as_real()) {
        (s, Some(v)) if s.len() == 3 => (s, v),
        _ => bail!(Format, "affiliations need a real (K, T, F) tensor, got {:?} {:?}", t.dtype(), t.shape()),
    };
    ClassAffiliations::from_vec(s[0], s[1], s[2], v.to_vec())
}

/// Weights as a `(K, F)` real tensor and shapes as a `(K, F, D, D)` complex one.
pub fn mixture_tensors(p: &MixtureParams<f64>) -> (Tensor, Tensor) {
    let (k, f, d) = (p.classes(), p.bins(), p.dims());
    (
        Tensor::real(&[k, f], p.weights().to_vec()).expect("consistent size"),
        Tensor::complex(&[k, f, d, d], p.shapes().to_vec()).expect("consistent size"),
    )
}

pub fn mixture_from_tensors(weights: &Tensor, shapes: &Tensor) -> Result<MixtureParams<f64>> {
    match (weights.as_real(), shapes.as_complex(), shapes.shape()) {
        (Some(w), Some(b), &[k, f, d, d2]) if d == d2 && weights.shape() == [k, f] => {
            MixtureParams::new(k, f, d, w.to_vec(), b.to_vec())
        }
        _ => bail!(Format, "mixture tensors have shapes {:?} and {:?}", weights.shape(), shapes.shape()),
    }
}

/// `(F, D)` complex tensor of beamformer weights.
pub fn weights_tensor(w: &BeamformerWeights<f64>) -> Tensor {
    Tensor::complex(&[w.bins, w.dims], w.w.clone()).expect("consistent size")
}

/// Inverse of [`weights_tensor`]; the eigenvalues are not stored and come
/// back as NaN.
pub fn weights_from_tensor(t: &Tensor) -> Result<BeamformerWeights<f64>> {
    match (t.as_complex(), t.shape()) {
        (Some(w), &[bins, dims]) => Ok(BeamformerWeights {
            bins,
            dims,
            w: w.to_vec(),
            lambda: vec![f64::NAN; bins],
        }),
        _ => bail!(Format, "beamformer weights need a complex (F, D) tensor, got {:?}", t.shape()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_layout() {
        let b = encode(&Tensor::scalar(1.5));
        assert_eq!(&b[..4], b"BTF1");
        assert_eq!(b.len(), 4 + 4 + 4 + 8 + 4);
        assert_eq!(decode(&b).unwrap(), Tensor::scalar(1.5));
    }

    #[test]
    fn corruption_detected() {
        let mut b = encode(&Tensor::real(&[2], vec![1.0, 2.0]).unwrap());
        b[14] ^= 1;
        assert!(decode(&b).is_err());
        assert!(decode(&b[..10]).is_err());
    }
}
