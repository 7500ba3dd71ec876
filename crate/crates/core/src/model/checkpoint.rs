//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "NVKMCKPT"
//! version    u32
//! config     u64 length + UTF-8 TOML echo of the model config
//! count      u32 number of arrays
//! array*     u32 name length, name, u32 ndim, ndim × u64 dims,
//!            prod(dims) × f64 row-major data
//! ```
//!
//! Arrays: `input.{inducing,mean,chol,kernel}`,
//! `vk.{d}.{c}.{inducing,mean,chol,kernel,decay}`, `noise.output`,
//! `noise.input` and, when present, `standardization.outputs` (`D × 2`,
//! shift then scale) and `standardization.input` (`2`). Kernel arrays hold
//! `[amplitude, precision]`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{InputProcessSpec, ModelConfig, VolterraKernelSpec, VolterraModel};
use crate::data::{Affine, Standardization};
use crate::error::{NvkmError, Result};
use crate::kernels::{Points, SeKernel};
use crate::pathwise::VariationalGaussian;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NVKMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Array {
    dims: Vec<usize>,
    data: Vec<f64>,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn array(&mut self, name: &str, dims: &[usize], data: &[f64]) {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.u32(name.len() as u32);
        self.buf.extend_from_slice(name.as_bytes());
        self.u32(dims.len() as u32);
        for d in dims {
            self.u64(*d as u64);
        }
        for x in data {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn write_variational(w: &mut Writer, prefix: &str, inducing: &Points, q: &VariationalGaussian, k: &SeKernel) -> usize {
    let m = q.len();
    w.array(&format!("{prefix}.inducing"), &[inducing.len(), inducing.dim()], inducing.as_slice());
    w.array(&format!("{prefix}.mean"), &[m], q.mean().as_slice());
    w.array(&format!("{prefix}.chol"), &[m, m], &matrix_rows(q.chol()));
    w.array(&format!("{prefix}.kernel"), &[2], &[k.amplitude, k.precision]);
    4
}

/// Serialises a model into the checkpoint format.
pub fn write_checkpoint(model: &VolterraModel) -> Result<Vec<u8>> {
    let config = toml::to_string(&model.config)
        .map_err(|e| NvkmError::invalid(format!("config cannot be serialised: {e}")))?;
    let mut body = Writer { buf: Vec::new() };
    let mut count = write_variational(&mut body, "input", &model.input.inducing, &model.input.variational, &model.input.kernel);
    let c_max = model.order();
    for (k, spec) in model.kernels.iter().enumerate() {
        let prefix = format!("vk.{}.{}", k / c_max, spec.order);
        count += write_variational(&mut body, &prefix, &spec.inducing, &spec.variational, &spec.kernel);
        body.array(&format!("{prefix}.decay"), &[1], &[spec.decay]);
        count += 1;
    }
    body.array("noise.output", &[model.output_noise.len()], &model.output_noise);
    body.array("noise.input", &[1], &[model.input_noise]);
    count += 2;
    if let Some(s) = &model.standardization {
        let rows: Vec<f64> = s.outputs.iter().flat_map(|a| [a.shift, a.scale]).collect();
        body.array("standardization.outputs", &[s.outputs.len(), 2], &rows);
        count += 1;
        if let Some(a) = &s.input {
            body.array("standardization.input", &[2], &[a.shift, a.scale]);
            count += 1;
        }
    }

    let mut w = Writer { buf: Vec::with_capacity(body.buf.len() + config.len() + 32) };
    w.buf.extend_from_slice(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(config.len() as u64);
    w.buf.extend_from_slice(config.as_bytes());
    w.u32(count as u32);
    w.buf.extend_from_slice(&body.buf);
    Ok(w.buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> NvkmError {
        NvkmError::parse(format!("checkpoint byte {}", self.pos), message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of file (wanted {n} more bytes)")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, v: u64) -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|n| *n <= self.bytes.len())
            .ok_or_else(|| self.err(format!("implausible length {v}")))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("invalid UTF-8"))
    }
}

/// Parses a checkpoint produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<VolterraModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| r.err("file too short for the header"))? != CHECKPOINT_MAGIC {
        return Err(NvkmError::parse("checkpoint byte 0", "missing NVKMCKPT magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NvkmError::IncompatibleCheckpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let text = r.string(n)?;
    let config: ModelConfig = toml::from_str(&text).map_err(|e| r.err(format!("config echo: {e}")))?;
    let count = r.u32()? as usize;
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()? as u64;
        let n = r.len(n)?;
        let name = r.string(n)?;
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(r.err(format!("array `{name}` has {ndim} dimensions")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = r.u64()?;
            dims.push(r.len(d)?);
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|t| t.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| r.err(format!("array `{name}` is larger than the file")))?;
        let raw = r.take(total * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if arrays.insert(name.clone(), Array { dims, data }).is_some() {
            return Err(r.err(format!("duplicate array `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after the last array"));
    }
    assemble(config, arrays)
}

fn fetch<'m>(arrays: &'m BTreeMap<String, Array>, name: &str, dims: &[usize]) -> Result<&'m [f64]> {
    let a = arrays
        .get(name)
        .ok_or_else(|| NvkmError::IncompatibleCheckpoint(format!("missing array `{name}`")))?;
    if a.dims != dims {
        return Err(NvkmError::IncompatibleCheckpoint(format!(
            "array `{name}` has shape {:?}, expected {:?}",
            a.dims, dims
        )));
    }
    Ok(&a.data)
}

fn read_variational(
    arrays: &BTreeMap<String, Array>,
    prefix: &str,
    dim: usize,
) -> Result<(Points, VariationalGaussian, SeKernel)> {
    let name = format!("{prefix}.inducing");
    let m = arrays
        .get(&name)
        .map(|a| a.dims.first().copied().unwrap_or(0))
        .ok_or_else(|| NvkmError::IncompatibleCheckpoint(format!("missing array `{name}`")))?;
    let incompatible = |e: NvkmError| NvkmError::IncompatibleCheckpoint(format!("{prefix}: {e}"));
    let inducing = Points::new(dim, fetch(arrays, &name, &[m, dim])?.to_vec()).map_err(incompatible)?;
    let mean = DVector::from_column_slice(fetch(arrays, &format!("{prefix}.mean"), &[m])?);
    let chol = DMatrix::from_row_slice(m, m, fetch(arrays, &format!("{prefix}.chol"), &[m, m])?);
    let q = VariationalGaussian::new(mean, chol).map_err(incompatible)?;
    let k = fetch(arrays, &format!("{prefix}.kernel"), &[2])?;
    let kernel = SeKernel::new(k[0], k[1]).map_err(incompatible)?;
    Ok((inducing, q, kernel))
}

fn assemble(config: ModelConfig, arrays: BTreeMap<String, Array>) -> Result<VolterraModel> {
    config
        .validate()
        .map_err(|e| NvkmError::IncompatibleCheckpoint(format!("config echo: {e}")))?;
    let (inducing, variational, kernel) = read_variational(&arrays, "input", 1)?;
    let input = InputProcessSpec { inducing, variational, kernel };
    let mut kernels = Vec::new();
    for d in 0..config.outputs {
        for c in 1..=config.order {
            let prefix = format!("vk.{d}.{c}");
            let (inducing, variational, kernel) = read_variational(&arrays, &prefix, c)?;
            let decay = fetch(&arrays, &format!("{prefix}.decay"), &[1])?[0];
            if !(decay > 0.0) {
                return Err(NvkmError::IncompatibleCheckpoint(format!("{prefix}: non-positive decay")));
            }
            kernels.push(VolterraKernelSpec {
                order: c,
                range: config.vk_range_for(c),
                inducing,
                variational,
                kernel,
                decay,
            });
        }
    }
    let output_noise = fetch(&arrays, "noise.output", &[config.outputs])?.to_vec();
    let input_noise = fetch(&arrays, "noise.input", &[1])?[0];
    if output_noise.iter().chain([&input_noise]).any(|s| !(*s > 0.0)) {
        return Err(NvkmError::IncompatibleCheckpoint("noise levels must be positive".into()));
    }
    let standardization = match arrays.get("standardization.outputs") {
        None => None,
        Some(_) => {
            let rows = fetch(&arrays, "standardization.outputs", &[config.outputs, 2])?;
            let outputs = rows.chunks_exact(2).map(|r| Affine { shift: r[0], scale: r[1] }).collect();
            let input = match arrays.get("standardization.input") {
                None => None,
                Some(_) => {
                    let a = fetch(&arrays, "standardization.input", &[2])?;
                    Some(Affine { shift: a[0], scale: a[1] })
                }
            };
            Some(Standardization { outputs, input })
        }
    };
    Ok(VolterraModel {
        config,
        input,
        kernels,
        output_noise,
        input_noise,
        standardization,
    })
}

/// Writes a checkpoint file.
pub fn checkpoint_save(model: &VolterraModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| NvkmError::io(path, e))
}

/// Reads a checkpoint file.
pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<VolterraModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| NvkmError::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn model() -> VolterraModel {
        let mut m = init_model(&ModelConfig {
            order: 2,
            outputs: 2,
            io_mode: true,
            axis_sizes: Some(vec![5, 3]),
            time_span: Some([0.0, 5.0]),
            input_inducing: Some(7),
            seed: 11,
            ..ModelConfig::default()
        })
        .unwrap();
        m.standardization = Some(Standardization {
            outputs: vec![Affine { shift: 0.5, scale: 2.0 }, Affine { shift: -1.0, scale: 0.25 }],
            input: Some(Affine { shift: 0.1, scale: 3.0 }),
        });
        m
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = write_checkpoint(&m).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(write_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = write_checkpoint(&model()).unwrap();
        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(read_checkpoint(&bytes[..cut]), Err(NvkmError::Parse { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_mismatch_is_incompatible() {
        let mut bytes = write_checkpoint(&model()).unwrap();
        bytes[8] = 99;
        assert!(matches!(read_checkpoint(&bytes), Err(NvkmError::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn header_layout_is_stable() {
        let bytes = write_checkpoint(&model()).unwrap();
        assert_eq!(&bytes[..8], b"NVKMCKPT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let text = std::str::from_utf8(&bytes[20..20 + n]).unwrap();
        assert!(text.contains("order = 2"));
        let count = u32::from_le_bytes(bytes[20 + n..24 + n].try_into().unwrap());
        // 4 input + 2 outputs × 2 orders × 5 + 2 noise + 2 standardization.
        assert_eq!(count, 4 + 20 + 2 + 2);
        let name_len = u32::from_le_bytes(bytes[24 + n..28 + n].try_into().unwrap()) as usize;
        assert_eq!(&bytes[28 + n..28 + n + name_len], b"input.inducing");
    }
}
