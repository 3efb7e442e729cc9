//! Persistence: square-root table cache, binary field dumps, CSV tables and
//! JSON run manifests.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{face_centered_sqrt_kernel, Kernel, SqrtKernel};
use crate::lattice::RegionGraph;
use crate::sampler::{FieldSample, SamplerMethod};

/// Version tag shared by every CSV table and manifest this crate writes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn sqrt_cache_path(dir: &Path, kernel: &Kernel, eps: f64) -> PathBuf {
    let name = kernel.to_string().replace(':', "");
    dir.join(format!("sqrt_{name}_fc_{:016x}.json", eps.to_bits()))
}

/// Face-centered square-root table for `(kernel, eps)`, read from `cache_dir`
/// when present and written there after a fresh build.
pub fn cached_sqrt_kernel(cache_dir: Option<&Path>, kernel: &Kernel, eps: f64) -> Result<SqrtKernel> {
    let Some(dir) = cache_dir else {
        return face_centered_sqrt_kernel(kernel, eps);
    };
    let path = sqrt_cache_path(dir, kernel, eps);
    if let Ok(bytes) = fs::read(&path) {
        if let Ok(sk) = serde_json::from_slice::<SqrtKernel>(&bytes) {
            if sk.kernel == *kernel && sk.lattice_eps().to_bits() == eps.to_bits() {
                return Ok(sk);
            }
        }
    }
    let sk = face_centered_sqrt_kernel(kernel, eps)?;
    write_atomically(&path, &serde_json::to_vec(&sk)?)?;
    Ok(sk)
}

const FIELD_MAGIC: &[u8; 8] = b"BFFIELD\x01";

/// Header of a binary field dump. The body is the `(u, v)` index box in
/// row-major order (`u` outer), little-endian `f64`, with NaN at box cells
/// that are not sites of the region.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldHeader {
    pub mesh_eps: f64,
    pub u_min: i64,
    pub v_min: i64,
    pub rows: u64,
    pub cols: u64,
    pub seed: u64,
    pub replicate: u64,
    pub method: SamplerMethod,
}

fn method_code(m: SamplerMethod) -> u8 {
    match m {
        SamplerMethod::SqrtConvolution => 0,
        SamplerMethod::HermiteSeries => 1,
    }
}

pub fn write_field_dump<W: Write>(mut w: W, graph: &RegionGraph, sample: &FieldSample) -> Result<()> {
    if sample.values.len() != graph.len() {
        return Err(Error::InvalidParameter(format!(
            "sample has {} values for {} sites",
            sample.values.len(),
            graph.len()
        )));
    }
    let (u0, u1, v0, v1) = graph.index_bounds();
    let (rows, cols) = ((u1 - u0 + 1) as usize, (v1 - v0 + 1) as usize);
    let mut body = vec![f64::NAN; rows * cols];
    for (i, s) in graph.sites().iter().enumerate() {
        body[(s.u - u0) as usize * cols + (s.v - v0) as usize] = sample.values[i];
    }
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&sample.mesh_eps.to_le_bytes())?;
    for x in [u0, v0] {
        w.write_all(&x.to_le_bytes())?;
    }
    for x in [rows as u64, cols as u64, sample.seed, sample.replicate] {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&[method_code(sample.method)])?;
    for x in body {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_dump<R: Read>(mut r: R) -> Result<(FieldHeader, Vec<f64>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::InvalidParameter("not a field dump".into()));
    }
    let mut b8 = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut b8)?;
        Ok(b8)
    };
    let mesh_eps = f64::from_le_bytes(next(&mut r)?);
    let u_min = i64::from_le_bytes(next(&mut r)?);
    let v_min = i64::from_le_bytes(next(&mut r)?);
    let rows = u64::from_le_bytes(next(&mut r)?);
    let cols = u64::from_le_bytes(next(&mut r)?);
    let seed = u64::from_le_bytes(next(&mut r)?);
    let replicate = u64::from_le_bytes(next(&mut r)?);
    let mut m = [0u8; 1];
    r.read_exact(&mut m)?;
    let method = match m[0] {
        0 => SamplerMethod::SqrtConvolution,
        1 => SamplerMethod::HermiteSeries,
        c => return Err(Error::InvalidParameter(format!("unknown sampler code {c}"))),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() as u64 != rows * cols * 8 {
        return Err(Error::InvalidParameter("field dump body has the wrong length".into()));
    }
    let body = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let header = FieldHeader {
        mesh_eps,
        u_min,
        v_min,
        rows,
        cols,
        seed,
        replicate,
        method,
    };
    Ok((header, body))
}

pub fn write_field_file(path: &Path, graph: &RegionGraph, sample: &FieldSample) -> Result<()> {
    let mut buf = Vec::new();
    write_field_dump(&mut buf, graph, sample)?;
    write_atomically(path, &buf)
}

/// Serializes rows as CSV with a header row. Floats use Rust's shortest
/// round-trip formatting, so output is locale independent and deterministic.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv: {e}"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomically(path, &csv_bytes(rows)?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomically(path, &bytes)
}

/// Manifest path for a data file: `out.csv` becomes `out.csv.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_region_graph, Region};
    use crate::sampler::ConvolutionSampler;

    #[test]
    fn field_dump_round_trip() {
        let s = ConvolutionSampler::for_region(&Kernel::bargmann_fock(), 0.5, Region::rectangle(2.0, 1.0)).unwrap();
        let f = s.sample(3, 4);
        let mut buf = Vec::new();
        write_field_dump(&mut buf, s.graph(), &f).unwrap();
        let (h, body) = read_field_dump(buf.as_slice()).unwrap();
        assert_eq!((h.seed, h.replicate, h.mesh_eps), (3, 4, 0.5));
        let g = s.graph();
        for (i, site) in g.sites().iter().enumerate() {
            let k = (site.u - h.u_min) as usize * h.cols as usize + (site.v - h.v_min) as usize;
            assert_eq!(body[k].to_bits(), f.values[i].to_bits());
        }
        assert_eq!(body.iter().filter(|x| !x.is_nan()).count(), g.len());
    }

    #[test]
    fn dump_rejects_mismatched_sample() {
        let g = build_region_graph(0.5, Region::rectangle(1.0, 1.0)).unwrap();
        let s = ConvolutionSampler::for_region(&Kernel::bargmann_fock(), 0.5, Region::rectangle(2.0, 1.0)).unwrap();
        assert!(write_field_dump(Vec::new(), &g, &s.sample(0, 0)).is_err());
        assert!(read_field_dump(&b"nonsense"[..]).is_err());
    }

    #[test]
    fn csv_has_header_and_dot_decimals() {
        #[derive(Serialize)]
        struct Row {
            r: f64,
            mean: f64,
        }
        let out = String::from_utf8(csv_bytes(&[Row { r: 10.0, mean: 0.25 }]).unwrap()).unwrap();
        assert_eq!(out, "r,mean\n10.0,0.25\n");
    }

    #[test]
    fn sqrt_cache_reuses_table() {
        let dir = tempfile::tempdir().unwrap();
        let k = Kernel::rational(2).unwrap();
        let a = cached_sqrt_kernel(Some(dir.path()), &k, 1.0).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = cached_sqrt_kernel(Some(dir.path()), &k, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_sits_next_to_data() {
        assert_eq!(manifest_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.json"));
    }
}
