//! Persistence: binary matrix and field-grid formats, CSV plot data, JSON
//! reports, profile files, and digest manifests.

use crate::covariance::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::profile::{ProfileKind, VarianceProfile};
use crate::sampler::{FieldSample, ModelTag};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

const MATRIX_MAGIC: &[u8; 4] = b"LFMX";
const GRID_MAGIC: &[u8; 4] = b"LFGR";
const FORMAT_VERSION: u32 = 1;

fn tag_byte(tag: ModelTag) -> u8 {
    match tag {
        ModelTag::Dgff => 0,
        ModelTag::Psi => 1,
        ModelTag::Ibrw => 2,
        ModelTag::Mibrw => 3,
        ModelTag::ThreeField => 4,
        ModelTag::Surrogate => 5,
    }
}

fn tag_from_byte(b: u8) -> Result<ModelTag> {
    Ok(match b {
        0 => ModelTag::Dgff,
        1 => ModelTag::Psi,
        2 => ModelTag::Ibrw,
        3 => ModelTag::Mibrw,
        4 => ModelTag::ThreeField,
        5 => ModelTag::Surrogate,
        _ => return Err(Error::Parse(format!("unknown model tag byte {b}"))),
    })
}

/// Writes a covariance matrix as magic + version + dim + side (the implied
/// row-major vertex index map) + row-major f64 little-endian entries.
pub fn write_matrix(path: &Path, matrix: &CovarianceMatrix, side: i64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(matrix.dim() as u64).to_le_bytes())?;
    w.write_all(&side.to_le_bytes())?;
    for i in 0..matrix.dim() {
        for j in 0..matrix.dim() {
            w.write_all(&matrix.value(i, j).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<(CovarianceMatrix, i64)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Parse("not a matrix file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported matrix format version {version}")));
    }
    let dim = read_u64(&mut r)? as usize;
    let side = read_u64(&mut r)? as i64;
    let mut data = vec![0.0f64; dim * dim];
    read_f64s(&mut r, &mut data)?;
    let matrix = DMatrix::from_row_slice(dim, dim, &data);
    Ok((CovarianceMatrix::from_matrix(matrix)?, side))
}

/// Writes a field sample as magic + version + model tag + side + seed +
/// stream + values (f64 little-endian, row-major).
pub fn write_grid(path: &Path, sample: &FieldSample, seed: u64, stream: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRID_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[tag_byte(sample.model)])?;
    w.write_all(&sample.side.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&stream.to_le_bytes())?;
    for v in &sample.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub struct GridFile {
    pub sample: FieldSample,
    pub seed: u64,
    pub stream: u64,
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return Err(Error::Parse("not a grid file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported grid format version {version}")));
    }
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let model = tag_from_byte(tag[0])?;
    let side = read_u64(&mut r)? as i64;
    let seed = read_u64(&mut r)?;
    let stream = read_u64(&mut r)?;
    let mut values = vec![0.0f64; (side * side) as usize];
    read_f64s(&mut r, &mut values)?;
    let levels = (side as f64).log2().round() as u32;
    Ok(GridFile {
        sample: FieldSample {
            model,
            side,
            values,
            levels,
            trajectories: None,
            components: None,
        },
        seed,
        stream,
    })
}

fn read_u32(r: &mut impl std::io::Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl std::io::Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(r: &mut impl std::io::Read, out: &mut [f64]) -> Result<()> {
    let mut b = [0u8; 8];
    for v in out.iter_mut() {
        r.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    Ok(())
}

/// One row per grid point, columns as given; floats printed with full
/// precision.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Config("CSV row width does not match header".into()));
        }
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, report)
        .map_err(|e| Error::Parse(format!("JSON serialization failed: {e}")))?;
    Ok(())
}

/// On-disk profile description. Unknown keys are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    kind: ProfileKind,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    #[serde(default)]
    normalize: bool,
}

pub fn load_profile(path: &Path) -> Result<VarianceProfile> {
    let text = std::fs::read_to_string(path)?;
    parse_profile(&text)
}

pub fn parse_profile(text: &str) -> Result<VarianceProfile> {
    let file: ProfileFile =
        toml::from_str(text).map_err(|e| Error::Parse(format!("profile file: {e}")))?;
    VarianceProfile::new(file.kind, file.breakpoints, file.values, file.normalize)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Run manifest: configuration hash, wall times per stage, RNG stream
/// accounting, and a digest for every emitted file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub artifact_version: String,
    pub timestamp_unix: u64,
    pub stage_seconds: Vec<(String, f64)>,
    pub streams_consumed: u64,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
