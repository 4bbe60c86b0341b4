//! `.trt` / `.trc` containers, their JSON mirrors and probe files.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! .trt  "TRT1" | u32 d | d × u64 dims | ∏dims × (f64 re, f64 im), column-major
//! .trc  "TRC1" | u32 d | u32 r | one .trt block per stored core
//! ```
//!
//! Bit 31 of `d` is the symmetric flag. On a `.trt` it marks a cyclically
//! symmetric tensor; on a `.trc` it means a single core is stored and the ring
//! is `d` copies of it.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use trdecomp_core::exact::ProbeConfig;
use trdecomp_core::tensor::{checked_numel, ComplexDenseTensor};
use trdecomp_core::tr::TrDecomposition;
use trdecomp_core::C64;

pub const TRT_MAGIC: &[u8; 4] = b"TRT1";
pub const TRC_MAGIC: &[u8; 4] = b"TRC1";
pub const SYMMETRIC_FLAG: u32 = 1 << 31;
/// Largest tensor the JSON mirror will read or write.
pub const JSON_ENTRY_LIMIT: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected {expected:?}")]
    Magic { found: [u8; 4], expected: [u8; 4] },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] trdecomp_core::error::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// A tensor together with its symmetric flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub tensor: ComplexDenseTensor,
    pub symmetric: bool,
}

/// A decomposition; `symmetric` means every core is the same.
#[derive(Debug, Clone, PartialEq)]
pub struct CoresFile {
    pub cores: TrDecomposition,
    pub symmetric: bool,
}

impl CoresFile {
    pub fn new(cores: TrDecomposition) -> Self {
        CoresFile {
            cores,
            symmetric: false,
        }
    }

    /// Ring of `d` copies of one core.
    pub fn symmetric(core: ComplexDenseTensor, d: usize) -> Result<Self> {
        Ok(CoresFile {
            cores: TrDecomposition::new(vec![core; d])?,
            symmetric: true,
        })
    }
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_magic<R: Read>(r: &mut R, expected: &[u8; 4]) -> Result<()> {
    let found: [u8; 4] = read_exact(r)?;
    if &found != expected {
        return Err(FormatError::Magic {
            found,
            expected: *expected,
        });
    }
    Ok(())
}

fn split_order(raw: u32) -> (usize, bool) {
    ((raw & !SYMMETRIC_FLAG) as usize, raw & SYMMETRIC_FLAG != 0)
}

fn encode_order(d: usize, symmetric: bool) -> Result<u32> {
    let d = u32::try_from(d)
        .ok()
        .filter(|&d| d & SYMMETRIC_FLAG == 0)
        .ok_or_else(|| FormatError::Malformed(format!("order {} does not fit", d)))?;
    Ok(if symmetric { d | SYMMETRIC_FLAG } else { d })
}

/// Reads one `.trt` block; returns the tensor and the flag bit.
pub fn read_trt_from<R: Read>(r: &mut R) -> Result<TensorFile> {
    read_magic(r, TRT_MAGIC)?;
    let (d, symmetric) = split_order(read_u32(r)?);
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        let n = u64::from_le_bytes(read_exact(r)?);
        dims.push(
            usize::try_from(n)
                .map_err(|_| FormatError::Malformed(format!("dim {} too large", n)))?,
        );
    }
    let numel = checked_numel(&dims)?;
    let mut buf = vec![
        0u8;
        numel
            .checked_mul(16)
            .ok_or_else(|| FormatError::Malformed("size overflow".into()))?
    ];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(TensorFile {
        tensor: ComplexDenseTensor::from_data(&dims, data)?,
        symmetric,
    })
}

pub fn write_trt_to<W: Write>(w: &mut W, t: &ComplexDenseTensor, symmetric: bool) -> Result<()> {
    w.write_all(TRT_MAGIC)?;
    w.write_all(&encode_order(t.order(), symmetric)?.to_le_bytes())?;
    for &n in t.dims() {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(16 * t.numel());
    for z in t.as_slice() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_trc_from<R: Read>(r: &mut R) -> Result<CoresFile> {
    read_magic(r, TRC_MAGIC)?;
    let (d, symmetric) = split_order(read_u32(r)?);
    let rank = read_u32(r)? as usize;
    let stored = if symmetric { 1 } else { d };
    let mut cores = Vec::with_capacity(stored);
    for k in 0..stored {
        let c = read_trt_from(r)?.tensor;
        if c.order() != 3 || c.dims()[1] != rank || c.dims()[2] != rank {
            return Err(FormatError::Malformed(format!(
                "core {} has dims {:?}, expected [n, {}, {}]",
                k,
                c.dims(),
                rank,
                rank
            )));
        }
        cores.push(c);
    }
    match cores.pop() {
        Some(c) if symmetric => CoresFile::symmetric(c, d),
        Some(c) => {
            cores.push(c);
            Ok(CoresFile::new(TrDecomposition::new(cores)?))
        }
        None => Err(FormatError::Malformed("no cores".into())),
    }
}

pub fn write_trc_to<W: Write>(w: &mut W, f: &CoresFile) -> Result<()> {
    let d = f.cores.order();
    w.write_all(TRC_MAGIC)?;
    w.write_all(&encode_order(d, f.symmetric)?.to_le_bytes())?;
    w.write_all(&(f.cores.rank() as u32).to_le_bytes())?;
    let stored = if f.symmetric { 1 } else { d };
    for core in &f.cores.cores()[..stored] {
        write_trt_to(w, core, false)?;
    }
    Ok(())
}

/// JSON mirror of a tensor: dims plus column-major `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorJson {
    pub dims: Vec<usize>,
    pub data: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub symmetric: bool,
}

impl TensorJson {
    pub fn from_tensor(t: &ComplexDenseTensor, symmetric: bool) -> Result<Self> {
        if t.numel() > JSON_ENTRY_LIMIT {
            return Err(FormatError::Malformed(format!(
                "{} entries is too large for JSON (limit {})",
                t.numel(),
                JSON_ENTRY_LIMIT
            )));
        }
        Ok(TensorJson {
            dims: t.dims().to_vec(),
            data: t.as_slice().iter().map(|z| [z.re, z.im]).collect(),
            symmetric,
        })
    }

    pub fn into_file(self) -> Result<TensorFile> {
        if checked_numel(&self.dims)? > JSON_ENTRY_LIMIT {
            return Err(FormatError::Malformed("tensor too large for JSON".into()));
        }
        let data = self.data.iter().map(|p| C64::new(p[0], p[1])).collect();
        Ok(TensorFile {
            tensor: ComplexDenseTensor::from_data(&self.dims, data)?,
            symmetric: self.symmetric,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresJson {
    pub order: usize,
    pub rank: usize,
    #[serde(default)]
    pub symmetric: bool,
    /// One core when `symmetric`, otherwise `order` cores.
    pub cores: Vec<TensorJson>,
}

impl CoresJson {
    pub fn from_file(f: &CoresFile) -> Result<Self> {
        let stored = if f.symmetric { 1 } else { f.cores.order() };
        Ok(CoresJson {
            order: f.cores.order(),
            rank: f.cores.rank(),
            symmetric: f.symmetric,
            cores: f.cores.cores()[..stored]
                .iter()
                .map(|c| TensorJson::from_tensor(c, false))
                .collect::<Result<_>>()?,
        })
    }

    pub fn into_file(self) -> Result<CoresFile> {
        let mut cores = self
            .cores
            .into_iter()
            .map(|c| c.into_file().map(|f| f.tensor))
            .collect::<Result<Vec<_>>>()?;
        let expected = if self.symmetric { 1 } else { self.order };
        if cores.len() != expected {
            return Err(FormatError::Malformed(format!(
                "{} cores, expected {}",
                cores.len(),
                expected
            )));
        }
        let f = if self.symmetric {
            CoresFile::symmetric(cores.pop().unwrap(), self.order)?
        } else {
            CoresFile::new(TrDecomposition::new(cores)?)
        };
        if f.cores.rank() != self.rank {
            return Err(FormatError::Malformed(format!(
                "cores have rank {}, header says {}",
                f.cores.rank(),
                self.rank
            )));
        }
        Ok(f)
    }
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Reads a tensor from `.trt`, or from the JSON mirror when the extension is `.json`.
pub fn read_tensor(path: &Path) -> Result<TensorFile> {
    if is_json(path) {
        let j: TensorJson = serde_json::from_slice(&fs::read(path)?)?;
        return j.into_file();
    }
    let mut r = io::BufReader::new(fs::File::open(path)?);
    read_trt_from(&mut r)
}

pub fn write_tensor(path: &Path, t: &ComplexDenseTensor, symmetric: bool) -> Result<()> {
    if is_json(path) {
        fs::write(
            path,
            serde_json::to_vec(&TensorJson::from_tensor(t, symmetric)?)?,
        )?;
        return Ok(());
    }
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    write_trt_to(&mut w, t, symmetric)?;
    w.flush()?;
    Ok(())
}

pub fn read_cores(path: &Path) -> Result<CoresFile> {
    if is_json(path) {
        let j: CoresJson = serde_json::from_slice(&fs::read(path)?)?;
        return j.into_file();
    }
    let mut r = io::BufReader::new(fs::File::open(path)?);
    read_trc_from(&mut r)
}

pub fn write_cores(path: &Path, f: &CoresFile) -> Result<()> {
    if is_json(path) {
        fs::write(path, serde_json::to_vec(&CoresJson::from_file(f)?)?)?;
        return Ok(());
    }
    let mut w = io::BufWriter::new(fs::File::create(path)?);
    write_trc_to(&mut w, f)?;
    w.flush()?;
    Ok(())
}

/// Probe file with 1-based indices. `gammas` maps a 1-based mode to Γ_k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
    pub alpha_prime: Vec<usize>,
    pub beta_prime: Vec<usize>,
    pub gamma_pair: Vec<usize>,
    pub gamma_pair_prime: Vec<usize>,
    pub gamma: Vec<usize>,
    pub gammas: BTreeMap<usize, Vec<usize>>,
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|&i| i + 1).collect()
}

fn zero_based(v: &[usize], what: &str) -> Result<Vec<usize>> {
    v.iter()
        .map(|&i| {
            i.checked_sub(1).ok_or_else(|| {
                FormatError::Malformed(format!("{} holds index 0; probe files are 1-based", what))
            })
        })
        .collect()
}

impl ProbeFile {
    pub fn from_config(p: &ProbeConfig) -> Self {
        ProbeFile {
            alpha: one_based(&p.alpha),
            beta: one_based(&p.beta),
            alpha_prime: one_based(&p.alpha_p),
            beta_prime: one_based(&p.beta_p),
            gamma_pair: one_based(&p.gamma_pair),
            gamma_pair_prime: one_based(&p.gamma_pair_p),
            gamma: one_based(&p.gamma),
            gammas: p
                .gamma_modes
                .iter()
                .enumerate()
                .map(|(k, g)| (k + 1, one_based(g)))
                .collect(),
        }
    }

    pub fn to_config(&self) -> Result<ProbeConfig> {
        let d = self.gamma.len();
        let keys: Vec<usize> = self.gammas.keys().copied().collect();
        if keys != (1..=d).collect::<Vec<_>>() {
            return Err(FormatError::Malformed(format!(
                "gammas must have keys 1..={}, got {:?}",
                d, keys
            )));
        }
        Ok(ProbeConfig {
            alpha: zero_based(&self.alpha, "alpha")?,
            beta: zero_based(&self.beta, "beta")?,
            alpha_p: zero_based(&self.alpha_prime, "alpha_prime")?,
            beta_p: zero_based(&self.beta_prime, "beta_prime")?,
            gamma_pair: zero_based(&self.gamma_pair, "gamma_pair")?,
            gamma_pair_p: zero_based(&self.gamma_pair_prime, "gamma_pair_prime")?,
            gamma: zero_based(&self.gamma, "gamma")?,
            gamma_modes: self
                .gammas
                .values()
                .map(|g| zero_based(g, "gammas"))
                .collect::<Result<_>>()?,
        })
    }
}

pub fn read_probes(path: &Path) -> Result<ProbeConfig> {
    let f: ProbeFile = serde_json::from_slice(&fs::read(path)?)?;
    f.to_config()
}

pub fn write_probes(path: &Path, p: &ProbeConfig) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(&ProbeFile::from_config(p))?)?;
    Ok(())
}
