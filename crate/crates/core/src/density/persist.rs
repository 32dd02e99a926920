//! Binary layout for fitted density models. All integers and reals are
//! little-endian; matrices are row-major `f64`.
//!
//! ```text
//! magic   8 bytes  "HEDGEDNS"
//! version u32      1
//! count   u32      number of sections
//! section:
//!   tag u8  (1 gaussian, 2 background, 3 rde, 4 huq)
//!   gaussian: dim u64, degenerate u8, mu[dim], sigma[dim*dim], sigma_inv[dim*dim]
//!   rde:      dim u64, target u64, explained f64, center[dim],
//!             projection[dim*target], gaussian (reduced)
//!   huq:      alpha f64, n u64, density[n], info[n]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{DensityModels, GaussianFit, HuqConfig, RdeFit};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 8] = b"HEDGEDNS";
pub const VERSION: u32 = 1;

const TAG_GAUSSIAN: u8 = 1;
const TAG_BACKGROUND: u8 = 2;
const TAG_RDE: u8 = 3;
const TAG_HUQ: u8 = 4;

// Refuse absurd sizes from corrupted headers before allocating.
const MAX_LEN: u64 = 1 << 28;

fn io(e: std::io::Error) -> Error {
    Error::Format(format!("density model stream: {e}"))
}

fn write_reals<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    xs.iter().try_for_each(|&x| w.write_f64::<LE>(x)).map_err(io)
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = r.read_u64::<LE>().map_err(io)?;
    if n > MAX_LEN {
        return Err(Error::Format(format!("length {n} exceeds limit")));
    }
    Ok(n as usize)
}

fn read_reals<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    if n as u64 > MAX_LEN {
        return Err(Error::Format(format!("length {n} exceeds limit")));
    }
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v).map_err(io)?;
    Ok(v)
}

fn write_gaussian<W: Write>(w: &mut W, g: &GaussianFit<f64>) -> Result<()> {
    w.write_u64::<LE>(g.dim as u64).map_err(io)?;
    w.write_u8(g.degenerate as u8).map_err(io)?;
    write_reals(w, &g.mu)?;
    write_reals(w, g.sigma.as_slice())?;
    write_reals(w, g.sigma_inv.as_slice())
}

fn read_gaussian<R: Read>(r: &mut R) -> Result<GaussianFit<f64>> {
    let dim = read_len(r)?;
    let degenerate = r.read_u8().map_err(io)? != 0;
    let mu = read_reals(r, dim)?;
    let sigma = Matrix::from_row_major(dim, dim, read_reals(r, dim * dim)?)?;
    let sigma_inv = Matrix::from_row_major(dim, dim, read_reals(r, dim * dim)?)?;
    Ok(GaussianFit {
        mu,
        sigma,
        sigma_inv,
        dim,
        degenerate,
    })
}

pub fn write_models<W: Write>(w: &mut W, m: &DensityModels) -> Result<()> {
    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LE>(VERSION).map_err(io)?;
    let count = [m.gaussian.is_some(), m.background.is_some(), m.rde.is_some(), m.huq.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    w.write_u32::<LE>(count as u32).map_err(io)?;
    if let Some(g) = &m.gaussian {
        w.write_u8(TAG_GAUSSIAN).map_err(io)?;
        write_gaussian(w, g)?;
    }
    if let Some(g) = &m.background {
        w.write_u8(TAG_BACKGROUND).map_err(io)?;
        write_gaussian(w, g)?;
    }
    if let Some(rde) = &m.rde {
        w.write_u8(TAG_RDE).map_err(io)?;
        w.write_u64::<LE>(rde.dim() as u64).map_err(io)?;
        w.write_u64::<LE>(rde.target_dim() as u64).map_err(io)?;
        w.write_f64::<LE>(rde.explained_variance).map_err(io)?;
        write_reals(w, &rde.center)?;
        write_reals(w, rde.projection.as_slice())?;
        write_gaussian(w, &rde.reduced_fit)?;
    }
    if let Some(h) = &m.huq {
        w.write_u8(TAG_HUQ).map_err(io)?;
        w.write_f64::<LE>(h.alpha).map_err(io)?;
        w.write_u64::<LE>(h.density_calibration().len() as u64).map_err(io)?;
        write_reals(w, h.density_calibration())?;
        write_reals(w, h.info_calibration())?;
    }
    Ok(())
}

pub fn read_models<R: Read>(r: &mut R) -> Result<DensityModels> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a density model file (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported density model version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(io)?;
    let mut m = DensityModels::default();
    for _ in 0..count {
        match r.read_u8().map_err(io)? {
            TAG_GAUSSIAN => m.gaussian = Some(read_gaussian(r)?),
            TAG_BACKGROUND => m.background = Some(read_gaussian(r)?),
            TAG_RDE => {
                let dim = read_len(r)?;
                let target = read_len(r)?;
                let explained_variance = r.read_f64::<LE>().map_err(io)?;
                let center = read_reals(r, dim)?;
                let projection = Matrix::from_row_major(dim, target, read_reals(r, dim * target)?)?;
                let reduced_fit = read_gaussian(r)?;
                if reduced_fit.dim != target {
                    return Err(Error::Format("rde reduced fit dimension mismatch".into()));
                }
                m.rde = Some(RdeFit {
                    center,
                    projection,
                    reduced_fit,
                    explained_variance,
                });
            }
            TAG_HUQ => {
                let alpha = r.read_f64::<LE>().map_err(io)?;
                let n = read_len(r)?;
                let density = read_reals(r, n)?;
                let info = read_reals(r, n)?;
                m.huq = Some(HuqConfig::new(alpha, &density, &info)?);
            }
            t => return Err(Error::Format(format!("unknown section tag {t}"))),
        }
    }
    Ok(m)
}

pub fn save_models(path: impl AsRef<Path>, m: &DensityModels) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_models(&mut w, m)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_models(path: impl AsRef<Path>) -> Result<DensityModels> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_models(&mut BufReader::new(f))
}
