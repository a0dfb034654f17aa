//! On-disk formats: "cplx" complex arrays, trajectory CSV, PGM previews and
//! sampler step logs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diffusion::StepRecord;
use crate::error::{Error, Result};
use crate::image::{KSpaceMeasurements, MultiCoilImage, RealImage};
use crate::trajgen::Trajectory;

pub const CPLX_DTYPE: &str = "c64le";

pub const TRAJECTORY_HEADER: [&str; 7] = [
    "interleaf",
    "index",
    "t_s",
    "kx_cycles_per_cm",
    "ky_cycles_per_cm",
    "gx_mT_per_m",
    "gy_mT_per_m",
];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CplxHeader {
    dims: Vec<usize>,
    dtype: String,
}

/// Writes one JSON header line then interleaved little-endian f32 pairs.
pub fn write_cplx<W: Write>(mut w: W, dims: &[usize], data: &[Complex64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::shape(format!("{expected} values for dims {dims:?}"), data.len()));
    }
    let header = CplxHeader {
        dims: dims.to_vec(),
        dtype: CPLX_DTYPE.into(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Format { offset: 0, detail: e.to_string() })?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(data.len() * 8);
    for z in data {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_cplx<R: Read>(r: R) -> Result<(Vec<usize>, Vec<Complex64>)> {
    let mut r = BufReader::new(r);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format {
            offset: line.len() as u64,
            detail: "missing newline after cplx header".into(),
        });
    }
    let header_len = line.len() as u64;
    let header: CplxHeader = serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| Error::Format {
        offset: e.column().saturating_sub(1) as u64,
        detail: format!("bad cplx header: {e}"),
    })?;
    if header.dtype != CPLX_DTYPE {
        return Err(Error::Format {
            offset: 0,
            detail: format!("unsupported dtype {:?}, expected {CPLX_DTYPE:?}", header.dtype),
        });
    }
    if header.dims.is_empty() {
        return Err(Error::Format { offset: 0, detail: "empty dims".into() });
    }
    let count = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8).map(|_| n))
        .ok_or_else(|| Error::Format { offset: 0, detail: "dims overflow".into() })?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != count * 8 {
        let valid = payload.len().min(count * 8) as u64;
        return Err(Error::Format {
            offset: header_len + valid - valid % 8,
            detail: format!("payload has {} bytes, dims {:?} need {}", payload.len(), header.dims, count * 8),
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok((header.dims, data))
}

pub fn write_image(path: &Path, img: &MultiCoilImage) -> Result<()> {
    write_cplx(BufWriter::new(File::create(path)?), &[img.coils, img.height, img.width], &img.data)
}

pub fn read_image(path: &Path) -> Result<MultiCoilImage> {
    let (dims, data) = read_cplx(File::open(path)?)?;
    match dims[..] {
        [c, h, w] => MultiCoilImage::from_data(c, h, w, data),
        _ => Err(Error::Format {
            offset: 0,
            detail: format!("image needs dims [coils,h,w], got {dims:?}"),
        }),
    }
}

pub fn write_measurements(path: &Path, meas: &KSpaceMeasurements) -> Result<()> {
    write_cplx(BufWriter::new(File::create(path)?), &[meas.coils, meas.samples_per_coil], &meas.data)
}

pub fn read_measurements(path: &Path) -> Result<KSpaceMeasurements> {
    let (dims, data) = read_cplx(File::open(path)?)?;
    match dims[..] {
        [c, s] => Ok(KSpaceMeasurements::from_data(c, s, data)?.with_ref(path.display().to_string())),
        _ => Err(Error::Format {
            offset: 0,
            detail: format!("measurements need dims [coils,samples], got {dims:?}"),
        }),
    }
}

/// One row of a trajectory CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub interleaf: usize,
    pub index: usize,
    pub t_s: f64,
    pub k: [f64; 2],
    pub g: [f64; 2],
}

/// Trajectory samples as read back from CSV, in (interleaf, index) order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let rows = traj
            .interleaves
            .iter()
            .enumerate()
            .flat_map(|(i, il)| {
                il.k.iter().zip(&il.g).enumerate().map(move |(j, (k, g))| TrajectoryRow {
                    interleaf: i,
                    index: j,
                    t_s: j as f64 * traj.dwell_s,
                    k: *k,
                    g: *g,
                })
            })
            .collect();
        Self { rows }
    }

    pub fn interleaves(&self) -> usize {
        self.rows.last().map_or(0, |r| r.interleaf + 1)
    }

    pub fn k_samples(&self) -> Vec<[f64; 2]> {
        self.rows.iter().map(|r| r.k).collect()
    }

    /// Coordinates in cycles/sample for a `matrix`-pixel grid over `fov_cm`.
    pub fn normalized_coords(&self, matrix: usize, fov_cm: f64) -> Vec<[f64; 2]> {
        let s = fov_cm / matrix as f64;
        self.rows.iter().map(|r| [r.k[0] * s, r.k[1] * s]).collect()
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRAJECTORY_HEADER).map_err(csv_err)?;
    for r in TrajectoryTable::from_trajectory(traj).rows {
        out.write_record([
            r.interleaf.to_string(),
            r.index.to_string(),
            fmt_f(r.t_s),
            fmt_f(r.k[0]),
            fmt_f(r.k[1]),
            fmt_f(r.g[0]),
            fmt_f(r.g[1]),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            offset,
            detail: format!("{other:?}"),
        },
    }
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<TrajectoryTable> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(Error::Format {
            offset: 0,
            detail: format!("expected header {}", TRAJECTORY_HEADER.join(",")),
        });
    }
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_err)? {
        let offset = record.position().map_or(0, |p| p.byte());
        let bad = |detail: String| Error::Format { offset, detail };
        let int = |i: usize| -> Result<usize> {
            record[i].trim().parse().map_err(|_| bad(format!("column {} is not an integer: {:?}", TRAJECTORY_HEADER[i], &record[i])))
        };
        let float = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .trim()
                .parse()
                .map_err(|_| bad(format!("column {} is not a number: {:?}", TRAJECTORY_HEADER[i], &record[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("column {} is not finite", TRAJECTORY_HEADER[i])))
            }
        };
        let row = TrajectoryRow {
            interleaf: int(0)?,
            index: int(1)?,
            t_s: float(2)?,
            k: [float(3)?, float(4)?],
            g: [float(5)?, float(6)?],
        };
        let expected = match rows.last() {
            None => (0, 0),
            Some(p) if row.interleaf == p.interleaf => (p.interleaf, p.index + 1),
            Some(p) => (p.interleaf + 1, 0),
        };
        if (row.interleaf, row.index) != expected {
            return Err(bad(format!(
                "rows must be ordered by (interleaf, index): expected {expected:?}, got ({}, {})",
                row.interleaf, row.index
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(TrajectoryTable { rows })
}

/// 8-bit binary PGM with `peak` mapped to 255.
pub fn write_pgm<W: Write>(mut w: W, img: &RealImage, peak: f64) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    let bytes: Vec<u8> = img.data.iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_step_log<W: Write>(w: W, log: &[StepRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for rec in log {
        out.serialize(rec).map_err(csv_err)?;
    }
    if log.is_empty() {
        out.write_record(["step", "sigma", "sigma_next", "gamma", "residual_norm"]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
