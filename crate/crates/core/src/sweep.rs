//! Grid search over (interleaves, alpha) at a fixed readout duration.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_reconstruct, DenoiserConfig, GuidanceConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{KSpaceMeasurements, MultiCoilImage};
use crate::metrics::score_rss;
use crate::nufft::{cg_inverse, forward, CgOptions, NufftOptions, NufftPlan};
use crate::phantom::{
    coil_images, coil_sensitivities, default_noise_sigma, make_phantom, simulate_measurements, PhantomKind, PhantomSpec,
};
use crate::trajgen::{check_hardware_limits, design_spiral, SpiralSpec};

pub const SWEEP_HEADER: [&str; 6] = ["interleaves", "alpha", "ssim", "nrmse", "feasible", "recon_seconds"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMethod {
    CgOnly,
    Diffusion,
}

/// Everything needed to turn measurements into an image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconSettings {
    pub method: ReconMethod,
    pub cg: CgOptions,
    pub guidance: GuidanceConfig,
    pub schedule: NoiseSchedule,
    pub denoiser: DenoiserConfig,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            method: ReconMethod::CgOnly,
            cg: CgOptions::default(),
            guidance: GuidanceConfig::default(),
            schedule: NoiseSchedule::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl ReconSettings {
    pub fn reconstruct(&self, plan: &NufftPlan, meas: &KSpaceMeasurements, seed: u64) -> Result<MultiCoilImage> {
        match self.method {
            ReconMethod::CgOnly => Ok(cg_inverse(plan, meas, self.cg)?.0),
            ReconMethod::Diffusion => {
                let den = self.denoiser.build()?;
                Ok(sample_reconstruct(plan, meas, den.as_ref(), &self.schedule, &self.guidance, seed)?.image)
            }
        }
    }
}

/// Ground truth coil images and their simulated noisy acquisition.
#[derive(Clone, Debug)]
pub struct SimulatedCase {
    pub truth: MultiCoilImage,
    pub meas: KSpaceMeasurements,
}

/// Builds phantom, coil maps (seeded by the phantom seed) and noisy samples.
pub fn simulate_case(plan: &NufftPlan, phantom: &PhantomSpec, noise_seed: u64) -> Result<SimulatedCase> {
    let img = make_phantom(phantom)?;
    let sens = coil_sensitivities(phantom.size, phantom.coils, phantom.coil_profile, phantom.seed)?;
    let truth = coil_images(&img, &sens)?;
    let sigma = match phantom.noise_sigma {
        Some(s) => s,
        None => default_noise_sigma(&forward(plan, &truth)?),
    };
    let meas = simulate_measurements(&img, &sens, plan, sigma, noise_seed)?;
    Ok(SimulatedCase { truth, meas })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub interleaves_list: Vec<usize>,
    pub alpha_list: Vec<f64>,
    pub readout_s: f64,
    pub matrix_size: usize,
    pub fov_cm: f64,
    pub dwell_s: f64,
    pub gmax_mt_per_m: f64,
    pub smax_t_per_m_per_s: f64,
    /// First phantom of the corpus; phantom `i` uses seed `phantom.seed + i`.
    pub phantom: PhantomSpec,
    pub phantom_count: usize,
    pub recon: ReconSettings,
    pub seed: u64,
    pub workers: usize,
    /// Wall-clock timing makes the CSV non-reproducible, so it is opt-in.
    pub record_timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let hw = SpiralSpec::default();
        Self {
            interleaves_list: vec![1, 4, 8, 16, 23, 32, 64],
            alpha_list: vec![1.0, 1.23, 1.5, 2.0, 3.0, 4.0],
            readout_s: 0.02,
            matrix_size: 64,
            fov_cm: 5.5,
            dwell_s: hw.dwell_s,
            gmax_mt_per_m: hw.gmax_mt_per_m,
            smax_t_per_m_per_s: hw.smax_t_per_m_per_s,
            phantom: PhantomSpec {
                kind: PhantomKind::RandomEllipses,
                ..PhantomSpec::default()
            },
            phantom_count: 1,
            recon: ReconSettings::default(),
            seed: 0,
            workers: 1,
            record_timing: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interleaves_list.is_empty() || self.alpha_list.is_empty() {
            return Err(Error::InvalidParameter("sweep grids must be nonempty".into()));
        }
        if self.phantom_count == 0 || self.workers == 0 {
            return Err(Error::InvalidParameter("phantom_count and workers must be >= 1".into()));
        }
        if self.phantom.size != self.matrix_size {
            return Err(Error::InvalidParameter(format!(
                "phantom size {} differs from matrix_size {}",
                self.phantom.size, self.matrix_size
            )));
        }
        self.phantom.validate()?;
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if [self.fov_cm, self.readout_s, self.dwell_s, self.gmax_mt_per_m, self.smax_t_per_m_per_s]
            .into_iter()
            .all(ok)
        {
            Ok(())
        } else {
            Err(Error::InvalidParameter("fov, readout, dwell and hardware caps must be positive".into()))
        }
    }

    pub fn spiral_spec(&self, interleaves: usize, alpha: f64) -> SpiralSpec {
        SpiralSpec {
            matrix_size: self.matrix_size,
            fov_cm: self.fov_cm,
            interleaves,
            alpha,
            total_readout_s: self.readout_s,
            dwell_s: self.dwell_s,
            gmax_mt_per_m: self.gmax_mt_per_m,
            smax_t_per_m_per_s: self.smax_t_per_m_per_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub interleaves: usize,
    pub alpha: f64,
    /// Mean over the phantom corpus; empty when the cell failed.
    pub ssim: Option<f64>,
    pub nrmse: Option<f64>,
    pub feasible: bool,
    pub recon_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one grid cell, independent of scheduling order.
pub fn cell_seed(global: u64, interleaves: usize, alpha: f64) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ interleaves as u64) ^ alpha.to_bits())
}

fn run_cell(config: &SweepConfig, interleaves: usize, alpha: f64) -> SweepRow {
    let mut row = SweepRow {
        interleaves,
        alpha,
        ssim: None,
        nrmse: None,
        feasible: false,
        recon_seconds: 0.0,
    };
    let traj = match design_spiral(&config.spiral_spec(interleaves, alpha)) {
        Ok(t) if check_hardware_limits(&t).feasible => t,
        _ => return row,
    };
    row.feasible = true;
    let seed = cell_seed(config.seed, interleaves, alpha);
    let scored = (|| -> Result<(f64, f64, f64)> {
        let plan = NufftPlan::from_trajectory(&traj, NufftOptions::default())?;
        let (mut ssim, mut nrmse, mut secs) = (0.0, 0.0, 0.0);
        for i in 0..config.phantom_count {
            let phantom = PhantomSpec {
                seed: config.phantom.seed + i as u64,
                ..config.phantom.clone()
            };
            let case_seed = splitmix64(seed ^ i as u64);
            let case = simulate_case(&plan, &phantom, case_seed)?;
            let start = Instant::now();
            let recon = config.recon.reconstruct(&plan, &case.meas, case_seed)?;
            secs += start.elapsed().as_secs_f64();
            let s = score_rss(&case.truth, &recon)?;
            ssim += s.ssim;
            nrmse += s.nrmse;
        }
        let n = config.phantom_count as f64;
        Ok((ssim / n, nrmse / n, secs))
    })();
    match scored {
        Ok((ssim, nrmse, secs)) => {
            row.ssim = Some(ssim);
            row.nrmse = Some(nrmse);
            if config.record_timing {
                row.recon_seconds = secs;
            }
        }
        Err(_) => row.feasible = false,
    }
    row
}

pub fn run_grid_search(config: &SweepConfig) -> Result<SweepResult> {
    run_grid_search_with_progress(config, |_| {})
}

/// Runs every cell on a pool of `config.workers` threads; `progress` sees each
/// finished row in completion order.
pub fn run_grid_search_with_progress<F>(config: &SweepConfig, progress: F) -> Result<SweepResult>
where
    F: Fn(&SweepRow) + Sync,
{
    config.validate()?;
    let mut cells: Vec<(usize, f64)> = config
        .interleaves_list
        .iter()
        .flat_map(|&n| config.alpha_list.iter().map(move |&a| (n, a)))
        .collect();
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, a)| {
                let row = run_cell(config, n, a);
                progress(&row);
                row
            })
            .collect()
    });
    Ok(SweepResult { rows })
}

pub fn write_sweep_csv<W: Write>(w: W, result: &SweepResult) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let err = |e: csv::Error| Error::Format { offset: 0, detail: e.to_string() };
    out.write_record(SWEEP_HEADER).map_err(err)?;
    let mut rows = result.rows.clone();
    rows.sort_by(|a, b| a.interleaves.cmp(&b.interleaves).then(a.alpha.total_cmp(&b.alpha)));
    for row in &rows {
        out.serialize(row).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_heatmap_csv(result: &SweepResult, path: &Path) -> Result<()> {
    write_sweep_csv(std::io::BufWriter::new(std::fs::File::create(path)?), result)
}

pub fn read_sweep_csv<R: Read>(r: R) -> Result<SweepResult> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(|e| Error::Format { offset: 0, detail: e.to_string() })?;
    if headers.iter().ne(SWEEP_HEADER.iter().copied()) {
        return Err(Error::Format {
            offset: 0,
            detail: format!("expected header {}", SWEEP_HEADER.join(",")),
        });
    }
    let rows = reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Format {
                offset: e.position().map_or(0, |p| p.byte()),
                detail: e.to_string(),
            })
        })
        .collect::<Result<Vec<SweepRow>>>()?;
    Ok(SweepResult { rows })
}

/// `a * ln(b * interleaves)`, the ridge parameterization used for overlays.
pub fn ridge_curve(interleaves: f64, a: f64, b: f64) -> Result<f64> {
    let arg = b * interleaves;
    if !(arg > 0.0) {
        return Err(Error::Domain(format!("b * interleaves must be > 0, got {arg}")));
    }
    let alpha = a * arg.ln();
    if !(alpha >= 1.0 - 1e-12) {
        return Err(Error::Domain(format!("ridge alpha {alpha} is below 1")));
    }
    Ok(alpha)
}
