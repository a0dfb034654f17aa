//! Variable-density spiral trajectory design.
//!
//! The k-space path of one interleaf is `k(tau) = kmax * tau^alpha * exp(i*omega*tau)`
//! for `tau` in `[0, 1]`, with `omega = 2*pi*turns`. Turns are picked so that the
//! edge pitch of the union of interleaves is Nyquist (`1/fov`), reduced only when
//! the per-interleaf readout is too short for the hardware to wind that far. The path
//! is then traversed as fast as the gradient amplitude and slew caps allow and
//! stretched uniformly in time to fill the requested readout.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proton gyromagnetic ratio over 2*pi, Hz/T.
pub const GAMMA_BAR_HZ_PER_T: f64 = 42.577e6;

/// k-space velocity (cycles/cm/s) produced by a 1 mT/m gradient.
pub const KRATE_PER_MT_PER_M: f64 = GAMMA_BAR_HZ_PER_T * 1e-3 / 100.0;

const CAP_TOL: f64 = 1e-9;

/// Fractions of the hardware caps used by the continuous-time design. The first
/// one whose sampled waveform passes the hard check is kept.
const DESIGN_MARGINS: [f64; 4] = [0.99, 0.97, 0.93, 0.85];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralSpec {
    pub matrix_size: usize,
    pub fov_cm: f64,
    pub interleaves: usize,
    pub alpha: f64,
    /// Summed readout time over all interleaves.
    pub total_readout_s: f64,
    pub dwell_s: f64,
    pub gmax_mt_per_m: f64,
    pub smax_t_per_m_per_s: f64,
}

impl Default for SpiralSpec {
    fn default() -> Self {
        Self {
            matrix_size: 256,
            fov_cm: 22.0,
            interleaves: 1,
            alpha: 1.0,
            total_readout_s: 0.02,
            dwell_s: 4e-6,
            gmax_mt_per_m: 40.0,
            smax_t_per_m_per_s: 150.0,
        }
    }
}

impl SpiralSpec {
    pub fn new(matrix_size: usize, fov_cm: f64, interleaves: usize, alpha: f64, total_readout_s: f64) -> Self {
        Self {
            matrix_size,
            fov_cm,
            interleaves,
            alpha,
            total_readout_s,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.matrix_size < 8 || self.matrix_size % 2 != 0 {
            return bad(format!("matrix_size must be even and >= 8, got {}", self.matrix_size));
        }
        if !(self.fov_cm > 0.0 && self.fov_cm.is_finite()) {
            return bad(format!("fov_cm must be positive, got {}", self.fov_cm));
        }
        if !(1.0..=8.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [1, 8], got {}", self.alpha));
        }
        if self.interleaves < 1 {
            return bad("interleaves must be >= 1".into());
        }
        if !(self.dwell_s > 0.0 && self.dwell_s.is_finite()) {
            return bad(format!("dwell_s must be positive, got {}", self.dwell_s));
        }
        if !(self.gmax_mt_per_m > 0.0 && self.smax_t_per_m_per_s > 0.0) {
            return bad("gradient caps must be positive".into());
        }
        if !(self.total_readout_s.is_finite()
            && self.total_readout_s / self.interleaves as f64 >= 2.0 * self.dwell_s)
        {
            return bad(format!(
                "readout {} s over {} interleaves leaves fewer than 2 samples per interleaf",
                self.total_readout_s, self.interleaves
            ));
        }
        Ok(())
    }

    /// Outer k-space radius in cycles/cm.
    pub fn kmax(&self) -> f64 {
        self.matrix_size as f64 / (2.0 * self.fov_cm)
    }

    pub fn interleaf_duration_s(&self) -> f64 {
        self.total_readout_s / self.interleaves as f64
    }

    /// Turns per interleaf giving an edge pitch of `interleaves / fov` per interleaf.
    pub fn nyquist_turns(&self) -> f64 {
        self.matrix_size as f64 * self.alpha / (2.0 * self.interleaves as f64)
    }

    /// Maximum k-space speed, cycles/cm/s.
    fn max_speed(&self) -> f64 {
        KRATE_PER_MT_PER_M * self.gmax_mt_per_m
    }

    /// Maximum k-space acceleration, cycles/cm/s^2.
    fn max_accel(&self) -> f64 {
        KRATE_PER_MT_PER_M * self.smax_t_per_m_per_s * 1e3
    }
}

/// The analytic spiral curve `kmax * tau^alpha * exp(i*omega*tau)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiralPath {
    pub kmax: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl SpiralPath {
    pub fn new(kmax: f64, alpha: f64, turns: f64) -> Self {
        Self {
            kmax,
            alpha,
            omega: 2.0 * PI * turns,
        }
    }

    pub fn radius(&self, tau: f64) -> f64 {
        self.kmax * tau.powf(self.alpha)
    }

    pub fn point(&self, tau: f64) -> Complex64 {
        Complex64::from_polar(self.radius(tau), self.omega * tau)
    }

    fn derivatives(&self, tau: f64) -> (Complex64, Complex64) {
        let a = self.alpha;
        let w = self.omega;
        let rot = Complex64::from_polar(self.kmax, w * tau);
        let d1 = Complex64::new(a * tau.powf(a - 1.0), w * tau.powf(a));
        let d2 = Complex64::new(
            a * (a - 1.0) * tau.powf(a - 2.0) - w * w * tau.powf(a),
            2.0 * w * a * tau.powf(a - 1.0),
        );
        (rot * d1, rot * d2)
    }

    fn curvature(&self, tau: f64) -> f64 {
        let (d1, d2) = self.derivatives(tau);
        let cross = (d1.conj() * d2).im.abs();
        let speed = d1.norm();
        if cross == 0.0 {
            0.0
        } else if speed == 0.0 {
            f64::INFINITY
        } else {
            cross / speed.powi(3)
        }
    }
}

/// Time-optimal traversal of a path sampled on a uniform `tau` grid.
struct Traversal {
    tau: Vec<f64>,
    ds: Vec<f64>,
    v: Vec<f64>,
    t: Vec<f64>,
}

impl Traversal {
    fn compute(path: &SpiralPath, vmax: f64, amax: f64) -> Self {
        let turns = path.omega / (2.0 * PI);
        let n = (4096 + 512 * turns.ceil() as usize).min(1 << 20);
        let tau: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let pts: Vec<Complex64> = tau.iter().map(|&t| path.point(t)).collect();
        let ds: Vec<f64> = pts.windows(2).map(|w| (w[1] - w[0]).norm()).collect();

        let mut kappa: Vec<f64> = tau.iter().map(|&t| path.curvature(t)).collect();
        kappa[0] = kappa[1];
        let vlim: Vec<f64> = kappa
            .iter()
            .map(|&k| if k > 0.0 { vmax.min((amax / k).sqrt()) } else { vmax })
            .collect();
        let accel = |k: f64, v: f64| {
            let centripetal = k * v * v;
            (amax * amax - centripetal * centripetal).max(0.0).sqrt()
        };

        let mut v = vec![0.0; n + 1];
        for j in 0..n {
            let a = accel(kappa[j], v[j]);
            v[j + 1] = vlim[j + 1].min((v[j] * v[j] + 2.0 * a * ds[j]).sqrt());
        }
        for j in (0..n).rev() {
            let a = accel(kappa[j + 1], v[j + 1]);
            v[j] = v[j].min((v[j + 1] * v[j + 1] + 2.0 * a * ds[j]).sqrt());
        }

        let mut t = vec![0.0; n + 1];
        for j in 0..n {
            let dt = if ds[j] == 0.0 {
                0.0
            } else {
                2.0 * ds[j] / (v[j] + v[j + 1])
            };
            t[j + 1] = t[j] + dt;
        }
        Self { tau, ds, v, t }
    }

    fn duration(&self) -> f64 {
        *self.t.last().unwrap()
    }

    /// Path parameter at traversal time `times[i]`; `times` must be nondecreasing.
    fn tau_at(&self, times: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let mut j = 0;
        let last = self.t.len() - 1;
        for &ts in times {
            if ts >= self.duration() {
                out.push(1.0);
                continue;
            }
            while j + 1 < last && self.t[j + 1] < ts {
                j += 1;
            }
            let seg = self.t[j + 1] - self.t[j];
            let frac = if seg > 0.0 && self.ds[j] > 0.0 {
                let local = ts - self.t[j];
                let acc = (self.v[j + 1] - self.v[j]) / seg;
                ((self.v[j] * local + 0.5 * acc * local * local) / self.ds[j]).clamp(0.0, 1.0)
            } else {
                0.0
            };
            out.push(self.tau[j] + frac * (self.tau[j + 1] - self.tau[j]));
        }
        out
    }
}

/// One readout: k-space samples (cycles/cm) and gradients (mT/m) at dwell spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Interleaf {
    pub k: Vec<[f64; 2]>,
    pub g: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub interleaves: Vec<Interleaf>,
    pub dwell_s: f64,
    pub kmax: f64,
    /// Revolutions per interleaf actually used.
    pub turns: f64,
    pub spec: SpiralSpec,
}

impl Trajectory {
    pub fn samples_per_interleaf(&self) -> usize {
        self.interleaves.first().map_or(0, |il| il.k.len())
    }

    pub fn total_samples(&self) -> usize {
        self.interleaves.iter().map(|il| il.k.len()).sum()
    }

    /// Duration of one interleaf, first to last sample.
    pub fn interleaf_duration_s(&self) -> f64 {
        self.samples_per_interleaf().saturating_sub(1) as f64 * self.dwell_s
    }

    /// All k-space samples in (interleaf, index) order.
    pub fn k_samples(&self) -> Vec<[f64; 2]> {
        self.interleaves.iter().flat_map(|il| il.k.iter().copied()).collect()
    }

    /// Samples in cycles/sample, i.e. scaled by `fov / matrix`.
    pub fn normalized_coords(&self) -> Vec<[f64; 2]> {
        let scale = self.spec.fov_cm / self.spec.matrix_size as f64;
        self.interleaves
            .iter()
            .flat_map(|il| il.k.iter().map(move |k| [k[0] * scale, k[1] * scale]))
            .collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.interleaves
            .iter()
            .flat_map(|il| il.k.iter())
            .map(|k| k[0].hypot(k[1]))
            .fold(0.0, f64::max)
    }
}

/// Designs a hardware-feasible variable-density spiral for `spec`.
pub fn design_spiral(spec: &SpiralSpec) -> Result<Trajectory> {
    spec.validate()?;
    let steps = (spec.interleaf_duration_s() / spec.dwell_s + 1e-9).floor() as usize;
    let available = steps as f64 * spec.dwell_s;

    let mut last_report = None;
    for &margin in &DESIGN_MARGINS {
        let vmax = margin * spec.max_speed();
        let amax = margin * spec.max_accel();
        let traversal_for = |turns: f64| Traversal::compute(&SpiralPath::new(spec.kmax(), spec.alpha, turns), vmax, amax);

        let radial = traversal_for(0.0);
        if radial.duration() > available {
            return Err(Error::InfeasibleDuration {
                requested_s: spec.total_readout_s,
                min_total_s: radial.duration() * spec.interleaves as f64,
            });
        }

        let (turns, traversal) = {
            let nyquist = spec.nyquist_turns();
            let full = traversal_for(nyquist);
            if full.duration() <= available {
                (nyquist, full)
            } else {
                let (mut lo, mut hi) = (0.0, nyquist);
                let mut best = radial;
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    let trial = traversal_for(mid);
                    if trial.duration() <= available {
                        lo = mid;
                        best = trial;
                    } else {
                        hi = mid;
                    }
                }
                (lo, best)
            }
        };

        let path = SpiralPath::new(spec.kmax(), spec.alpha, turns);
        let stretch = available / traversal.duration();
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * spec.dwell_s / stretch).collect();
        let mut taus = traversal.tau_at(&times);
        taus[steps] = 1.0;
        let k: Vec<[f64; 2]> = taus
            .iter()
            .map(|&tau| {
                let p = path.point(tau);
                [p.re, p.im]
            })
            .collect();
        let g = gradients_from_k(&k, spec.dwell_s);
        let base = Interleaf { k, g };

        let traj = Trajectory {
            interleaves: rotate_interleaves(&base, spec.interleaves),
            dwell_s: spec.dwell_s,
            kmax: spec.kmax(),
            turns,
            spec: spec.clone(),
        };
        let report = check_hardware_limits(&traj);
        if report.feasible {
            return Ok(traj);
        }
        last_report = Some(report);
    }
    let report = last_report.expect("at least one margin tried");
    Err(Error::NumericalBreakdown {
        iteration: DESIGN_MARGINS.len(),
        detail: format!(
            "sampled waveform violates caps at every design margin (amp {:.4} mT/m, slew {:.4} T/m/s)",
            report.max_amp_mt_per_m, report.max_slew_t_per_m_per_s
        ),
    })
}

/// Forward-difference gradients, mT/m. The last sample repeats the previous
/// gradient so the waveform has one entry per k-space sample.
pub fn gradients_from_k(k: &[[f64; 2]], dwell_s: f64) -> Vec<[f64; 2]> {
    let scale = 1.0 / (KRATE_PER_MT_PER_M * dwell_s);
    let mut g: Vec<[f64; 2]> = k
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) * scale, (w[1][1] - w[0][1]) * scale])
        .collect();
    match g.last().copied() {
        Some(last) => g.push(last),
        None => g.extend(k.iter().map(|_| [0.0, 0.0])),
    }
    g
}

/// Inverse of [`gradients_from_k`]: running sum of `g * gamma * dwell` from `k0`.
pub fn integrate_gradients(g: &[[f64; 2]], dwell_s: f64, k0: [f64; 2]) -> Vec<[f64; 2]> {
    let scale = KRATE_PER_MT_PER_M * dwell_s;
    let mut acc = k0;
    let mut out = Vec::with_capacity(g.len());
    for gi in g {
        out.push(acc);
        acc[0] += gi[0] * scale;
        acc[1] += gi[1] * scale;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardwareReport {
    pub max_amp_mt_per_m: f64,
    pub max_slew_t_per_m_per_s: f64,
    pub feasible: bool,
}

pub fn check_hardware_limits(traj: &Trajectory) -> HardwareReport {
    let mut max_amp: f64 = 0.0;
    let mut max_slew: f64 = 0.0;
    for il in &traj.interleaves {
        for g in &il.g {
            max_amp = max_amp.max(g[0].hypot(g[1]));
        }
        for w in il.g.windows(2) {
            let dg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            max_slew = max_slew.max(dg / traj.dwell_s * 1e-3);
        }
    }
    let feasible = max_amp <= traj.spec.gmax_mt_per_m * (1.0 + CAP_TOL)
        && max_slew <= traj.spec.smax_t_per_m_per_s * (1.0 + CAP_TOL);
    HardwareReport {
        max_amp_mt_per_m: max_amp,
        max_slew_t_per_m_per_s: max_slew,
        feasible,
    }
}

/// Copies of `base` rotated by `2*pi*i/n`, for `i` in `0..n`.
pub fn rotate_interleaves(base: &Interleaf, n: usize) -> Vec<Interleaf> {
    (0..n)
        .map(|i| {
            if i == 0 {
                return base.clone();
            }
            let (s, c) = (2.0 * PI * i as f64 / n as f64).sin_cos();
            let rot = |p: &[f64; 2]| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            Interleaf {
                k: base.k.iter().map(rot).collect(),
                g: base.g.iter().map(rot).collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig5_spec() -> SpiralSpec {
        SpiralSpec::new(256, 22.0, 23, 1.23, 0.02)
    }

    #[test]
    fn archimedean_10ms_reaches_kmax() {
        let spec = SpiralSpec::new(256, 22.0, 1, 1.0, 0.010);
        let traj = design_spiral(&spec).unwrap();
        assert!((traj.kmax - 256.0 / 44.0).abs() < 1e-12);
        assert!((traj.max_radius() / traj.kmax - 1.0).abs() < 5e-3);
        assert!(check_hardware_limits(&traj).feasible);
        assert_eq!(traj.interleaves.len(), 1);
        assert!(traj.turns > 1.0);
    }

    #[test]
    fn fig5_design_has_23_short_waveforms() {
        let traj = design_spiral(&fig5_spec()).unwrap();
        assert_eq!(traj.interleaves.len(), 23);
        let want = 0.02 / 23.0;
        assert!((traj.interleaf_duration_s() - want).abs() <= traj.dwell_s);
        assert!(check_hardware_limits(&traj).feasible);
    }

    #[test]
    fn every_interleaf_starts_at_origin() {
        for spec in [fig5_spec(), SpiralSpec::new(64, 5.5, 4, 2.0, 0.01)] {
            let traj = design_spiral(&spec).unwrap();
            for il in &traj.interleaves {
                assert!(il.k[0][0].abs() <= 1e-12 && il.k[0][1].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn too_short_readout_reports_minimum() {
        let spec = SpiralSpec::new(256, 22.0, 64, 1.0, 0.02);
        match design_spiral(&spec) {
            Err(Error::InfeasibleDuration { requested_s, min_total_s }) => {
                assert_eq!(requested_s, 0.02);
                assert!(min_total_s > 0.02);
                let ok = SpiralSpec {
                    total_readout_s: min_total_s * 1.01,
                    ..spec
                };
                assert!(design_spiral(&ok).is_ok());
            }
            other => panic!("expected InfeasibleDuration, got {other:?}"),
        }
    }

    #[test]
    fn long_readout_uses_nyquist_turns() {
        let spec = SpiralSpec::new(32, 22.0, 1, 1.0, 0.05);
        let traj = design_spiral(&spec).unwrap();
        assert_eq!(traj.turns, spec.nyquist_turns());
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = SpiralSpec::default();
        for spec in [
            SpiralSpec { alpha: 0.5, ..base.clone() },
            SpiralSpec { matrix_size: 7, ..base.clone() },
            SpiralSpec { fov_cm: 0.0, ..base.clone() },
            SpiralSpec { interleaves: 0, ..base.clone() },
            SpiralSpec { total_readout_s: 4e-6, ..base.clone() },
        ] {
            assert!(matches!(design_spiral(&spec), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn constant_k_gives_zero_gradient() {
        let k = vec![[1.5, -0.25]; 10];
        assert!(gradients_from_k(&k, 4e-6).iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
    }

    #[test]
    fn linear_ramp_gives_constant_gradient() {
        let rate = 2000.0;
        let dt = 4e-6;
        let k: Vec<[f64; 2]> = (0..20).map(|i| [rate * i as f64 * dt, 0.0]).collect();
        let want = rate / KRATE_PER_MT_PER_M;
        for g in gradients_from_k(&k, dt) {
            assert!((g[0] - want).abs() < 1e-9 * want);
            assert_eq!(g[1], 0.0);
        }
    }

    #[test]
    fn gradient_round_trip() {
        let traj = design_spiral(&SpiralSpec::new(256, 22.0, 1, 1.0, 0.010)).unwrap();
        let il = &traj.interleaves[0];
        let back = integrate_gradients(&il.g, traj.dwell_s, il.k[0]);
        let scale = traj.kmax;
        for (a, b) in back.iter().zip(&il.k) {
            assert!((a[0] - b[0]).abs() <= 1e-9 * scale && (a[1] - b[1]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn report_matches_brute_force_scan() {
        let traj = design_spiral(&fig5_spec()).unwrap();
        let report = check_hardware_limits(&traj);
        let mut amp: f64 = 0.0;
        for il in &traj.interleaves {
            for g in &il.g {
                amp = amp.max((g[0] * g[0] + g[1] * g[1]).sqrt());
            }
        }
        assert_eq!(report.max_amp_mt_per_m, amp);
    }

    #[test]
    fn doubled_gradients_are_infeasible() {
        let mut traj = design_spiral(&SpiralSpec::new(256, 22.0, 1, 1.0, 0.010)).unwrap();
        let report = check_hardware_limits(&traj);
        assert!(report.max_amp_mt_per_m > 0.51 * traj.spec.gmax_mt_per_m);
        for il in &mut traj.interleaves {
            for g in &mut il.g {
                g[0] *= 2.0;
                g[1] *= 2.0;
            }
        }
        assert!(!check_hardware_limits(&traj).feasible);
    }

    #[test]
    fn rotation_by_quarter_turn() {
        let base = Interleaf {
            k: vec![[0.0, 0.0], [1.0, 0.0]],
            g: vec![[1.0, 0.0], [1.0, 0.0]],
        };
        assert_eq!(rotate_interleaves(&base, 1), vec![base.clone()]);
        let rotated = rotate_interleaves(&base, 4);
        assert!((rotated[1].k[1][0]).abs() < 1e-15 && (rotated[1].k[1][1] - 1.0).abs() < 1e-15);
        assert!((rotated[1].g[0][1] - 1.0).abs() < 1e-15);
        for il in &rotated {
            for (p, q) in il.k.iter().zip(&base.k) {
                assert!((p[0].hypot(p[1]) - q[0].hypot(q[1])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interleaves_are_rotated_copies() {
        let traj = design_spiral(&SpiralSpec::new(128, 22.0, 6, 1.5, 0.02)).unwrap();
        let base = &traj.interleaves[0];
        for (i, il) in traj.interleaves.iter().enumerate() {
            let (s, c) = (2.0 * PI * i as f64 / 6.0).sin_cos();
            for (p, q) in il.k.iter().zip(&base.k) {
                let want = [c * q[0] - s * q[1], s * q[0] + c * q[1]];
                assert!((p[0] - want[0]).abs() <= 1e-9 * traj.kmax);
                assert!((p[1] - want[1]).abs() <= 1e-9 * traj.kmax);
            }
        }
    }

    #[test]
    fn radius_profile_convex_in_tau() {
        for alpha in [1.0, 1.23, 2.0, 4.0] {
            let path = SpiralPath::new(5.0, alpha, 3.0);
            let r: Vec<f64> = (0..=200).map(|j| path.radius(j as f64 / 200.0)).collect();
            for w in r.windows(3) {
                assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
            }
            if alpha == 1.0 {
                for w in r.windows(3) {
                    assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn design_is_deterministic() {
        let a = design_spiral(&fig5_spec()).unwrap();
        let b = design_spiral(&fig5_spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn longer_readout_stays_feasible() {
        let mut spec = SpiralSpec::new(128, 22.0, 8, 1.5, 0.004);
        let mut was_feasible = false;
        for _ in 0..6 {
            let ok = design_spiral(&spec).is_ok();
            assert!(ok || !was_feasible);
            was_feasible |= ok;
            spec.total_readout_s *= 1.7;
        }
        assert!(was_feasible);
    }
}
