//! Inhomogeneous averaging and the measurement-strength figures of merit.
//!
//! Each ensemble member is a group of atoms at a fixed local probe and
//! microwave irradiance. Irradiance scale factors come from stratified
//! Gaussian quantiles `Φ⁻¹((i + ½)/n)`, so a given `n` always samples the same
//! points; the microwave quantiles are paired with the probe quantiles through
//! a seeded permutation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::atom_model::{CloudConfig, CsD1Constants};
use crate::birefringence::{projection_noise_snr, snr_eta};
use crate::dynamics::{rabi_frequency, Scenario, SimRecord};
use crate::fit::{fit_damped_sinusoid, FitError};
use crate::lightshift::ProbeConfig;
use crate::Error;

/// Smallest irradiance scale a member can draw; the Gaussian is truncated here.
pub const MIN_IRRADIANCE_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InhomogeneityConfig {
    /// Rms fractional spread of the probe irradiance.
    pub probe_irradiance_rms_frac: f64,
    /// Rms fractional spread of the microwave irradiance.
    pub mw_irradiance_rms_frac: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for InhomogeneityConfig {
    fn default() -> Self {
        InhomogeneityConfig {
            probe_irradiance_rms_frac: 0.0,
            mw_irradiance_rms_frac: 0.0,
            n_samples: 1,
            seed: 0,
        }
    }
}

impl InhomogeneityConfig {
    pub fn homogeneous() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [
            ("probe_irradiance_rms_frac", self.probe_irradiance_rms_frac),
            ("mw_irradiance_rms_frac", self.mw_irradiance_rms_frac),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.probe_irradiance_rms_frac == 0.0 && self.mw_irradiance_rms_frac == 0.0
    }

    /// `(probe irradiance scale, microwave irradiance scale)` per member.
    pub fn member_scales(&self) -> Vec<(f64, f64)> {
        let n = self.n_samples;
        let normal = Normal::standard();
        let quantiles: Vec<f64> = (0..n)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let mut mw = quantiles.clone();
        mw.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let scale = |frac: f64, z: f64| (1.0 + frac * z).max(MIN_IRRADIANCE_SCALE);
        quantiles
            .iter()
            .zip(&mw)
            .map(|(&zp, &zm)| (scale(self.probe_irradiance_rms_frac, zp), scale(self.mw_irradiance_rms_frac, zm)))
            .collect()
    }
}

/// The scenario seen by atoms at the given local irradiance scales: the
/// probe scale moves light shift and pumping together, the microwave scale
/// moves χ as its square root.
pub fn member_scenario(base: &Scenario, probe_scale: f64, mw_scale: f64) -> Scenario {
    let mut s = base.clone();
    if let Some(p) = &mut s.probe {
        p.irradiance_rel *= probe_scale;
    }
    s.microwave.rabi_khz *= mw_scale.sqrt();
    s
}

/// Mean record over the inhomogeneous ensemble.
pub fn ensemble_average(base: &Scenario, inhomog: &InhomogeneityConfig) -> Result<SimRecord, Error> {
    inhomog.validate()?;
    if inhomog.is_homogeneous() {
        return base.run();
    }
    let records = inhomog
        .member_scales()
        .into_par_iter()
        .map(|(p, m)| member_scenario(base, p, m).run())
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(average_records(&records))
}

/// Sample-wise mean, accumulated in member order.
pub fn average_records(records: &[SimRecord]) -> SimRecord {
    let mut iter = records.iter();
    let mut acc = iter.next().cloned().unwrap_or_default();
    for r in iter {
        add_into(&mut acc.signal_rad, &r.signal_rad);
        add_into(&mut acc.s3, &r.s3);
        add_into(&mut acc.pop_f3, &r.pop_f3);
        add_into(&mut acc.pop_f4, &r.pop_f4);
        add_into(&mut acc.lost, &r.lost);
        for (a, b) in acc.state_populations.iter_mut().zip(&r.state_populations) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    let n = records.len().max(1) as f64;
    for col in [&mut acc.signal_rad, &mut acc.s3, &mut acc.pop_f3, &mut acc.pop_f4, &mut acc.lost] {
        col.iter_mut().for_each(|v| *v /= n);
    }
    for p in &mut acc.state_populations {
        p.iter_mut().for_each(|v| *v /= n);
    }
    acc
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// 1/e decay time (s) of the fitted oscillation envelope of the polarimeter signal.
pub fn decay_time(record: &SimRecord) -> Result<f64, FitError> {
    let fit = fit_damped_sinusoid(&record.times_s, &record.signal_rad)?;
    if !(fit.decay_rate > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 / fit.decay_rate)
}

/// Figures of merit at one probe detuning.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurementFigure {
    pub detuning_mhz: f64,
    pub tau_d_s: f64,
    pub omega_khz: f64,
    pub eta: f64,
    pub eta_sq: f64,
    pub pn_snr: f64,
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SweepPoint {
    Measured(MeasurementFigure),
    /// Too close to an F=4 -> F' line for the dispersive model.
    Masked { detuning_mhz: f64 },
    Failed { detuning_mhz: f64, reason: String },
}

impl SweepPoint {
    pub fn detuning_mhz(&self) -> f64 {
        match self {
            SweepPoint::Measured(m) => m.detuning_mhz,
            SweepPoint::Masked { detuning_mhz } | SweepPoint::Failed { detuning_mhz, .. } => *detuning_mhz,
        }
    }

    pub fn figure(&self) -> Option<&MeasurementFigure> {
        match self {
            SweepPoint::Measured(m) => Some(m),
            _ => None,
        }
    }
}

/// Half-width of the masks around the F=4 -> F' resonances, in linewidths.
pub const RESONANCE_MASK_LINEWIDTHS: f64 = 5.0;

/// True when `detuning_mhz` lies within the mask of an F=4 -> F' resonance.
pub fn is_masked(detuning_mhz: f64, atom: &CsD1Constants) -> bool {
    [3, 4]
        .iter()
        .any(|&e| (detuning_mhz - atom.resonance_mhz(4, e)).abs() <= RESONANCE_MASK_LINEWIDTHS * atom.gamma_mhz)
}

/// Figures of merit across probe detunings at a fixed reference scattering rate.
///
/// `base` supplies everything but the probe detuning and irradiance; its probe
/// must be set (its polarization angle is used).
pub fn sweep_measurement_strength(
    detunings_mhz: &[f64],
    base: &Scenario,
    cloud: &CloudConfig,
    scattering_rate_per_s: f64,
    inhomog: &InhomogeneityConfig,
) -> Result<Vec<SweepPoint>, Error> {
    let template = base
        .probe
        .clone()
        .ok_or_else(|| Error::InvalidParameter("measurement sweep needs a probe".into()))?;
    cloud.validate()?;
    inhomog.validate()?;
    let points = detunings_mhz
        .par_iter()
        .map(|&d| {
            if is_masked(d, &base.atom) {
                return SweepPoint::Masked { detuning_mhz: d };
            }
            match measure_point(d, &template, base, cloud, scattering_rate_per_s, inhomog) {
                Ok(m) => SweepPoint::Measured(m),
                Err(e) => SweepPoint::Failed {
                    detuning_mhz: d,
                    reason: e.to_string(),
                },
            }
        })
        .collect();
    Ok(points)
}

fn measure_point(
    detuning_mhz: f64,
    template: &ProbeConfig,
    base: &Scenario,
    cloud: &CloudConfig,
    rate: f64,
    inhomog: &InhomogeneityConfig,
) -> Result<MeasurementFigure, Error> {
    let probe = template.with_detuning(detuning_mhz).with_scattering_rate(rate, &base.atom)?;
    let scenario = Scenario {
        probe: Some(probe.clone()),
        od: cloud.od_resonant,
        ..base.clone()
    };
    let record = ensemble_average(&scenario, inhomog)?;
    let tau_d_s = decay_time(&record)?;
    let omega_khz = rabi_frequency(&record)?;
    let eta = snr_eta(&probe, &base.atom, cloud, tau_d_s)?;
    Ok(MeasurementFigure {
        detuning_mhz,
        tau_d_s,
        omega_khz,
        eta,
        eta_sq: eta * eta,
        pn_snr: projection_noise_snr(cloud, &probe, &base.atom, tau_d_s)?,
    })
}

/// Detuning of the largest value of `key` among measured points.
pub fn argmax_detuning(points: &[SweepPoint], key: impl Fn(&MeasurementFigure) -> f64) -> Option<f64> {
    points
        .iter()
        .filter_map(SweepPoint::figure)
        .max_by(|a, b| key(a).total_cmp(&key(b)))
        .map(|m| m.detuning_mhz)
}

/// Centre of the full width at half maximum of `key` over the measured
/// points, with linear interpolation of both half-maximum crossings.
///
/// On a flat-topped peak this is far less sensitive to fit noise than the
/// grid argmax. `None` if either flank never drops below half the maximum.
pub fn peak_center(points: &[SweepPoint], key: impl Fn(&MeasurementFigure) -> f64) -> Option<f64> {
    let mut curve: Vec<(f64, f64)> = points
        .iter()
        .filter_map(SweepPoint::figure)
        .map(|m| (m.detuning_mhz, key(m)))
        .collect();
    curve.sort_by(|a, b| a.0.total_cmp(&b.0));
    let top = (0..curve.len()).max_by(|&a, &b| curve[a].1.total_cmp(&curve[b].1))?;
    let half = 0.5 * curve[top].1;
    let crossing = |i: usize, j: usize| {
        let ((x0, y0), (x1, y1)) = (curve[i], curve[j]);
        x0 + (half - y0) * (x1 - x0) / (y1 - y0)
    };
    let left = (1..=top).rev().find(|&i| curve[i - 1].1 < half).map(|i| crossing(i - 1, i))?;
    let right = (top..curve.len() - 1).find(|&i| curve[i + 1].1 < half).map(|i| crossing(i, i + 1))?;
    Some(0.5 * (left + right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{InitialState, MicrowaveConfig, TimeGrid};

    fn base(detuning: f64, rate: f64) -> Scenario {
        let atom = CsD1Constants::default();
        let probe = ProbeConfig::new(detuning, 1.0, 45.0)
            .unwrap()
            .with_scattering_rate(rate, &atom)
            .unwrap();
        Scenario {
            atom,
            probe: Some(probe),
            microwave: MicrowaveConfig::default(),
            bias_field_g: 0.5,
            od: 2.5,
            pumping: true,
            extra_loss_rate_per_s: 0.0,
            initial: InitialState::ClockLower,
            grid: TimeGrid::new(3e-3, 1e-5).unwrap(),
        }
    }

    #[test]
    fn quantiles_are_stratified_and_seeded() {
        let cfg = InhomogeneityConfig {
            probe_irradiance_rms_frac: 0.15,
            mw_irradiance_rms_frac: 0.015,
            n_samples: 8,
            seed: 3,
        };
        let a = cfg.member_scales();
        assert_eq!(a, cfg.member_scales());
        let mean: f64 = a.iter().map(|s| s.0).sum::<f64>() / 8.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(a.windows(2).all(|w| w[1].0 > w[0].0));
        let other = InhomogeneityConfig { seed: 4, ..cfg.clone() }.member_scales();
        let mut m1: Vec<f64> = a.iter().map(|s| s.1).collect();
        let mut m2: Vec<f64> = other.iter().map(|s| s.1).collect();
        assert_ne!(m1, m2);
        m1.sort_by(f64::total_cmp);
        m2.sort_by(f64::total_cmp);
        assert_eq!(m1, m2);
    }

    #[test]
    fn wide_spread_is_truncated_positive() {
        let cfg = InhomogeneityConfig {
            probe_irradiance_rms_frac: 2.0,
            n_samples: 64,
            ..Default::default()
        };
        assert!(cfg.member_scales().iter().all(|s| s.0 >= MIN_IRRADIANCE_SCALE));
    }

    #[test]
    fn single_member_is_bit_identical() {
        let s = base(-335.0, 1.0 / 0.8e-3);
        let single = s.run().unwrap();
        let one = InhomogeneityConfig {
            probe_irradiance_rms_frac: 0.0,
            mw_irradiance_rms_frac: 0.0,
            n_samples: 1,
            seed: 11,
        };
        assert_eq!(ensemble_average(&s, &one).unwrap(), single);
        assert_eq!(average_records(std::slice::from_ref(&single)), single);
        let zero_spread = InhomogeneityConfig { n_samples: 16, ..one };
        assert_eq!(ensemble_average(&s, &zero_spread).unwrap(), single);
    }

    #[test]
    fn synthetic_envelope_decay_time() {
        let t: Vec<f64> = (0..2000).map(|i| f64::from(i) * 5e-6).collect();
        let rec = SimRecord {
            signal_rad: t.iter().map(|&x| (-x / 2e-3).exp() * (std::f64::consts::TAU * 3e3 * x).cos()).collect(),
            times_s: t,
            ..Default::default()
        };
        let tau = decay_time(&rec).unwrap();
        assert!((tau / 2e-3 - 1.0).abs() < 0.01);
    }

    #[test]
    fn masks_cover_f4_lines_only() {
        let a = CsD1Constants::default();
        assert!(is_masked(0.0, &a));
        assert!(is_masked(-1168.0 + 20.0, &a));
        assert!(!is_masked(-335.0, &a));
        assert!(!is_masked(a.resonance_mhz(3, 4), &a));
    }

    #[test]
    fn peak_center_of_a_flat_top() {
        let fig = |d: f64, tau: f64| {
            SweepPoint::Measured(MeasurementFigure {
                detuning_mhz: d,
                tau_d_s: tau,
                omega_khz: 5.0,
                eta: 1.0,
                eta_sq: 1.0,
                pn_snr: 0.1,
            })
        };
        // trapezoid centred on -340 whose grid maximum sits at -350
        let pts: Vec<SweepPoint> = [(-400.0, 0.1), (-380.0, 0.3), (-360.0, 0.9), (-350.0, 1.01), (-340.0, 1.0), (-330.0, 1.0), (-320.0, 0.9), (-300.0, 0.3), (-280.0, 0.1)]
            .iter()
            .map(|&(d, t)| fig(d, t))
            .chain([SweepPoint::Masked { detuning_mhz: -1160.0 }])
            .collect();
        assert_eq!(argmax_detuning(&pts, |f| f.tau_d_s), Some(-350.0));
        let c = peak_center(&pts, |f| f.tau_d_s).unwrap();
        assert!((c + 340.0).abs() < 0.2, "{c}");
        assert_eq!(peak_center(&pts[2..6], |f| f.tau_d_s), None);
    }

    #[test]
    fn sweep_reports_each_point() {
        let s = base(-335.0, 1.0 / 0.8e-3);
        let cloud = CloudConfig::default();
        let pts = sweep_measurement_strength(&[-10.0, -335.0], &s, &cloud, 1.0 / 0.8e-3, &InhomogeneityConfig::homogeneous())
            .unwrap();
        assert!(matches!(pts[0], SweepPoint::Masked { .. }));
        let m = pts[1].figure().unwrap();
        assert_eq!(m.eta_sq, m.eta * m.eta);
        assert!(m.tau_d_s > 0.0 && m.omega_khz > 0.0 && m.pn_snr > 0.0);
    }
}
