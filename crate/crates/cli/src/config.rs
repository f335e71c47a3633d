//! Strict TOML run configuration.

use serde::{Deserialize, Serialize};

use clockprobe::dynamics::InitialState;
use clockprobe::lightshift::find_magic_detunings;
use clockprobe::{CloudConfig, CsD1Constants, InhomogeneityConfig, MicrowaveConfig, ProbeConfig};

use crate::error::CliError;

/// Probe detuning: a number in MHz, or `"magic"` for the zero of ΔU between
/// the F=4 -> F' lines at the configured polarization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DetuningSpec {
    Mhz(f64),
    Named(String),
}

impl Default for DetuningSpec {
    fn default() -> Self {
        DetuningSpec::Named("magic".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default)]
    pub detuning_mhz: DetuningSpec,
    #[serde(default = "default_angle")]
    pub polarization_angle_deg: f64,
    /// Exactly one of `irradiance_rel` and `scattering_rate_per_s` must be given.
    pub irradiance_rel: Option<f64>,
    pub scattering_rate_per_s: Option<f64>,
}

fn default_angle() -> f64 {
    45.0
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            detuning_mhz: DetuningSpec::default(),
            polarization_angle_deg: 45.0,
            irradiance_rel: None,
            scattering_rate_per_s: Some(1.0 / 0.8e-3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub duration_ms: f64,
    pub sample_interval_us: f64,
    /// Minimum integrator doublings per sample; more are added automatically.
    pub substep_doublings: u32,
    pub seed: u64,
    pub pumping: bool,
    pub extra_loss_rate_per_s: f64,
    pub initial_state: InitialState,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            duration_ms: 4.0,
            sample_interval_us: 5.0,
            substep_doublings: 0,
            seed: 0,
            pumping: true,
            extra_loss_rate_per_s: 0.0,
            initial_state: InitialState::ClockLower,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InhomogeneitySection {
    pub probe_irradiance_rms_frac: f64,
    pub n_samples: usize,
}

impl Default for InhomogeneitySection {
    fn default() -> Self {
        InhomogeneitySection {
            probe_irradiance_rms_frac: 0.0,
            n_samples: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: Option<String>,
    pub plot_scripts: bool,
    /// Also write the polarimeter trace with photon shot noise (rabi only).
    pub shot_noise: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: None,
            plot_scripts: true,
            shot_noise: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectraSection {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub step_mhz: f64,
}

impl Default for SpectraSection {
    fn default() -> Self {
        SpectraSection {
            start_mhz: -2000.0,
            stop_mhz: 10500.0,
            step_mhz: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChevronSection {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
    pub theta_start_deg: f64,
    pub theta_stop_deg: f64,
    pub theta_points: usize,
}

impl Default for ChevronSection {
    fn default() -> Self {
        ChevronSection {
            start_mhz: -1140.0,
            stop_mhz: -25.0,
            points: 50,
            theta_start_deg: 0.0,
            theta_stop_deg: 90.0,
            theta_points: 19,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementSection {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub step_mhz: f64,
    /// OD for the projection-noise extrapolation.
    pub extrapolate_od: f64,
}

impl Default for MeasurementSection {
    fn default() -> Self {
        MeasurementSection {
            start_mhz: -1100.0,
            stop_mhz: -40.0,
            step_mhz: 20.0,
            extrapolate_od: 1000.0,
        }
    }
}

/// Complete configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub atom: CsD1Constants,
    pub cloud: CloudConfig,
    pub probe: ProbeSection,
    pub microwave: MicrowaveConfig,
    pub inhomogeneity: InhomogeneitySection,
    pub simulation: SimulationSection,
    pub output: OutputSection,
    pub spectra: SpectraSection,
    pub chevron: ChevronSection,
    pub measurement: MeasurementSection,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Parses and validates; error messages carry the TOML line and key.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let physics = |r: clockprobe::Result<()>| r.map_err(|e| config_error(e.to_string()));
        physics(self.atom.validate())?;
        physics(self.cloud.validate())?;
        physics(self.microwave.validate())?;

        let p = &self.probe;
        match (p.irradiance_rel, p.scattering_rate_per_s) {
            (Some(v), None) => positive("probe.irradiance_rel", v)?,
            (None, Some(v)) => positive("probe.scattering_rate_per_s", v)?,
            _ => {
                return Err(config_error(
                    "probe: set exactly one of irradiance_rel and scattering_rate_per_s",
                ))
            }
        }
        if !(0.0..180.0).contains(&p.polarization_angle_deg) {
            return Err(config_error(format!(
                "probe.polarization_angle_deg must lie in [0, 180), got {}",
                p.polarization_angle_deg
            )));
        }
        match &p.detuning_mhz {
            DetuningSpec::Mhz(v) if !v.is_finite() => return Err(config_error("probe.detuning_mhz must be finite")),
            DetuningSpec::Named(s) if s != "magic" => {
                return Err(config_error(format!(
                    "probe.detuning_mhz must be a number or \"magic\", got \"{s}\""
                )))
            }
            _ => {}
        }

        let s = &self.simulation;
        positive("simulation.duration_ms", s.duration_ms)?;
        positive("simulation.sample_interval_us", s.sample_interval_us)?;
        if s.sample_interval_us * 1e-3 > s.duration_ms {
            return Err(config_error("simulation.sample_interval_us exceeds the duration"));
        }
        if s.duration_ms / (s.sample_interval_us * 1e-3) > 1e6 {
            return Err(config_error("simulation grid has more than 10^6 samples"));
        }
        if s.substep_doublings > 30 {
            return Err(config_error("simulation.substep_doublings must be at most 30"));
        }
        if !(s.extra_loss_rate_per_s >= 0.0 && s.extra_loss_rate_per_s.is_finite()) {
            return Err(config_error("simulation.extra_loss_rate_per_s must be >= 0"));
        }

        let inh = &self.inhomogeneity;
        if !(inh.probe_irradiance_rms_frac >= 0.0 && inh.probe_irradiance_rms_frac.is_finite()) {
            return Err(config_error("inhomogeneity.probe_irradiance_rms_frac must be >= 0"));
        }
        if inh.n_samples == 0 || inh.n_samples > 4096 {
            return Err(config_error("inhomogeneity.n_samples must lie in 1..=4096"));
        }

        let sp = &self.spectra;
        grid_check("spectra", sp.start_mhz, sp.stop_mhz, sp.step_mhz)?;
        let ch = &self.chevron;
        if !(ch.start_mhz < ch.stop_mhz) || ch.points < 2 || ch.points > 10_000 {
            return Err(config_error("chevron: need start_mhz < stop_mhz and 2..=10000 points"));
        }
        if !(0.0..180.0).contains(&ch.theta_start_deg)
            || !(0.0..180.0).contains(&ch.theta_stop_deg)
            || ch.theta_start_deg > ch.theta_stop_deg
            || ch.theta_points == 0
            || ch.theta_points > 10_000
        {
            return Err(config_error("chevron: theta range must lie in [0, 180) with 1..=10000 points"));
        }
        let m = &self.measurement;
        grid_check("measurement", m.start_mhz, m.stop_mhz, m.step_mhz)?;
        positive("measurement.extrapolate_od", m.extrapolate_od)?;
        Ok(())
    }

    /// Probe detuning in MHz, solving for the magic point when requested.
    pub fn resolved_detuning_mhz(&self) -> Result<f64, CliError> {
        match &self.probe.detuning_mhz {
            DetuningSpec::Mhz(v) => Ok(*v),
            DetuningSpec::Named(_) => magic_detuning(self.probe.polarization_angle_deg, &self.atom),
        }
    }

    /// Probe with detuning and irradiance resolved.
    pub fn resolved_probe(&self) -> Result<ProbeConfig, CliError> {
        let d = self.resolved_detuning_mhz()?;
        self.probe_at(d)
    }

    /// Configured probe moved to `detuning_mhz`; a configured scattering rate
    /// is held fixed by rescaling the irradiance.
    pub fn probe_at(&self, detuning_mhz: f64) -> Result<ProbeConfig, CliError> {
        let base = ProbeConfig::new(
            detuning_mhz,
            self.probe.irradiance_rel.unwrap_or(1.0),
            self.probe.polarization_angle_deg,
        )?;
        match self.probe.scattering_rate_per_s {
            Some(rate) => Ok(base.with_scattering_rate(rate, &self.atom)?),
            None => Ok(base),
        }
    }

    pub fn inhomogeneity(&self, seed: u64) -> InhomogeneityConfig {
        InhomogeneityConfig {
            probe_irradiance_rms_frac: self.inhomogeneity.probe_irradiance_rms_frac,
            mw_irradiance_rms_frac: self.microwave.inhomogeneity_frac,
            n_samples: self.inhomogeneity.n_samples,
            seed,
        }
    }
}

fn grid_check(section: &str, start: f64, stop: f64, step: f64) -> Result<(), CliError> {
    if !(start < stop) || !(step > 0.0) || (stop - start) / step > 1e6 {
        return Err(config_error(format!(
            "{section}: need start_mhz < stop_mhz, step_mhz > 0 and at most 10^6 points"
        )));
    }
    Ok(())
}

/// Magic detuning between the F=4 -> F' lines for polarization angle `theta_deg`.
pub fn magic_detuning(theta_deg: f64, atom: &CsD1Constants) -> Result<f64, CliError> {
    let window = (atom.resonance_mhz(4, 3), atom.resonance_mhz(4, 4));
    let roots = find_magic_detunings(theta_deg, window, atom)?;
    roots
        .first()
        .map(|r| r.detuning_mhz)
        .ok_or_else(|| CliError::Physics(format!("no magic detuning between the F=4 lines at θ = {theta_deg}°")))
}

/// Evenly spaced grid from `start` to `stop` inclusive (within rounding).
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![start];
    }
    (0..points)
        .map(|k| start + (stop - start) * k as f64 / (points - 1) as f64)
        .collect()
}
