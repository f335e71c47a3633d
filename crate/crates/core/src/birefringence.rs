//! Birefringent phase of the probe, polarimetry and signal-to-noise figures.
//!
//! Each ground sublevel retards the x̂- and ẑ-polarized probe components by
//! different amounts. With amplitudes of unit total line strength the phase
//! picked up by a component with excitation amplitudes `M_e` is
//! `(OD/4) Σ_e |M_e|² / (δ_e/Γ)`, and the birefringent phase is the x̂ minus
//! ẑ difference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::atom_model::{state_registry, CloudConfig, CsD1Constants, GroundState};
use crate::lightshift::{check_detuning, detuning_grid, excitation_amplitudes, Polarization, ProbeConfig};
use crate::Error;

/// Stokes vector of the probe. `j0` is the photon flux; `j1` is along ẑ/x̂
/// linear, `j2` along the ±45° diagonals, `j3` circular.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StokesVector {
    pub j0: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

impl StokesVector {
    /// Fully polarized light at `theta_deg` from ẑ in the x̂–ẑ plane.
    pub fn linear(j0: f64, theta_deg: f64) -> Self {
        let t = 2.0 * theta_deg.to_radians();
        StokesVector {
            j0,
            j1: j0 * t.cos(),
            j2: j0 * t.sin(),
            j3: 0.0,
        }
    }

    pub fn polarized_norm(&self) -> f64 {
        (self.j1 * self.j1 + self.j2 * self.j2 + self.j3 * self.j3).sqrt()
    }

    pub fn degree_of_polarization(&self) -> f64 {
        self.polarized_norm() / self.j0
    }
}

/// Collective clock pseudo-spin in closed form: `s_total = N`, `s3` the
/// population difference between |4,0> and |3,0>.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PseudoSpin {
    s_total: f64,
    s3: f64,
}

impl PseudoSpin {
    pub fn new(s_total: f64, s3: f64) -> Result<Self, Error> {
        if !(s_total > 0.0 && s_total.is_finite()) || !s3.is_finite() || s3.abs() > s_total {
            return Err(Error::InvalidParameter(format!(
                "pseudo-spin needs 0 < S and |S3| <= S, got S = {s_total}, S3 = {s3}"
            )));
        }
        Ok(PseudoSpin { s_total, s3 })
    }

    /// All atoms in |4,0>.
    pub fn all_up(n: f64) -> Result<Self, Error> {
        Self::new(n, n)
    }

    pub fn s_total(&self) -> f64 {
        self.s_total
    }

    pub fn s3(&self) -> f64 {
        self.s3
    }

    pub fn upper_fraction(&self) -> f64 {
        0.5 * (1.0 + self.s3 / self.s_total)
    }
}

/// Birefringent phase (rad) of atoms in `state` for a sample of resonant
/// optical density `od`.
pub fn per_state_phase(state: GroundState, probe: &ProbeConfig, atom: &CsD1Constants, od: f64) -> Result<f64, Error> {
    Ok(per_state_phases(probe, atom, od)?[state.index()])
}

/// [`per_state_phase`] for every registry state at once.
pub fn per_state_phases(probe: &ProbeConfig, atom: &CsD1Constants, od: f64) -> Result<[f64; 16], Error> {
    check_detuning(probe.detuning_mhz, atom)?;
    let mx = excitation_amplitudes(&Polarization::linear(90.0));
    let mz = excitation_amplitudes(&Polarization::linear(0.0));
    let det = detuning_grid(probe.detuning_mhz, atom);
    let reg = state_registry();
    let mut out = [0.0; 16];
    for (g, gs) in reg.iter().enumerate() {
        let mut sum = 0.0;
        for (e, es) in reg.iter().enumerate() {
            let delta = det[(gs.f() - 3) as usize][(es.f() - 3) as usize] / atom.gamma_mhz;
            sum += (mx[e][g].norm_sqr() - mz[e][g].norm_sqr()) / delta;
        }
        out[g] = 0.25 * od * sum;
    }
    Ok(out)
}

/// Closed-form collective phase for a probe halfway between the
/// F=4 -> F'=3 and F=4 -> F'=4 lines, ignoring the |3,0> contribution:
/// `(5/96) (OD / (Δ/Γ)) (S3 + S)/S` with `Δ = -Δ_HF/2`.
pub fn collective_phase_midpoint(spin: &PseudoSpin, od: f64, atom: &CsD1Constants) -> f64 {
    let delta_over_gamma = -0.5 * atom.excited_hf_splitting_mhz / atom.gamma_mhz;
    5.0 / 96.0 * od / delta_over_gamma * (spin.s3 + spin.s_total) / spin.s_total
}

/// Circular-component phase difference (rad) for a sample fully polarized in
/// the stretched state |4,4> along the propagation axis, at the same detuning
/// and with the same normalization as [`per_state_phase`]. This is the
/// Faraday-type signal that an oriented F=4 sample would give.
pub fn stretched_state_circular_phase(probe: &ProbeConfig, atom: &CsD1Constants, od: f64) -> Result<f64, Error> {
    check_detuning(probe.detuning_mhz, atom)?;
    // Quantizing along the propagation axis, σ+ and σ- light address |4,4>
    // with spherical components q = +1 and q = -1.
    let table = crate::atom_model::dipole_table();
    let det = detuning_grid(probe.detuning_mhz, atom);
    let g = GroundState::new(4, 4)?.index();
    let mut sum = 0.0;
    for (e, es) in state_registry().iter().enumerate() {
        let delta = det[1][(es.f() - 3) as usize] / atom.gamma_mhz;
        let plus = table.amplitude(1, e, g).powi(2);
        let minus = table.amplitude(-1, e, g).powi(2);
        sum += (plus - minus) / delta;
    }
    Ok(0.25 * od * sum)
}

/// Rotates the Stokes vector about the 1-axis: positive `phi` turns +j2 toward +j3.
pub fn apply_birefringence(input: StokesVector, phi: f64) -> StokesVector {
    let (s, c) = phi.sin_cos();
    StokesVector {
        j0: input.j0,
        j1: input.j1,
        j2: c * input.j2 - s * input.j3,
        j3: s * input.j2 + c * input.j3,
    }
}

/// Differential signal of a quarter-wave plate + polarizing splitter polarimeter.
pub fn polarimeter_signal(output: &StokesVector) -> f64 {
    output.j3
}

/// Adds photon shot noise to a phase trace sampled every `dt` seconds.
pub fn shot_noise_trace(clean_signal: &[f64], photon_flux: f64, dt: f64, seed: u64) -> Result<Vec<f64>, Error> {
    if !(photon_flux > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "photon flux and sample interval must be positive, got {photon_flux} and {dt}"
        )));
    }
    let sigma = (2.0 * photon_flux * dt).sqrt().recip();
    if sigma == 0.0 {
        return Ok(clean_signal.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(clean_signal.iter().map(|&x| x + normal.sample(&mut rng)).collect())
}

/// Detected probe photons per second through the imaging aperture, which
/// passes only the part of the Gaussian beam that overlaps the cloud.
pub fn photon_flux(probe: &ProbeConfig, atom: &CsD1Constants, cloud: &CloudConfig) -> f64 {
    let peak = probe.irradiance_rel * atom.i_sat_w_per_m2;
    let rp = cloud.probe_radius_mm * 1e-3;
    let rc = cloud.cloud_radius_mm * 1e-3;
    let power = peak * std::f64::consts::PI * rp * rp * -(-(rc * rc) / (rp * rp)).exp_m1();
    cloud.detection_efficiency * power / atom.photon_energy_j()
}

/// SNR for resolving the full-scale signal S3 = S in a bandwidth 1/τ_d.
pub fn snr_eta(probe: &ProbeConfig, atom: &CsD1Constants, cloud: &CloudConfig, tau_d: f64) -> Result<f64, Error> {
    let phi = per_state_phase(GroundState::clock_upper(), probe, atom, cloud.od_resonant)?;
    Ok(eta_from_phase(phi, photon_flux(probe, atom, cloud), tau_d))
}

pub(crate) fn eta_from_phase(phi: f64, flux: f64, tau_d: f64) -> f64 {
    phi.abs() * (2.0 * flux * tau_d).sqrt()
}

/// SNR for resolving the projection noise √N near S3 = 0 in a bandwidth 1/τ_d.
pub fn projection_noise_snr(
    cloud: &CloudConfig,
    probe: &ProbeConfig,
    atom: &CsD1Constants,
    tau_d: f64,
) -> Result<f64, Error> {
    let eta = snr_eta(probe, atom, cloud, tau_d)?;
    Ok(projection_noise_from_eta(eta, cloud.effective_atom_number()))
}

pub(crate) fn projection_noise_from_eta(eta: f64, atoms: f64) -> f64 {
    0.5 * eta / atoms.sqrt()
}

/// The same cloud geometry filled to a different optical density: the atom
/// number grows in proportion to the OD.
pub fn cloud_at_od(cloud: &CloudConfig, od: f64) -> CloudConfig {
    let scale = od / cloud.od_resonant;
    CloudConfig {
        od_resonant: od,
        atom_number: cloud.atom_number * scale,
        interrogated_atoms: cloud.interrogated_atoms.map(|n| n * scale),
        ..cloud.clone()
    }
}

/// Birefringent phase per unit OD for atoms in each clock state, over a detuning grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseSpectrum {
    pub detunings_mhz: Vec<f64>,
    pub phi_up_rad: Vec<f64>,
    pub phi_down_rad: Vec<f64>,
}

impl PhaseSpectrum {
    /// Evaluates the spectrum; grid points closer than the resonance guard are skipped.
    pub fn compute(detunings_mhz: &[f64], theta_deg: f64, atom: &CsD1Constants) -> Result<Self, Error> {
        let mut out = PhaseSpectrum {
            detunings_mhz: Vec::with_capacity(detunings_mhz.len()),
            phi_up_rad: Vec::with_capacity(detunings_mhz.len()),
            phi_down_rad: Vec::with_capacity(detunings_mhz.len()),
        };
        for &d in detunings_mhz {
            if check_detuning(d, atom).is_err() {
                continue;
            }
            let probe = ProbeConfig::new(d, 1.0, theta_deg)?;
            let phases = per_state_phases(&probe, atom, 1.0)?;
            out.detunings_mhz.push(d);
            out.phi_up_rad.push(phases[GroundState::clock_upper().index()]);
            out.phi_down_rad.push(phases[GroundState::clock_lower().index()]);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.detunings_mhz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings_mhz.is_empty()
    }
}
