//! Cs D1 level structure, constants and ground-manifold state indexing.
//!
//! The excited 6P1/2 manifold never appears as dynamical state: it only enters
//! through detuning denominators and branching amplitudes.

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use std::sync::OnceLock;

use crate::angular_momentum::{dipole_element, HalfInt};
use crate::Error;

/// Number of Zeeman sublevels in the 6S1/2 ground manifold.
pub const GROUND_DIM: usize = 16;
/// Number of Zeeman sublevels in the 6P1/2 excited manifold.
pub const EXCITED_DIM: usize = 16;

/// Operator on the 16-dimensional ground manifold, in registry order.
pub type Operator = SMatrix<Complex64, GROUND_DIM, GROUND_DIM>;

/// A hyperfine Zeeman sublevel |F, m_F> of the ground (or, via [`ExcitedState`],
/// excited) manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundState {
    f: i32,
    m: i32,
}

/// Hyperfine sublevel |F', m'> of 6P1/2. Same indexing as [`GroundState`].
pub type ExcitedState = GroundState;

impl GroundState {
    pub fn new(f: i32, m: i32) -> Result<Self, Error> {
        if f != 3 && f != 4 {
            return Err(Error::InvalidParameter(format!("hyperfine level F = {f} must be 3 or 4")));
        }
        if m.abs() > f {
            return Err(Error::InvalidParameter(format!("|m_F| = {} exceeds F = {f}", m.abs())));
        }
        Ok(GroundState { f, m })
    }

    pub const fn clock_lower() -> Self {
        GroundState { f: 3, m: 0 }
    }

    pub const fn clock_upper() -> Self {
        GroundState { f: 4, m: 0 }
    }

    pub const fn f(&self) -> i32 {
        self.f
    }

    pub const fn m(&self) -> i32 {
        self.m
    }

    pub fn f_half(&self) -> HalfInt {
        HalfInt::integer(self.f)
    }

    pub fn m_half(&self) -> HalfInt {
        HalfInt::integer(self.m)
    }

    pub const fn is_clock_state(&self) -> bool {
        self.m == 0
    }

    /// Registry index: F=3 block (m = -3..=3) first, then F=4 (m = -4..=4).
    pub const fn index(&self) -> usize {
        if self.f == 3 {
            (self.m + 3) as usize
        } else {
            (7 + self.m + 4) as usize
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        state_registry().get(index).copied()
    }
}

impl std::fmt::Display for GroundState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "|{},{}>", self.f, self.m)
    }
}

const fn build_registry() -> [GroundState; GROUND_DIM] {
    let mut out = [GroundState { f: 3, m: 0 }; GROUND_DIM];
    let mut i = 0;
    while i < GROUND_DIM {
        out[i] = if i < 7 {
            GroundState { f: 3, m: i as i32 - 3 }
        } else {
            GroundState { f: 4, m: i as i32 - 11 }
        };
        i += 1;
    }
    out
}

static REGISTRY: [GroundState; GROUND_DIM] = build_registry();

/// All 16 ground sublevels in the fixed registry order.
pub fn state_registry() -> &'static [GroundState; GROUND_DIM] {
    &REGISTRY
}

/// Registry indices belonging to hyperfine level `f`.
pub fn block_indices(f: i32) -> std::ops::Range<usize> {
    if f == 3 {
        0..7
    } else {
        7..16
    }
}

/// Physical constants of the Cs D1 line, in MHz and Gauss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsD1Constants {
    /// Natural linewidth Γ/2π.
    pub gamma_mhz: f64,
    /// 6P1/2 hyperfine splitting F'=4 minus F'=3.
    pub excited_hf_splitting_mhz: f64,
    /// 6S1/2 hyperfine (clock) splitting.
    pub ground_hf_splitting_mhz: f64,
    /// Far-detuned saturation irradiance, W/m².
    pub i_sat_w_per_m2: f64,
    pub g_f_upper: f64,
    pub g_f_lower: f64,
    /// Bohr magneton over h.
    pub zeeman_mhz_per_g: f64,
    pub wavelength_nm: f64,
}

/// Fixed ratio between the excited hyperfine splitting and the linewidth.
pub const HF_SPLITTING_IN_LINEWIDTHS: f64 = 256.0;

impl Default for CsD1Constants {
    fn default() -> Self {
        CsD1Constants {
            gamma_mhz: 1168.0 / HF_SPLITTING_IN_LINEWIDTHS,
            excited_hf_splitting_mhz: 1168.0,
            ground_hf_splitting_mhz: 9192.631770,
            i_sat_w_per_m2: 25.0,
            g_f_upper: 0.25,
            g_f_lower: -0.25,
            zeeman_mhz_per_g: 1.399_624_49,
            wavelength_nm: 894.592_96,
        }
    }
}

impl CsD1Constants {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("gamma_mhz", self.gamma_mhz),
            ("excited_hf_splitting_mhz", self.excited_hf_splitting_mhz),
            ("ground_hf_splitting_mhz", self.ground_hf_splitting_mhz),
            ("i_sat_w_per_m2", self.i_sat_w_per_m2),
            ("zeeman_mhz_per_g", self.zeeman_mhz_per_g),
            ("wavelength_nm", self.wavelength_nm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let ratio = self.excited_hf_splitting_mhz / self.gamma_mhz;
        if (ratio - HF_SPLITTING_IN_LINEWIDTHS).abs() > 1e-9 * HF_SPLITTING_IN_LINEWIDTHS {
            return Err(Error::InvalidParameter(format!(
                "excited_hf_splitting_mhz / gamma_mhz must equal {HF_SPLITTING_IN_LINEWIDTHS}, got {ratio}"
            )));
        }
        if self.g_f_upper * self.g_f_lower >= 0.0 {
            return Err(Error::InvalidParameter(
                "Landé factors of F=3 and F=4 must have opposite signs".into(),
            ));
        }
        Ok(())
    }

    pub fn g_f(&self, f: i32) -> f64 {
        if f == 4 {
            self.g_f_upper
        } else {
            self.g_f_lower
        }
    }

    /// Probe detuning (relative to F=4 -> F'=4) at which the F -> F' line is resonant.
    pub fn resonance_mhz(&self, ground_f: i32, excited_f: i32) -> f64 {
        let mut r = 0.0;
        if excited_f == 3 {
            r -= self.excited_hf_splitting_mhz;
        }
        if ground_f == 3 {
            r += self.ground_hf_splitting_mhz;
        }
        r
    }

    /// Detuning of the probe from the F -> F' line for a probe detuning
    /// `probe_detuning_mhz` measured from F=4 -> F'=4. Positive is blue.
    pub fn transition_detuning_mhz(&self, ground_f: i32, excited_f: i32, probe_detuning_mhz: f64) -> f64 {
        probe_detuning_mhz - self.resonance_mhz(ground_f, excited_f)
    }

    /// All four D1 resonances as `(F, F', probe detuning)`.
    pub fn resonances(&self) -> [(i32, i32, f64); 4] {
        [(4, 3), (4, 4), (3, 3), (3, 4)].map(|(g, e)| (g, e, self.resonance_mhz(g, e)))
    }

    /// Error if the probe is within `limit_mhz` of any line.
    pub fn check_off_resonant(&self, probe_detuning_mhz: f64, limit_mhz: f64) -> Result<(), Error> {
        for (g, e, r) in self.resonances() {
            if (probe_detuning_mhz - r).abs() <= limit_mhz {
                return Err(Error::NearResonance {
                    ground_f: g,
                    excited_f: e,
                    detuning_mhz: probe_detuning_mhz,
                    limit_mhz,
                });
            }
        }
        Ok(())
    }

    pub fn detuning_in_linewidths(&self, detuning_mhz: f64) -> f64 {
        detuning_mhz / self.gamma_mhz
    }

    /// Photon energy at the D1 wavelength, J.
    pub fn photon_energy_j(&self) -> f64 {
        const PLANCK: f64 = 6.626_070_15e-34;
        const LIGHT_SPEED: f64 = 299_792_458.0;
        PLANCK * LIGHT_SPEED / (self.wavelength_nm * 1e-9)
    }
}

/// Atomic cloud and probe-beam geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudConfig {
    pub atom_number: f64,
    /// 1/e radius of the cloud.
    pub cloud_radius_mm: f64,
    /// Resonant optical density, normalized to unit line strength.
    pub od_resonant: f64,
    /// 1/e radius of the probe irradiance profile.
    pub probe_radius_mm: f64,
    pub bias_field_g: f64,
    /// Fraction of the collected probe photons registered by the polarimeter.
    pub detection_efficiency: f64,
    /// Atoms seen by the imaged part of the probe; `None` means all of them.
    pub interrogated_atoms: Option<f64>,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            atom_number: 3.5e6,
            cloud_radius_mm: 0.25,
            od_resonant: 2.5,
            probe_radius_mm: 1.2,
            bias_field_g: 0.5,
            detection_efficiency: 1.0,
            interrogated_atoms: None,
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("atom_number", self.atom_number),
            ("cloud_radius_mm", self.cloud_radius_mm),
            ("od_resonant", self.od_resonant),
            ("probe_radius_mm", self.probe_radius_mm),
            ("bias_field_g", self.bias_field_g),
            ("detection_efficiency", self.detection_efficiency),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.detection_efficiency > 1.0 {
            return Err(Error::InvalidParameter("detection_efficiency cannot exceed 1".into()));
        }
        if let Some(n) = self.interrogated_atoms {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::InvalidParameter(format!("interrogated_atoms must be positive, got {n}")));
            }
        }
        Ok(())
    }

    /// Non-fatal problems with the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.probe_radius_mm <= self.cloud_radius_mm {
            out.push(format!(
                "probe radius {} mm does not exceed cloud radius {} mm; the light shift is not homogeneous over the cloud",
                self.probe_radius_mm, self.cloud_radius_mm
            ));
        }
        out
    }

    pub fn effective_atom_number(&self) -> f64 {
        self.interrogated_atoms.unwrap_or(self.atom_number)
    }
}

/// Linear Zeeman Hamiltonian in MHz, diagonal in the registry basis.
/// The field points along +z; every observable here is even in it.
pub fn zeeman_hamiltonian(bias_field_g: f64, atom: &CsD1Constants) -> Operator {
    let mut h = Operator::zeros();
    for (i, s) in state_registry().iter().enumerate() {
        let e = atom.g_f(s.f()) * f64::from(s.m()) * atom.zeeman_mhz_per_g * bias_field_g;
        h[(i, i)] = Complex64::new(e, 0.0);
    }
    h
}

/// Table of D1 absorption amplitudes `<e| d_q |g>` indexed `[q + 1][e][g]`,
/// both states in registry order. See [`dipole_element`] for normalization.
#[derive(Debug)]
pub struct DipoleTable {
    amplitudes: [[[f64; GROUND_DIM]; EXCITED_DIM]; 3],
}

impl DipoleTable {
    pub fn amplitude(&self, q: i32, excited: usize, ground: usize) -> f64 {
        self.amplitudes[(q + 1) as usize][excited][ground]
    }
}

/// Shared, lazily built dipole table.
pub fn dipole_table() -> &'static DipoleTable {
    static TABLE: OnceLock<DipoleTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut amplitudes = [[[0.0; GROUND_DIM]; EXCITED_DIM]; 3];
        for q in -1..=1 {
            for (e, es) in state_registry().iter().enumerate() {
                for (g, gs) in state_registry().iter().enumerate() {
                    // F and m ranges of both manifolds are valid by construction.
                    amplitudes[(q + 1) as usize][e][g] =
                        dipole_element(gs.f_half(), gs.m_half(), es.f_half(), es.m_half(), q)
                            .map(|d| d.amplitude)
                            .unwrap_or(0.0);
                }
            }
        }
        DipoleTable { amplitudes }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn registry_ordering() {
        let reg = state_registry();
        assert_eq!(reg.len(), 16);
        assert_eq!(GroundState::new(3, -3).unwrap().index(), 0);
        assert_eq!(GroundState::clock_upper().index(), 11);
        assert_eq!(GroundState::clock_lower().index(), 3);
        for (i, s) in reg.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(GroundState::from_index(i), Some(*s));
        }
        let mut sorted = reg.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }

    #[test]
    fn rejects_bad_states() {
        assert!(GroundState::new(5, 0).is_err());
        assert!(GroundState::new(3, 4).is_err());
    }

    #[test]
    fn zeeman_zero_field() {
        let h = zeeman_hamiltonian(0.0, &CsD1Constants::default());
        assert!(h.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn zeeman_clock_states_unshifted() {
        let atom = CsD1Constants::default();
        for b in [0.1, 0.5, 3.0] {
            let h = zeeman_hamiltonian(b, &atom);
            assert_eq!(h[(3, 3)].re, 0.0);
            assert_eq!(h[(11, 11)].re, 0.0);
        }
    }

    #[test]
    fn zeeman_half_gauss_values() {
        let atom = CsD1Constants::default();
        let h = zeeman_hamiltonian(0.5, &atom);
        let i41 = GroundState::new(4, 1).unwrap().index();
        assert_abs_diff_eq!(h[(i41, i41)].re.abs(), 0.1750, epsilon = 5e-5);
        // opposite sign in the lower manifold
        let i31 = GroundState::new(3, 1).unwrap().index();
        assert!(h[(i31, i31)].re * h[(i41, i41)].re < 0.0);
    }

    #[test]
    fn zeeman_diagonal_and_traceless_per_manifold() {
        let h = zeeman_hamiltonian(0.5, &CsD1Constants::default());
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    assert_eq!(h[(i, j)], Complex64::new(0.0, 0.0));
                }
            }
        }
        for f in [3, 4] {
            let tr: f64 = block_indices(f).map(|i| h[(i, i)].re).sum();
            assert_abs_diff_eq!(tr, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn spectator_microwave_lines_are_detuned() {
        // Δm = 0 hyperfine transitions other than the clock line at 0.5 G.
        let h = zeeman_hamiltonian(0.5, &CsD1Constants::default());
        let mut smallest = f64::INFINITY;
        for m in -3..=3 {
            if m == 0 {
                continue;
            }
            let lo = GroundState::new(3, m).unwrap().index();
            let hi = GroundState::new(4, m).unwrap().index();
            smallest = smallest.min((h[(hi, hi)].re - h[(lo, lo)].re).abs());
        }
        assert!(smallest > 0.1, "smallest spectator detuning {smallest} MHz");
    }

    #[test]
    fn constants_are_locked() {
        let atom = CsD1Constants::default();
        atom.validate().unwrap();
        assert_eq!(atom.gamma_mhz, 4.5625);
        let broken = CsD1Constants {
            gamma_mhz: 4.6,
            ..atom
        };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn resonance_positions() {
        let atom = CsD1Constants::default();
        assert_eq!(atom.resonance_mhz(4, 4), 0.0);
        assert_eq!(atom.resonance_mhz(4, 3), -1168.0);
        assert_abs_diff_eq!(atom.resonance_mhz(3, 4), 9192.63177, epsilon = 1e-6);
        assert!(atom.check_off_resonant(-335.0, 0.5).is_ok());
        assert!(matches!(
            atom.check_off_resonant(-1167.9, 0.5),
            Err(Error::NearResonance { ground_f: 4, excited_f: 3, .. })
        ));
    }

    #[test]
    fn cloud_warning_when_probe_smaller_than_cloud() {
        let mut cloud = CloudConfig::default();
        assert!(cloud.warnings().is_empty());
        cloud.probe_radius_mm = 0.2;
        assert_eq!(cloud.warnings().len(), 1);
        cloud.atom_number = -1.0;
        assert!(cloud.validate().is_err());
    }
}
