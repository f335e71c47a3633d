//! Probe light shift of the ground manifold.
//!
//! The light shift is the far-off-resonance (rotating-wave) second-order
//! coupling through the 6P1/2 levels,
//!
//! ```text
//! V(g, g') = (Γ²/8) (I/I_sat) Σ_e <g|(d·ε)†|e><e|d·ε|g'> / δ(F_g, F'_e)
//! ```
//!
//! with amplitudes normalized to unit total line strength. Only blocks of equal
//! ground F are kept: F=3 <-> F=4 Raman terms oscillate at the clock frequency.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::angular_momentum::{wigner3j, HalfInt};
use crate::atom_model::{
    block_indices, dipole_table, state_registry, zeeman_hamiltonian, CsD1Constants, GroundState, Operator,
    GROUND_DIM,
};
use crate::birefringence::per_state_phase;
use crate::Error;

/// Closest approach to a resonance, in linewidths, at which the dispersive model is evaluated.
pub const RESONANCE_GUARD_LINEWIDTHS: f64 = 0.1;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Probe polarization as spherical components `c_q = ê_q* · ε`, `q = -1, 0, +1`.
///
/// The quantization axis is ẑ and the probe propagates along ŷ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Polarization {
    spherical: [Complex64; 3],
}

impl Polarization {
    /// Unit vector from Cartesian components; normalized here.
    pub fn from_cartesian(x: Complex64, y: Complex64, z: Complex64) -> Self {
        let norm = (x.norm_sqr() + y.norm_sqr() + z.norm_sqr()).sqrt();
        let (x, y, z) = (x / norm, y / norm, z / norm);
        let i = Complex64::i();
        // ê_{+1} = -(x̂ + iŷ)/√2, ê_{-1} = (x̂ - iŷ)/√2, ê_0 = ẑ
        let plus = -(x - i * y) * FRAC_1_SQRT_2;
        let minus = (x + i * y) * FRAC_1_SQRT_2;
        Polarization {
            spherical: [minus, z, plus],
        }
    }

    /// Linear polarization at `theta_deg` from ẑ in the x̂–ẑ plane.
    pub fn linear(theta_deg: f64) -> Self {
        let t = theta_deg.to_radians();
        Self::from_cartesian(t.sin().into(), C0, t.cos().into())
    }

    /// Circular polarization for propagation along ŷ: ε = (ẑ ± i x̂)/√2.
    pub fn circular(positive_helicity: bool) -> Self {
        let s = if positive_helicity { 1.0 } else { -1.0 };
        Self::from_cartesian(Complex64::new(0.0, s), C0, Complex64::new(1.0, 0.0))
    }

    pub fn component(&self, q: i32) -> Complex64 {
        self.spherical[(q + 1) as usize]
    }
}

/// Probe beam parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    /// Detuning from F=4 -> F'=4; F'=3 sits at -Δ_HF.
    pub detuning_mhz: f64,
    /// Irradiance in units of the saturation irradiance.
    pub irradiance_rel: f64,
    /// Linear polarization angle from ẑ in the x̂–ẑ plane.
    pub polarization_angle_deg: f64,
}

impl ProbeConfig {
    pub fn new(detuning_mhz: f64, irradiance_rel: f64, polarization_angle_deg: f64) -> Result<Self, Error> {
        let p = ProbeConfig {
            detuning_mhz,
            irradiance_rel,
            polarization_angle_deg,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.irradiance_rel.is_finite() && self.irradiance_rel > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "probe irradiance must be positive, got {}",
                self.irradiance_rel
            )));
        }
        if !(0.0..180.0).contains(&self.polarization_angle_deg) {
            return Err(Error::InvalidParameter(format!(
                "polarization angle must lie in [0, 180) degrees, got {}",
                self.polarization_angle_deg
            )));
        }
        if !self.detuning_mhz.is_finite() {
            return Err(Error::InvalidParameter("probe detuning must be finite".into()));
        }
        Ok(())
    }

    pub fn polarization(&self) -> Polarization {
        Polarization::linear(self.polarization_angle_deg)
    }

    pub fn with_detuning(&self, detuning_mhz: f64) -> Self {
        ProbeConfig {
            detuning_mhz,
            ..self.clone()
        }
    }

    pub fn with_irradiance(&self, irradiance_rel: f64) -> Self {
        ProbeConfig {
            irradiance_rel,
            ..self.clone()
        }
    }

    /// Same detuning and polarization, with the irradiance chosen so that the
    /// photon scattering rate averaged over the two clock states equals `rate_per_s`.
    pub fn with_scattering_rate(&self, rate_per_s: f64, atom: &CsD1Constants) -> Result<Self, Error> {
        let unit = self.with_irradiance(1.0);
        let per_unit = reference_scattering_rate(&unit, atom)?;
        Ok(self.with_irradiance(rate_per_s / per_unit))
    }
}

/// Error unless `detuning_mhz` is at least 0.1 Γ from every D1 line.
pub fn check_detuning(detuning_mhz: f64, atom: &CsD1Constants) -> Result<(), Error> {
    atom.check_off_resonant(detuning_mhz, RESONANCE_GUARD_LINEWIDTHS * atom.gamma_mhz)
}

/// Excitation amplitudes `<e| d·ε |g>` for every excited/ground pair.
pub(crate) fn excitation_amplitudes(pol: &Polarization) -> [[Complex64; GROUND_DIM]; GROUND_DIM] {
    let table = dipole_table();
    let mut out = [[C0; GROUND_DIM]; GROUND_DIM];
    for (e, row) in out.iter_mut().enumerate() {
        for (g, slot) in row.iter_mut().enumerate() {
            *slot = (-1..=1)
                .map(|q| pol.component(q) * table.amplitude(q, e, g))
                .sum();
        }
    }
    out
}

/// Detunings δ(F, F') in MHz indexed `[F - 3][F' - 3]`.
pub(crate) fn detuning_grid(detuning_mhz: f64, atom: &CsD1Constants) -> [[f64; 2]; 2] {
    let mut d = [[0.0; 2]; 2];
    for g in [3, 4] {
        for e in [3, 4] {
            d[(g - 3) as usize][(e - 3) as usize] = atom.transition_detuning_mhz(g, e, detuning_mhz);
        }
    }
    d
}

/// Full light-shift matrix (MHz) for an arbitrary polarization.
pub fn light_shift_matrix(
    detuning_mhz: f64,
    irradiance_rel: f64,
    pol: &Polarization,
    atom: &CsD1Constants,
) -> Result<Operator, Error> {
    check_detuning(detuning_mhz, atom)?;
    let amps = excitation_amplitudes(pol);
    let det = detuning_grid(detuning_mhz, atom);
    let prefactor = atom.gamma_mhz * atom.gamma_mhz / 8.0 * irradiance_rel;
    let reg = state_registry();
    let mut v = Operator::zeros();
    for f in [3, 4] {
        for g in block_indices(f) {
            for h in block_indices(f) {
                let mut acc = C0;
                for (e, es) in reg.iter().enumerate() {
                    let delta = det[(f - 3) as usize][(es.f() - 3) as usize];
                    acc += amps[e][g].conj() * amps[e][h] / delta;
                }
                v[(g, h)] = acc * prefactor;
            }
        }
    }
    Ok(v)
}

/// Light-shift operator split into irreducible parts within each hyperfine level.
#[derive(Clone, Debug)]
pub struct LightShiftOperator {
    pub total: Operator,
    pub scalar_part: Operator,
    pub vector_part: Operator,
    pub tensor_part: Operator,
    /// Scalar coupling of |4,0>: its shift is `xi0 + xi2 * J1/J`.
    pub xi0_mhz: f64,
    /// Vector coupling of the F=4 level: `V1 = xi1 (J3/J) F_y` for circular light.
    pub xi1_mhz: f64,
    /// Rank-2 coupling of |4,0>.
    pub xi2_mhz: f64,
}

/// Unit tensor operator `T^k_q` on a single hyperfine level of angular momentum `f`,
/// orthonormal under the trace inner product.
pub fn unit_tensor(f: i32, k: i32, q: i32) -> DMatrix<Complex64> {
    let dim = (2 * f + 1) as usize;
    let mut t = DMatrix::from_element(dim, dim, C0);
    let norm = f64::from(2 * k + 1).sqrt();
    for (r, m) in (-f..=f).enumerate() {
        for (c, mp) in (-f..=f).enumerate() {
            let three_j = wigner3j(
                HalfInt::integer(f),
                HalfInt::integer(k),
                HalfInt::integer(f),
                HalfInt::integer(-m),
                HalfInt::integer(q),
                HalfInt::integer(mp),
            )
            .unwrap_or(0.0);
            if three_j != 0.0 {
                let sign = if (f - m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                t[(r, c)] = Complex64::new(sign * norm * three_j, 0.0);
            }
        }
    }
    t
}

fn block(op: &Operator, f: i32) -> DMatrix<Complex64> {
    let idx = block_indices(f);
    let n = idx.len();
    DMatrix::from_fn(n, n, |r, c| op[(idx.start + r, idx.start + c)])
}

fn set_block(op: &mut Operator, f: i32, b: &DMatrix<Complex64>) {
    let start = block_indices(f).start;
    for r in 0..b.nrows() {
        for c in 0..b.ncols() {
            op[(start + r, start + c)] = b[(r, c)];
        }
    }
}

/// Rank-`k` part of a single hyperfine block.
pub fn rank_projection(b: &DMatrix<Complex64>, f: i32, k: i32) -> DMatrix<Complex64> {
    let mut out = DMatrix::from_element(b.nrows(), b.ncols(), C0);
    for q in -k..=k {
        let t = unit_tensor(f, k, q);
        let coeff = (t.adjoint() * b).trace();
        out += t * coeff;
    }
    out
}

/// Splits `total` into its rank 0, 1 and 2 parts per hyperfine block.
pub fn decompose(total: &Operator) -> [Operator; 3] {
    let mut parts = [Operator::zeros(), Operator::zeros(), Operator::zeros()];
    for f in [3, 4] {
        let b = block(total, f);
        for (k, part) in parts.iter_mut().enumerate() {
            set_block(part, f, &rank_projection(&b, f, k as i32));
        }
    }
    parts
}

/// Intercept `a` of a least-squares fit `V(m,m) = a + b m²` over the F=4 block.
fn f4_intercept(op: &Operator) -> f64 {
    let pts: Vec<(f64, f64)> = block_indices(4)
        .map(|i| {
            let m = f64::from(state_registry()[i].m());
            (m * m, op[(i, i)].re)
        })
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (sy - slope * sx) / n
}

fn f_y(f: i32) -> DMatrix<Complex64> {
    let dim = (2 * f + 1) as usize;
    let mut out = DMatrix::from_element(dim, dim, C0);
    let ff = f64::from(f * (f + 1));
    for (r, m) in (-f..=f).enumerate() {
        if m < f {
            // <m+1|F_+|m>
            let c = (ff - f64::from(m * (m + 1))).sqrt();
            // F_y = (F_+ - F_-)/(2i)
            out[(r + 1, r)] += Complex64::new(0.0, -c / 2.0);
            out[(r, r + 1)] += Complex64::new(0.0, c / 2.0);
        }
    }
    out
}

/// Builds the light-shift operator for a linearly polarized probe.
pub fn build_light_shift(probe: &ProbeConfig, atom: &CsD1Constants) -> Result<LightShiftOperator, Error> {
    probe.validate()?;
    let total = light_shift_matrix(probe.detuning_mhz, probe.irradiance_rel, &probe.polarization(), atom)?;
    let [scalar_part, vector_part, tensor_part] = decompose(&total);

    let along = |pol: Polarization| light_shift_matrix(probe.detuning_mhz, probe.irradiance_rel, &pol, atom);
    let z_intercept = f4_intercept(&along(Polarization::linear(0.0))?);
    let x_intercept = f4_intercept(&along(Polarization::linear(90.0))?);
    let xi0_mhz = 0.5 * (z_intercept + x_intercept);
    let xi2_mhz = 0.5 * (z_intercept - x_intercept);

    let circ = along(Polarization::circular(true))?;
    let v1 = rank_projection(&block(&circ, 4), 4, 1);
    let fy = f_y(4);
    let xi1_mhz = ((fy.adjoint() * &v1).trace() / (fy.adjoint() * &fy).trace()).re;

    Ok(LightShiftOperator {
        total,
        scalar_part,
        vector_part,
        tensor_part,
        xi0_mhz,
        xi1_mhz,
        xi2_mhz,
    })
}

/// ⟨4,0|V|4,0⟩ − ⟨3,0|V|3,0⟩ in kHz.
pub fn differential_clock_shift(probe: &ProbeConfig, atom: &CsD1Constants) -> Result<f64, Error> {
    let v = light_shift_matrix(probe.detuning_mhz, probe.irradiance_rel, &probe.polarization(), atom)?;
    let up = GroundState::clock_upper().index();
    let down = GroundState::clock_lower().index();
    Ok((v[(up, up)].re - v[(down, down)].re) * 1e3)
}

/// Total photon scattering rate (1/s) out of `state`.
pub fn scattering_rate(state: GroundState, probe: &ProbeConfig, atom: &CsD1Constants) -> Result<f64, Error> {
    check_detuning(probe.detuning_mhz, atom)?;
    let amps = excitation_amplitudes(&probe.polarization());
    let det = detuning_grid(probe.detuning_mhz, atom);
    let g = state.index();
    let mut sum = 0.0;
    for (e, es) in state_registry().iter().enumerate() {
        let d = det[(state.f() - 3) as usize][(es.f() - 3) as usize] / atom.gamma_mhz;
        sum += amps[e][g].norm_sqr() / (d * d);
    }
    Ok(scattering_prefactor(probe.irradiance_rel, atom) * sum)
}

/// Γ s / 8 in 1/s: the scattering rate per unit (strength / (δ/Γ)²).
pub(crate) fn scattering_prefactor(irradiance_rel: f64, atom: &CsD1Constants) -> f64 {
    2.0 * std::f64::consts::PI * atom.gamma_mhz * 1e6 * irradiance_rel / 8.0
}

/// Scattering rate averaged over an equal mixture of the two clock states.
pub fn reference_scattering_rate(probe: &ProbeConfig, atom: &CsD1Constants) -> Result<f64, Error> {
    let up = scattering_rate(GroundState::clock_upper(), probe, atom)?;
    let down = scattering_rate(GroundState::clock_lower(), probe, atom)?;
    Ok(0.5 * (up + down))
}

/// A probe detuning at which the differential clock shift vanishes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MagicPoint {
    pub detuning_mhz: f64,
    pub polarization_angle_deg: f64,
    /// ΔU at the returned detuning for unit irradiance.
    pub residual_du_khz: f64,
}

/// Root tolerance on ΔU, kHz.
pub const MAGIC_RESIDUAL_KHZ: f64 = 1e-3;
const MAGIC_SCAN_STEP_MHZ: f64 = 1.0;

/// Sign-bracketing scan (1 MHz grid) and bisection for zeros of ΔU inside
/// `window`, which must not contain a D1 resonance.
pub fn find_magic_detunings(
    theta_deg: f64,
    window: (f64, f64),
    atom: &CsD1Constants,
) -> Result<Vec<MagicPoint>, Error> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty detuning window ({lo}, {hi})")));
    }
    for (g, e, r) in atom.resonances() {
        if r > lo && r < hi {
            return Err(Error::InvalidParameter(format!(
                "window ({lo}, {hi}) MHz contains the F={g} -> F'={e} resonance at {r} MHz"
            )));
        }
    }
    let guard = RESONANCE_GUARD_LINEWIDTHS * atom.gamma_mhz;
    let probe = ProbeConfig::new(lo, 1.0, theta_deg)?;
    let du = |d: f64| differential_clock_shift(&probe.with_detuning(d), atom);

    let mut grid: Vec<f64> = Vec::new();
    let mut k = 1.0;
    while lo + k * MAGIC_SCAN_STEP_MHZ < hi {
        let d = lo + k * MAGIC_SCAN_STEP_MHZ;
        if atom.check_off_resonant(d, guard * 1.01).is_ok() {
            grid.push(d);
        }
        k += 1.0;
    }

    let mut roots = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for &d in &grid {
        let v = du(d)?;
        if v == 0.0 {
            roots.push(MagicPoint {
                detuning_mhz: d,
                polarization_angle_deg: theta_deg,
                residual_du_khz: 0.0,
            });
            prev = None;
            continue;
        }
        if let Some((pd, pv)) = prev {
            if pv * v < 0.0 {
                roots.push(bisect(pd, pv, d, &du, theta_deg)?);
            }
        }
        prev = Some((d, v));
    }
    Ok(roots)
}

fn bisect(
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    f: &dyn Fn(f64) -> Result<f64, Error>,
    theta_deg: f64,
) -> Result<MagicPoint, Error> {
    let mut mid = 0.5 * (a + b);
    let mut fm = f(mid)?;
    for _ in 0..200 {
        if fm == 0.0 || (b - a < 1e-7 && fm.abs() < MAGIC_RESIDUAL_KHZ) {
            break;
        }
        if fa * fm < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
        mid = 0.5 * (a + b);
        fm = f(mid)?;
    }
    Ok(MagicPoint {
        detuning_mhz: mid,
        polarization_angle_deg: theta_deg,
        residual_du_khz: fm,
    })
}

/// Frequency ratio above which a Zeeman-precessing coupling is treated as
/// rotating away in the secular approximation.
pub const SECULAR_RATIO: f64 = 10.0;

/// Largest light-shift coupling (MHz) between |F,0> and |F,m≠0> that survives
/// the secular approximation at `bias_field_g`.
///
/// A coupling survives when its Zeeman precession frequency is below
/// [`SECULAR_RATIO`] times its magnitude. With no field every coupling survives.
pub fn tensor_fz2_check(probe: &ProbeConfig, atom: &CsD1Constants, bias_field_g: f64) -> Result<f64, Error> {
    let v = light_shift_matrix(probe.detuning_mhz, probe.irradiance_rel, &probe.polarization(), atom)?;
    let hz = zeeman_hamiltonian(bias_field_g, atom);
    let mut worst: f64 = 0.0;
    for f in [3, 4] {
        let clock = GroundState::new(f, 0)?.index();
        for i in block_indices(f) {
            if i == clock {
                continue;
            }
            let coupling = v[(clock, i)].norm();
            let precession = (hz[(i, i)].re - hz[(clock, clock)].re).abs();
            if precession < SECULAR_RATIO * coupling {
                worst = worst.max(coupling);
            }
        }
    }
    Ok(worst)
}

/// Largest raw coupling (MHz) between a clock state and any other sublevel of its level.
pub fn clock_coupling_max(probe: &ProbeConfig, atom: &CsD1Constants) -> Result<f64, Error> {
    tensor_fz2_check(probe, atom, 0.0)
}

/// Operating point of a two-frequency probe whose birefringence cancels for
/// equal clock populations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoColorBalance {
    /// Component tuned between the F=3 -> F' lines.
    pub detuning_34_mhz: f64,
    /// Component tuned between the F=4 -> F' lines.
    pub detuning_44_mhz: f64,
    /// Power in the F=3 component over power in the F=4 component.
    pub power_ratio: f64,
    /// Phase per unit OD of each component for equal clock populations.
    pub phase_34_per_od: f64,
    pub phase_44_per_od: f64,
}

impl TwoColorBalance {
    /// Total birefringent phase with fraction `upper_fraction` of the atoms in |4,0>.
    pub fn total_phase(&self, upper_fraction: f64, od: f64, theta_deg: f64, atom: &CsD1Constants) -> Result<f64, Error> {
        let comp = |d: f64| -> Result<f64, Error> {
            let p = ProbeConfig::new(d, 1.0, theta_deg)?;
            let up = per_state_phase(GroundState::clock_upper(), &p, atom, od)?;
            let down = per_state_phase(GroundState::clock_lower(), &p, atom, od)?;
            Ok(upper_fraction * up + (1.0 - upper_fraction) * down)
        };
        let w34 = self.power_ratio / (1.0 + self.power_ratio);
        Ok(w34 * comp(self.detuning_34_mhz)? + (1.0 - w34) * comp(self.detuning_44_mhz)?)
    }
}

/// Chooses one detuning per window (a magic point when the window has one,
/// otherwise the window centre) and the power ratio nulling the phase at S3 = 0.
pub fn two_color_balance(
    window_34: (f64, f64),
    window_44: (f64, f64),
    theta_deg: f64,
    atom: &CsD1Constants,
) -> Result<TwoColorBalance, Error> {
    let pick = |w: (f64, f64)| -> Result<f64, Error> {
        Ok(find_magic_detunings(theta_deg, w, atom)?
            .first()
            .map(|m| m.detuning_mhz)
            .unwrap_or(0.5 * (w.0 + w.1)))
    };
    let d34 = pick(window_34)?;
    let d44 = pick(window_44)?;
    let mixture_phase = |d: f64| -> Result<f64, Error> {
        let p = ProbeConfig::new(d, 1.0, theta_deg)?;
        let up = per_state_phase(GroundState::clock_upper(), &p, atom, 1.0)?;
        let down = per_state_phase(GroundState::clock_lower(), &p, atom, 1.0)?;
        Ok(0.5 * (up + down))
    };
    let p34 = mixture_phase(d34)?;
    let p44 = mixture_phase(d44)?;
    if p34 * p44 >= 0.0 {
        return Err(Error::NoTwoColorSolution(format!(
            "component phases {p34:e} and {p44:e} rad do not have opposite signs"
        )));
    }
    Ok(TwoColorBalance {
        detuning_34_mhz: d34,
        detuning_44_mhz: d44,
        power_ratio: -p44 / p34,
        phase_34_per_od: p34,
        phase_44_per_od: p44,
    })
}
