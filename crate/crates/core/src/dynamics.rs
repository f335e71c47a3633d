//! Lindblad dynamics of the 16-level ground manifold.
//!
//! `dρ/dt = -2πi [H, ρ] + Σ_j D[A_j] ρ - (γ/2){P_clock, ρ}` with H in MHz
//! (converted to rad/s), probe scattering collapsed onto the ground manifold
//! by adiabatic elimination, and an optional extra loss of clock-state
//! population into a scalar reservoir.
//!
//! ρ is carried as 256 real coordinates on an orthonormal Hermitian basis
//! plus the lost population, so the generator is a 257×257 real matrix. One
//! RK4 step of a linear system is the degree-4 Taylor polynomial of `hL`;
//! the per-sample propagator is that polynomial squared `substep_doublings`
//! times, which is the same arithmetic as 2^k fixed RK4 substeps.

use std::f64::consts::{SQRT_2, TAU};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::atom_model::{block_indices, state_registry, zeeman_hamiltonian, CsD1Constants, GroundState, Operator};
use crate::birefringence::per_state_phases;
use crate::fit::{fit_damped_sinusoid, FitError};
use crate::lightshift::{
    check_detuning, detuning_grid, excitation_amplitudes, light_shift_matrix, scattering_prefactor, ProbeConfig,
};
use crate::Error;

const DIM: usize = 16;
const REAL_DIM: usize = DIM * DIM;
/// Drift of trace or positivity beyond this aborts an evolution.
pub const INVARIANT_TOLERANCE: f64 = 1e-6;
/// Steps must resolve the fastest scale by this factor.
pub const STEP_RESOLUTION: f64 = 0.01;
const POSITIVITY_CHECK_EVERY: usize = 16;

/// CSV schema line written before every record.
pub const CSV_SCHEMA_LINE: &str = "# clockprobe v1";
const CSV_COLUMNS: [&str; 6] = ["time_s", "signal_rad", "s3", "pop_F3", "pop_F4", "lost"];

/// Microwave drive on the Δm = 0 hyperfine transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicrowaveConfig {
    /// Resonant Rabi frequency χ/2π of the clock transition.
    pub rabi_khz: f64,
    /// Drive frequency minus the unperturbed clock frequency.
    pub detuning_khz: f64,
    /// Rms fractional spread of the microwave irradiance over the sample.
    pub inhomogeneity_frac: f64,
}

impl Default for MicrowaveConfig {
    fn default() -> Self {
        MicrowaveConfig {
            rabi_khz: 5.0,
            detuning_khz: 0.0,
            inhomogeneity_frac: 0.0,
        }
    }
}

impl MicrowaveConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.rabi_khz >= 0.0 && self.rabi_khz.is_finite()) {
            return Err(Error::InvalidParameter(format!("microwave rabi_khz must be >= 0, got {}", self.rabi_khz)));
        }
        if !(self.inhomogeneity_frac >= 0.0 && self.inhomogeneity_frac.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "microwave inhomogeneity_frac must be >= 0, got {}",
                self.inhomogeneity_frac
            )));
        }
        if !self.detuning_khz.is_finite() {
            return Err(Error::InvalidParameter("microwave detuning must be finite".into()));
        }
        Ok(())
    }

    pub fn off() -> Self {
        MicrowaveConfig {
            rabi_khz: 0.0,
            ..Default::default()
        }
    }
}

/// Relative π-transition magnetic dipole element between |3,m> and |4,m>,
/// normalized to the clock transition.
pub fn microwave_relative_coupling(m: i32) -> f64 {
    (f64::from(16 - m * m)).sqrt() / 4.0
}

/// Microwave coupling and drive detuning in the frame rotating at the drive (MHz).
pub fn microwave_hamiltonian(mw: &MicrowaveConfig) -> Operator {
    let mut h = Operator::zeros();
    let chi = mw.rabi_khz * 1e-3;
    for i in block_indices(4) {
        h[(i, i)] = Complex64::new(-mw.detuning_khz * 1e-3, 0.0);
    }
    for m in -3..=3 {
        let a = GroundState::new(3, m).expect("valid").index();
        let b = GroundState::new(4, m).expect("valid").index();
        let c = Complex64::new(0.5 * chi * microwave_relative_coupling(m), 0.0);
        h[(a, b)] = c;
        h[(b, a)] = c;
    }
    h
}

/// Total rotating-frame Hamiltonian in MHz. `probe = None` leaves the light off.
pub fn build_hamiltonian(
    probe: Option<&ProbeConfig>,
    mw: &MicrowaveConfig,
    bias_field_g: f64,
    atom: &CsD1Constants,
) -> Result<Operator, Error> {
    let mut h = zeeman_hamiltonian(bias_field_g, atom) + microwave_hamiltonian(mw);
    if let Some(p) = probe {
        h += light_shift_matrix(p.detuning_mhz, p.irradiance_rel, &p.polarization(), atom)?;
    }
    Ok(h)
}

/// Which hyperfine levels a scattering event connects. Photons from the three
/// kinds differ in frequency by the clock splitting and do not interfere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ScatteringKind {
    /// F -> F, both levels.
    Elastic,
    /// F=4 -> F=3.
    RamanDown,
    /// F=3 -> F=4.
    RamanUp,
}

/// One collapse channel: the operator already carries its rate.
#[derive(Clone, Debug)]
pub struct JumpOperator {
    pub kind: ScatteringKind,
    /// Spherical polarization of the emitted photon.
    pub q: i32,
    pub operator: Operator,
    /// Rate for an equal mixture of the two clock states, 1/s.
    pub rate_per_s: f64,
}

fn clock_reference_rate(op: &Operator) -> f64 {
    let ata = op.adjoint() * op;
    let up = GroundState::clock_upper().index();
    let down = GroundState::clock_lower().index();
    0.5 * (ata[(up, up)].re + ata[(down, down)].re)
}

/// Optical pumping channels from off-resonant scattering of the probe.
pub fn pumping_jump_operators(probe: &ProbeConfig, atom: &CsD1Constants) -> Result<Vec<JumpOperator>, Error> {
    check_detuning(probe.detuning_mhz, atom)?;
    let table = crate::atom_model::dipole_table();
    let amps = excitation_amplitudes(&probe.polarization());
    let det = detuning_grid(probe.detuning_mhz, atom);
    let reg = state_registry();
    let scale = scattering_prefactor(probe.irradiance_rel, atom).sqrt();

    let mut out = Vec::with_capacity(9);
    for q in -1..=1 {
        let mut full = Operator::zeros();
        for (e, es) in reg.iter().enumerate() {
            for (g, gs) in reg.iter().enumerate() {
                let x = amps[e][g];
                if x.norm_sqr() == 0.0 {
                    continue;
                }
                let excite = x / (det[(gs.f() - 3) as usize][(es.f() - 3) as usize] / atom.gamma_mhz);
                for gp in 0..DIM {
                    let decay = table.amplitude(q, e, gp);
                    if decay != 0.0 {
                        full[(gp, g)] += excite * decay * scale;
                    }
                }
            }
        }
        for kind in [ScatteringKind::Elastic, ScatteringKind::RamanDown, ScatteringKind::RamanUp] {
            let mut op = Operator::zeros();
            for (r, rs) in reg.iter().enumerate() {
                for (c, cs) in reg.iter().enumerate() {
                    let keep = match kind {
                        ScatteringKind::Elastic => rs.f() == cs.f(),
                        ScatteringKind::RamanDown => cs.f() == 4 && rs.f() == 3,
                        ScatteringKind::RamanUp => cs.f() == 3 && rs.f() == 4,
                    };
                    if keep {
                        op[(r, c)] = full[(r, c)];
                    }
                }
            }
            out.push(JumpOperator {
                kind,
                q,
                rate_per_s: clock_reference_rate(&op),
                operator: op,
            });
        }
    }
    Ok(out)
}

/// Ground-manifold density matrix and the population lost from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub rho: Operator,
    pub lost_population: f64,
}

impl DensityMatrix {
    pub fn pure(state: GroundState) -> Self {
        let mut rho = Operator::zeros();
        rho[(state.index(), state.index())] = Complex64::new(1.0, 0.0);
        DensityMatrix {
            rho,
            lost_population: 0.0,
        }
    }

    /// Projector onto a normalized state vector.
    pub fn from_vector(v: &nalgebra::SVector<Complex64, DIM>) -> Self {
        let v = v / Complex64::new(v.norm(), 0.0);
        DensityMatrix {
            rho: v * v.adjoint(),
            lost_population: 0.0,
        }
    }

    /// Incoherent mixture; weights must be non-negative and sum to one.
    pub fn diagonal_mixture(weights: &[(GroundState, f64)]) -> Result<Self, Error> {
        let mut rho = Operator::zeros();
        let mut total = 0.0;
        for &(s, w) in weights {
            if !(w >= 0.0) {
                return Err(Error::InvalidParameter(format!("negative population {w} for {s}")));
            }
            rho[(s.index(), s.index())] += Complex64::new(w, 0.0);
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("populations sum to {total}, not 1")));
        }
        Ok(DensityMatrix {
            rho,
            lost_population: 0.0,
        })
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn population(&self, state: GroundState) -> f64 {
        self.rho[(state.index(), state.index())].re
    }

    pub fn populations(&self) -> [f64; DIM] {
        std::array::from_fn(|i| self.rho[(i, i)].re)
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (self.rho - self.rho.adjoint()).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `<v|ρ|v>` for a normalized vector.
    pub fn expectation(&self, v: &nalgebra::SVector<Complex64, DIM>) -> f64 {
        (v.adjoint() * self.rho * v)[(0, 0)].re
    }
}

/// Sampling grid of an evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub duration_s: f64,
    pub sample_interval_s: f64,
    /// Integrator steps per sample are 2^substep_doublings.
    #[serde(default)]
    pub substep_doublings: u32,
}

impl TimeGrid {
    pub fn new(duration_s: f64, sample_interval_s: f64) -> Result<Self, Error> {
        let g = TimeGrid {
            duration_s,
            sample_interval_s,
            substep_doublings: 0,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.sample_interval_s > 0.0 && self.duration_s >= self.sample_interval_s) {
            return Err(Error::InvalidParameter(format!(
                "time grid needs 0 < sample interval <= duration, got {} and {}",
                self.sample_interval_s, self.duration_s
            )));
        }
        if self.substep_doublings > 40 {
            return Err(Error::InvalidParameter("substep_doublings above 40".into()));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s / self.sample_interval_s + 1e-9).floor() as usize + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|i| i as f64 * self.sample_interval_s).collect()
    }

    pub fn step_s(&self) -> f64 {
        self.sample_interval_s / f64::from(2u32.pow(self.substep_doublings))
    }

    /// Fewest doublings (at least the configured number) whose step is below `limit_s`.
    pub fn resolving(&self, limit_s: f64) -> Self {
        let mut g = self.clone();
        while g.step_s() > limit_s && g.substep_doublings < 40 {
            g.substep_doublings += 1;
        }
        g
    }

    pub fn refined(&self) -> Self {
        TimeGrid {
            substep_doublings: self.substep_doublings + 1,
            ..self.clone()
        }
    }
}

/// Populations and polarimeter signal sampled over an evolution.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SimRecord {
    pub times_s: Vec<f64>,
    pub signal_rad: Vec<f64>,
    /// |4,0> minus |3,0> population, per atom.
    pub s3: Vec<f64>,
    pub pop_f3: Vec<f64>,
    pub pop_f4: Vec<f64>,
    pub lost: Vec<f64>,
    /// Per-state populations in registry order; empty when read back from CSV.
    pub state_populations: Vec<[f64; DIM]>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    time_s: f64,
    signal_rad: f64,
    s3: f64,
    #[serde(rename = "pop_F3")]
    pop_f3: f64,
    #[serde(rename = "pop_F4")]
    pop_f4: f64,
    lost: f64,
}

impl SimRecord {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    fn push(&mut self, t: f64, rho: &DensityMatrix, phases: &[f64; DIM]) {
        let pops = rho.populations();
        let up = GroundState::clock_upper().index();
        let down = GroundState::clock_lower().index();
        self.times_s.push(t);
        self.signal_rad.push(pops.iter().zip(phases).map(|(p, f)| p * f).sum());
        self.s3.push(pops[up] - pops[down]);
        self.pop_f3.push(block_indices(3).map(|i| pops[i]).sum());
        self.pop_f4.push(block_indices(4).map(|i| pops[i]).sum());
        self.lost.push(rho.lost_population);
        self.state_populations.push(pops);
    }

    /// Checks shared lengths, strictly increasing times and finite values.
    pub fn validate(&self) -> Result<(), Error> {
        let n = self.times_s.len();
        let lens = [self.signal_rad.len(), self.s3.len(), self.pop_f3.len(), self.pop_f4.len(), self.lost.len()];
        if lens.iter().any(|&l| l != n) || !(self.state_populations.is_empty() || self.state_populations.len() == n) {
            return Err(Error::Format("record columns have different lengths".into()));
        }
        if self.times_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Format("record times are not strictly increasing".into()));
        }
        let all = [&self.times_s, &self.signal_rad, &self.s3, &self.pop_f3, &self.pop_f4, &self.lost];
        if all.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Format("record contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), Error> {
        writeln!(out, "{CSV_SCHEMA_LINE}")?;
        // header written by hand so an empty record still round-trips
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for i in 0..self.len() {
            w.serialize(CsvRow {
                time_s: self.times_s[i],
                signal_rad: self.signal_rad[i],
                s3: self.s3[i],
                pop_f3: self.pop_f3[i],
                pop_f4: self.pop_f4[i],
                lost: self.lost[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses a record written by [`SimRecord::write_csv`]; comment lines are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, Error> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().ne(CSV_COLUMNS) {
            return Err(Error::Format(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
        }
        let mut rec = SimRecord::default();
        for row in r.deserialize::<CsvRow>() {
            let row = row?;
            rec.times_s.push(row.time_s);
            rec.signal_rad.push(row.signal_rad);
            rec.s3.push(row.s3);
            rec.pop_f3.push(row.pop_f3);
            rec.pop_f4.push(row.pop_f4);
            rec.lost.push(row.lost);
        }
        rec.validate()?;
        Ok(rec)
    }
}

/// Real coordinates of a Hermitian matrix on the orthonormal basis
/// {E_ii, (E_ij+E_ji)/√2, i(E_ij−E_ji)/√2}, followed by the lost population.
fn to_real(rho: &DensityMatrix) -> DVector<f64> {
    let mut x = DVector::zeros(REAL_DIM + 1);
    let mut k = 0;
    for i in 0..DIM {
        x[k] = rho.rho[(i, i)].re;
        k += 1;
    }
    for i in 0..DIM {
        for j in (i + 1)..DIM {
            let z = rho.rho[(i, j)];
            x[k] = SQRT_2 * z.re;
            x[k + 1] = SQRT_2 * z.im;
            k += 2;
        }
    }
    x[REAL_DIM] = rho.lost_population;
    x
}

fn from_real(x: &DVector<f64>) -> DensityMatrix {
    let mut rho = Operator::zeros();
    let mut k = 0;
    for i in 0..DIM {
        rho[(i, i)] = Complex64::new(x[k], 0.0);
        k += 1;
    }
    for i in 0..DIM {
        for j in (i + 1)..DIM {
            let z = Complex64::new(x[k], x[k + 1]) / SQRT_2;
            rho[(i, j)] = z;
            rho[(j, i)] = z.conj();
            k += 2;
        }
    }
    DensityMatrix {
        rho,
        lost_population: x[REAL_DIM],
    }
}

/// Generator of the master equation on the real coordinates (1/s).
pub struct Liouvillian {
    matrix: DMatrix<f64>,
    /// Fastest scale in rad/s or 1/s, used for the step-size check.
    fastest_rate: f64,
}

impl Liouvillian {
    pub fn new(hamiltonian: &Operator, jumps: &[JumpOperator], extra_loss_rate: f64) -> Result<Self, Error> {
        if !(extra_loss_rate >= 0.0 && extra_loss_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("extra loss rate must be >= 0, got {extra_loss_rate}")));
        }
        let omega = Complex64::new(0.0, -TAU * 1e6);
        let mut clock = Operator::zeros();
        for s in [GroundState::clock_lower(), GroundState::clock_upper()] {
            clock[(s.index(), s.index())] = Complex64::new(1.0, 0.0);
        }
        let mut decay = Operator::zeros();
        for j in jumps {
            decay += j.operator.adjoint() * j.operator;
        }
        // non-Hermitian effective Hamiltonian part: -½{Σ A†A + γ P_clock, ρ}
        let anti = (decay + clock * Complex64::new(extra_loss_rate, 0.0)) * Complex64::new(0.5, 0.0);

        let apply = |rho: &Operator| -> Operator {
            let mut out = (hamiltonian * rho - rho * hamiltonian) * omega - anti * rho - rho * anti;
            for j in jumps {
                out += j.operator * rho * j.operator.adjoint();
            }
            out
        };

        let mut matrix = DMatrix::zeros(REAL_DIM + 1, REAL_DIM + 1);
        let mut unit = DVector::zeros(REAL_DIM + 1);
        for col in 0..REAL_DIM {
            unit[col] = 1.0;
            let basis = from_real(&unit).rho;
            unit[col] = 0.0;
            let image = DensityMatrix {
                rho: apply(&basis),
                lost_population: extra_loss_rate * (clock * basis).trace().re,
            };
            matrix.set_column(col, &to_real(&image));
        }

        let h_max = hamiltonian.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let rate_max = decay.diagonal().iter().map(|z| z.re).fold(0.0, f64::max) + extra_loss_rate;
        Ok(Liouvillian {
            matrix,
            fastest_rate: (TAU * 1e6 * h_max).max(rate_max),
        })
    }

    /// Largest integrator step that resolves the fastest scale.
    pub fn step_limit_s(&self) -> f64 {
        if self.fastest_rate == 0.0 {
            f64::INFINITY
        } else {
            STEP_RESOLUTION / self.fastest_rate
        }
    }

    /// Propagator over one sample interval.
    pub fn propagator(&self, grid: &TimeGrid) -> Result<DMatrix<f64>, Error> {
        let h = grid.step_s();
        if h > self.step_limit_s() {
            return Err(Error::StepSize {
                step_s: h,
                limit_s: self.step_limit_s(),
            });
        }
        let n = REAL_DIM + 1;
        let hl = &self.matrix * h;
        let id = DMatrix::<f64>::identity(n, n);
        // I + hL(I + hL/2(I + hL/3(I + hL/4)))
        let mut p = &id + &hl * 0.25;
        p = &id + (&hl * p) * (1.0 / 3.0);
        p = &id + (&hl * p) * 0.5;
        p = &id + &hl * p;
        for _ in 0..grid.substep_doublings {
            p = &p * &p;
        }
        Ok(p)
    }
}

/// Integrates from `rho0`, calling `visit` at each sample time; aborts on
/// trace or positivity drift.
pub fn propagate(
    rho0: &DensityMatrix,
    generator: &Liouvillian,
    grid: &TimeGrid,
    mut visit: impl FnMut(f64, &DensityMatrix),
) -> Result<(), Error> {
    grid.validate()?;
    let p = generator.propagator(grid)?;
    let mut x = to_real(rho0);
    let initial_total = rho0.trace() + rho0.lost_population;
    let times = grid.times();
    for (k, &t) in times.iter().enumerate() {
        if k > 0 {
            x = &p * &x;
        }
        let rho = from_real(&x);
        let drift = (rho.trace() + rho.lost_population - initial_total).abs();
        if drift > INVARIANT_TOLERANCE {
            return Err(Error::InvariantViolation {
                time_s: t,
                detail: format!("trace + lost population drifted by {drift:.3e}"),
            });
        }
        if k % POSITIVITY_CHECK_EVERY == 0 || k + 1 == times.len() {
            let min = rho.min_eigenvalue();
            if min < -INVARIANT_TOLERANCE {
                return Err(Error::InvariantViolation {
                    time_s: t,
                    detail: format!("density matrix eigenvalue {min:.3e}"),
                });
            }
        }
        visit(t, &rho);
    }
    Ok(())
}

/// Integrates the master equation and records the polarimeter signal, with
/// `phases` the birefringent phase of each registry state.
pub fn evolve(
    rho0: &DensityMatrix,
    hamiltonian: &Operator,
    jumps: &[JumpOperator],
    extra_loss_rate: f64,
    grid: &TimeGrid,
    phases: &[f64; DIM],
) -> Result<SimRecord, Error> {
    let generator = Liouvillian::new(hamiltonian, jumps, extra_loss_rate)?;
    let mut rec = SimRecord::default();
    propagate(rho0, &generator, grid, |t, rho| rec.push(t, rho, phases))?;
    Ok(rec)
}

/// Generalized Rabi frequency Ω/2π (kHz) of the clock population difference.
pub fn rabi_frequency(record: &SimRecord) -> Result<f64, FitError> {
    let fit = fit_damped_sinusoid(&record.times_s, &record.s3)?;
    Ok(fit.frequency_hz() * 1e-3)
}

/// Initial state of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Pure bare |3,0>.
    ClockLower,
    /// The eigenstate of the probe-dressed F=3 level closest to |3,0>
    /// (probe switched on adiabatically).
    DressedClockLower,
    /// Diagonal mixture over (F, m, population).
    Mixture(Vec<(i32, i32, f64)>),
}

/// Everything needed for one master-equation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub atom: CsD1Constants,
    /// `None` switches the probe off entirely.
    pub probe: Option<ProbeConfig>,
    pub microwave: MicrowaveConfig,
    pub bias_field_g: f64,
    pub od: f64,
    /// Optical pumping by the probe; the coherent light shift stays on when false.
    pub pumping: bool,
    pub extra_loss_rate_per_s: f64,
    pub initial: InitialState,
    /// `substep_doublings` is a minimum; more are added to resolve the dynamics.
    pub grid: TimeGrid,
}

impl Scenario {
    pub fn hamiltonian(&self) -> Result<Operator, Error> {
        build_hamiltonian(self.probe.as_ref(), &self.microwave, self.bias_field_g, &self.atom)
    }

    /// Zeeman plus light shift, without the drive.
    pub fn static_hamiltonian(&self) -> Result<Operator, Error> {
        build_hamiltonian(self.probe.as_ref(), &MicrowaveConfig::off(), self.bias_field_g, &self.atom)
    }

    pub fn jumps(&self) -> Result<Vec<JumpOperator>, Error> {
        match (&self.probe, self.pumping) {
            (Some(p), true) => pumping_jump_operators(p, &self.atom),
            _ => Ok(Vec::new()),
        }
    }

    pub fn phases(&self) -> Result<[f64; DIM], Error> {
        match &self.probe {
            Some(p) => per_state_phases(p, &self.atom, self.od),
            None => Ok([0.0; DIM]),
        }
    }

    pub fn initial_state(&self) -> Result<DensityMatrix, Error> {
        match &self.initial {
            InitialState::ClockLower => Ok(DensityMatrix::pure(GroundState::clock_lower())),
            InitialState::DressedClockLower => {
                let (lower, _) = dressed_clock_states(&self.static_hamiltonian()?);
                Ok(DensityMatrix::from_vector(&lower))
            }
            InitialState::Mixture(w) => {
                let weights = w
                    .iter()
                    .map(|&(f, m, p)| Ok((GroundState::new(f, m)?, p)))
                    .collect::<Result<Vec<_>, Error>>()?;
                DensityMatrix::diagonal_mixture(&weights)
            }
        }
    }

    fn generator(&self) -> Result<Liouvillian, Error> {
        self.microwave.validate()?;
        if let Some(p) = &self.probe {
            p.validate()?;
        }
        Liouvillian::new(&self.hamiltonian()?, &self.jumps()?, self.extra_loss_rate_per_s)
    }

    /// Runs with `extra_doublings` more integrator doublings than needed.
    pub fn run_refined(&self, extra_doublings: u32) -> Result<SimRecord, Error> {
        let generator = self.generator()?;
        let mut grid = self.grid.resolving(generator.step_limit_s());
        grid.substep_doublings += extra_doublings;
        let phases = self.phases()?;
        let mut rec = SimRecord::default();
        propagate(&self.initial_state()?, &generator, &grid, |t, rho| rec.push(t, rho, &phases))?;
        Ok(rec)
    }

    pub fn run(&self) -> Result<SimRecord, Error> {
        self.run_refined(0)
    }

    /// Leakage out of the two clock states at every sample: `(t, dressed, bare)`,
    /// where the dressed measure uses the eigenstates of Zeeman + light shift.
    pub fn clock_leakage(&self) -> Result<Vec<(f64, f64, f64)>, Error> {
        let generator = self.generator()?;
        let grid = self.grid.resolving(generator.step_limit_s());
        let (d3, d4) = dressed_clock_states(&self.static_hamiltonian()?);
        let up = GroundState::clock_upper();
        let down = GroundState::clock_lower();
        let mut out = Vec::with_capacity(grid.n_samples());
        propagate(&self.initial_state()?, &generator, &grid, |t, rho| {
            let total = rho.trace();
            let dressed = total - rho.expectation(&d3) - rho.expectation(&d4);
            let bare = total - rho.population(up) - rho.population(down);
            out.push((t, dressed, bare));
        })?;
        Ok(out)
    }
}

/// Probe-dressed clock states: within each hyperfine level, the eigenvector of
/// `h_static` with the largest |F,0> overlap. Degenerate eigenvalues are
/// grouped and |F,0> is projected onto the whole eigenspace.
pub fn dressed_clock_states(
    h_static: &Operator,
) -> (nalgebra::SVector<Complex64, DIM>, nalgebra::SVector<Complex64, DIM>) {
    let dressed = |f: i32| {
        let idx = block_indices(f);
        let n = idx.len();
        let block = DMatrix::from_fn(n, n, |r, c| h_static[(idx.start + r, idx.start + c)]);
        let block = (&block + block.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = block.symmetric_eigen();
        let centre = f as usize;
        let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        // eigenvalue of the best-overlap eigenvector, then its degenerate cluster
        let best = (0..n)
            .max_by(|&a, &b| eig.eigenvectors[(centre, a)].norm().total_cmp(&eig.eigenvectors[(centre, b)].norm()))
            .expect("non-empty block");
        let lambda = eig.eigenvalues[best];
        let mut v = DVector::<Complex64>::zeros(n);
        for k in 0..n {
            if (eig.eigenvalues[k] - lambda).abs() <= 1e-9 * scale {
                let col = eig.eigenvectors.column(k);
                v += col * col[centre].conj();
            }
        }
        let v = &v / Complex64::new(v.norm(), 0.0);
        let mut full = nalgebra::SVector::<Complex64, DIM>::zeros();
        for r in 0..n {
            full[idx.start + r] = v[r];
        }
        full
    };
    (dressed(3), dressed(4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn atom() -> CsD1Constants {
        CsD1Constants::default()
    }

    fn magic_probe(rate: f64) -> ProbeConfig {
        ProbeConfig::new(-335.0, 1.0, 45.0)
            .unwrap()
            .with_scattering_rate(rate, &atom())
            .unwrap()
    }

    fn scenario(probe: Option<ProbeConfig>, mw: MicrowaveConfig, duration: f64) -> Scenario {
        Scenario {
            atom: atom(),
            probe,
            microwave: mw,
            bias_field_g: 0.5,
            od: 2.5,
            pumping: true,
            extra_loss_rate_per_s: 0.0,
            initial: InitialState::ClockLower,
            grid: TimeGrid::new(duration, 5e-6).unwrap(),
        }
    }

    #[test]
    fn real_coordinates_round_trip() {
        let mut rho = DensityMatrix::pure(GroundState::clock_lower());
        rho.rho[(3, 11)] = Complex64::new(0.1, -0.2);
        rho.rho[(11, 3)] = Complex64::new(0.1, 0.2);
        rho.lost_population = 0.25;
        assert_eq!(from_real(&to_real(&rho)), rho);
    }

    #[test]
    fn probe_and_drive_off_leave_zeeman() {
        let h = build_hamiltonian(None, &MicrowaveConfig::off(), 0.5, &atom()).unwrap();
        assert_eq!(h, zeeman_hamiltonian(0.5, &atom()));
    }

    #[test]
    fn magic_probe_leaves_drive_detuning() {
        let a = atom();
        let roots = crate::lightshift::find_magic_detunings(45.0, (-1168.0, 0.0), &a).unwrap();
        let probe = ProbeConfig::new(roots[0].detuning_mhz, 16.0, 45.0).unwrap();
        let mw = MicrowaveConfig {
            detuning_khz: 1.5,
            ..Default::default()
        };
        let h = build_hamiltonian(Some(&probe), &mw, 0.5, &a).unwrap();
        let up = GroundState::clock_upper().index();
        let down = GroundState::clock_lower().index();
        assert_abs_diff_eq!((h[(up, up)] - h[(down, down)]).re * 1e3, -1.5, epsilon = 1e-6);
    }

    #[test]
    fn jump_rates_sum_to_calibrated_total() {
        let a = atom();
        let probe = magic_probe(1.0 / 0.8e-3);
        let jumps = pumping_jump_operators(&probe, &a).unwrap();
        assert_eq!(jumps.len(), 9);
        let total: f64 = jumps.iter().map(|j| j.rate_per_s).sum();
        assert!((total * 0.8e-3 - 1.0).abs() < 1e-6, "{total}");
        // Σ A†A is the per-state scattering rate on the diagonal
        let mut sum = Operator::zeros();
        for j in &jumps {
            sum += j.operator.adjoint() * j.operator;
        }
        for s in state_registry() {
            let r = crate::lightshift::scattering_rate(*s, &probe, &a).unwrap();
            assert!((sum[(s.index(), s.index())].re / r - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn nothing_on_means_nothing_moves() {
        let mut s = scenario(None, MicrowaveConfig::off(), 1e-3);
        s.bias_field_g = 0.0;
        s.initial = InitialState::Mixture(vec![(3, 0, 0.3), (4, 2, 0.7)]);
        let rec = s.run().unwrap();
        for p in &rec.state_populations {
            assert_eq!(p[GroundState::new(3, 0).unwrap().index()], 0.3);
            assert_eq!(p[GroundState::new(4, 2).unwrap().index()], 0.7);
        }
    }

    #[test]
    fn bare_rabi_flopping() {
        let chi = 4.0;
        for detuning in [0.0, 3.0] {
            let mw = MicrowaveConfig {
                rabi_khz: chi,
                detuning_khz: detuning,
                inhomogeneity_frac: 0.0,
            };
            let mut s = scenario(None, mw, 1e-3);
            s.bias_field_g = 5.0;
            let rec = s.run().unwrap();
            let omega = (chi * chi + detuning * detuning).sqrt();
            for (i, &t) in rec.times_s.iter().enumerate() {
                let p4 = (chi / omega).powi(2) * (std::f64::consts::PI * omega * 1e3 * t).sin().powi(2);
                let pops = rec.state_populations[i];
                assert!((pops[GroundState::clock_upper().index()] - p4).abs() < 1e-6);
                if detuning == 0.0 {
                    let s3 = -(TAU * chi * 1e3 * t).cos();
                    assert!((rec.s3[i] - s3).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn pumping_moves_population_to_lower_level() {
        let mut s = scenario(Some(magic_probe(1.0 / 0.8e-3)), MicrowaveConfig::off(), 3e-3);
        s.initial = InitialState::Mixture(vec![(4, 0, 1.0)]);
        let rec = s.run().unwrap();
        assert!(rec.pop_f3.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(rec.pop_f3.last().unwrap() > &0.5);
    }

    #[test]
    fn trace_and_positivity_hold() {
        let mut s = scenario(Some(magic_probe(1.0 / 0.8e-3)), MicrowaveConfig::default(), 10e-3);
        s.extra_loss_rate_per_s = 1.0 / 2.5e-3;
        let generator = s.generator().unwrap();
        let grid = s.grid.resolving(generator.step_limit_s());
        let mut worst_trace: f64 = 0.0;
        let mut worst_eig: f64 = 0.0;
        propagate(&s.initial_state().unwrap(), &generator, &grid, |_, rho| {
            worst_trace = worst_trace.max((rho.trace() + rho.lost_population - 1.0).abs());
            worst_eig = worst_eig.min(rho.min_eigenvalue());
            assert!(rho.hermiticity_defect() < 1e-10);
        })
        .unwrap();
        assert!(worst_trace < 1e-8, "{worst_trace}");
        assert!(worst_eig > -1e-9, "{worst_eig}");
    }

    #[test]
    fn coarse_step_is_rejected() {
        let h = zeeman_hamiltonian(0.5, &atom());
        let grid = TimeGrid::new(1e-4, 1e-5).unwrap();
        let err = evolve(&DensityMatrix::pure(GroundState::clock_lower()), &h, &[], 0.0, &grid, &[0.0; 16]);
        assert!(matches!(err, Err(Error::StepSize { .. })));
    }

    #[test]
    fn extra_loss_drains_clock_states() {
        let mut s = scenario(None, MicrowaveConfig::off(), 5e-3);
        s.extra_loss_rate_per_s = 400.0;
        let rec = s.run().unwrap();
        let last = rec.len() - 1;
        let expect = 1.0 - (-400.0 * rec.times_s[last]).exp();
        assert!((rec.lost[last] - expect).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let s = scenario(None, MicrowaveConfig::default(), 2e-4);
        let rec = s.run().unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# clockprobe v1\ntime_s,signal_rad,s3,pop_F3,pop_F4,lost\n"));
        let back = SimRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times_s, rec.times_s);
        assert_eq!(back.s3, rec.s3);
        assert!(back.state_populations.is_empty());
        assert!(SimRecord::read_csv("a,b\n1,2\n".as_bytes()).is_err());

        let mut empty = Vec::new();
        SimRecord::default().write_csv(&mut empty).unwrap();
        assert!(SimRecord::read_csv(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn rabi_frequency_of_bare_drive() {
        let s = scenario(None, MicrowaveConfig::default(), 2e-3);
        let rec = s.run().unwrap();
        assert!((rabi_frequency(&rec).unwrap() / 5.0 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn dressed_states_match_bare_without_light() {
        let (d3, d4) = dressed_clock_states(&zeeman_hamiltonian(0.5, &atom()));
        assert_abs_diff_eq!(d3[GroundState::clock_lower().index()].norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d4[GroundState::clock_upper().index()].norm(), 1.0, epsilon = 1e-12);
    }
}
