//! Damped-sinusoid least squares for Rabi traces.
//!
//! Model: `y(t) = e^{-γt}(a cos ωt + b sin ωt) + c + d e^{-γ_b t}`. The slow
//! term absorbs the drift of the mean population as the probe pumps atoms out
//! of the clock states.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{DMatrix, DVector, Dyn, Owned, Vector, U7};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;
use thiserror::Error;

/// Minimum ratio of oscillation amplitude to rms residual for a usable fit.
pub const MIN_AMPLITUDE_TO_RESIDUAL: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("trace has {0} samples; at least 16 uniformly spaced samples are needed")]
    TooShort(usize),
    #[error("samples are not uniformly spaced in time")]
    NonUniform,
    #[error("oscillation amplitude {amplitude:.3e} is below {MIN_AMPLITUDE_TO_RESIDUAL}x the fit residual {residual:.3e}")]
    LowAmplitude { amplitude: f64, residual: f64 },
    #[error("no oscillation found in the trace")]
    NoOscillation,
    #[error("fitted oscillation spans only {0:.2} periods of the trace")]
    TooFewPeriods(f64),
}

/// Fitted parameters in SI units (seconds, rad/s).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DampedSinusoid {
    pub decay_rate: f64,
    pub angular_frequency: f64,
    pub background_rate: f64,
    pub cos_amplitude: f64,
    pub sin_amplitude: f64,
    pub offset: f64,
    pub background_amplitude: f64,
    pub rms_residual: f64,
    /// True when least squares did not improve on the spectral estimate.
    pub spectral_fallback: bool,
}

impl DampedSinusoid {
    pub fn amplitude(&self) -> f64 {
        self.cos_amplitude.hypot(self.sin_amplitude)
    }

    pub fn frequency_hz(&self) -> f64 {
        self.angular_frequency / std::f64::consts::TAU
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let (s, c) = (self.angular_frequency * t).sin_cos();
        (-self.decay_rate * t).exp() * (self.cos_amplitude * c + self.sin_amplitude * s)
            + self.offset
            + self.background_amplitude * (-self.background_rate * t).exp()
    }
}

fn check_uniform(t: &[f64]) -> Result<f64, FitError> {
    if t.len() < 16 {
        return Err(FitError::TooShort(t.len()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(FitError::NonUniform);
    }
    for (k, w) in t.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt * (k as f64 + 1.0).max(1.0) {
            return Err(FitError::NonUniform);
        }
    }
    Ok(dt)
}

/// Angular frequency (rad/s) of the strongest spectral component, from a
/// zero-padded FFT of the mean- and trend-subtracted trace.
pub fn spectral_peak(t: &[f64], y: &[f64]) -> Result<f64, FitError> {
    let dt = check_uniform(t)?;
    let n = y.len();
    let tm = t.iter().sum::<f64>() / n as f64;
    let ym = y.iter().sum::<f64>() / n as f64;
    let stt: f64 = t.iter().map(|x| (x - tm).powi(2)).sum();
    let sty: f64 = t.iter().zip(y).map(|(x, v)| (x - tm) * (v - ym)).sum();
    let slope = sty / stt;

    let padded = (16 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = t
        .iter()
        .zip(y)
        .map(|(x, v)| Complex::new(v - ym - slope * (x - tm), 0.0))
        .collect();
    buf.resize(padded, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(padded).process(&mut buf);

    let mag: Vec<f64> = buf[..padded / 2].iter().map(|c| c.norm()).collect();
    // skip the DC lobe left by detrending
    let start = (padded / n).max(1) * 2;
    let (k, &peak) = mag[start..]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(FitError::NoOscillation)?;
    if peak == 0.0 {
        return Err(FitError::NoOscillation);
    }
    let k = k + start;
    let shift = if k + 1 < mag.len() {
        let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
        let den = a - 2.0 * b + c;
        if den != 0.0 {
            0.5 * (a - c) / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(std::f64::consts::TAU * (k as f64 + shift) / (padded as f64 * dt))
}

/// Least-squares problem in scaled time `τ = t/T`.
struct Problem {
    tau: Vec<f64>,
    y: Vec<f64>,
    p: Vector<f64, U7, Owned<f64, U7>>,
}

impl Problem {
    fn basis(&self, gamma: f64, omega: f64, gamma_b: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.tau.len(), 4, |i, j| {
            let t = self.tau[i];
            match j {
                0 => (-gamma * t).exp() * (omega * t).cos(),
                1 => (-gamma * t).exp() * (omega * t).sin(),
                2 => 1.0,
                _ => (-gamma_b * t).exp(),
            }
        })
    }

    /// Best linear coefficients for fixed rates.
    fn linear_solve(&self, gamma: f64, omega: f64, gamma_b: f64) -> Option<(DVector<f64>, f64)> {
        let a = self.basis(gamma, omega, gamma_b);
        let y = DVector::from_column_slice(&self.y);
        let coef = a.clone().svd(true, true).solve(&y, 1e-12).ok()?;
        let r = &a * &coef - y;
        Some((coef, r.norm_squared()))
    }
}

impl LeastSquaresProblem<f64, Dyn, U7> for Problem {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, U7>;
    type ParameterStorage = Owned<f64, U7>;

    fn set_params(&mut self, x: &Vector<f64, U7, Self::ParameterStorage>) {
        self.p.copy_from(x);
    }

    fn params(&self) -> Vector<f64, U7, Self::ParameterStorage> {
        self.p
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let [g, w, gb, a, b, c, d] = <[f64; 7]>::from(self.p);
        let r = DVector::from_iterator(
            self.tau.len(),
            self.tau.iter().zip(&self.y).map(|(&t, &y)| {
                let (s, co) = (w * t).sin_cos();
                (-g * t).exp() * (a * co + b * s) + c + d * (-gb * t).exp() - y
            }),
        );
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<nalgebra::Matrix<f64, Dyn, U7, Owned<f64, Dyn, U7>>> {
        let [g, w, gb, a, b, _, d] = <[f64; 7]>::from(self.p);
        let mut j = nalgebra::OMatrix::<f64, Dyn, U7>::zeros(self.tau.len());
        for (i, &t) in self.tau.iter().enumerate() {
            let e = (-g * t).exp();
            let eb = (-gb * t).exp();
            let (s, c) = (w * t).sin_cos();
            let osc = a * c + b * s;
            j[(i, 0)] = -t * e * osc;
            j[(i, 1)] = e * t * (-a * s + b * c);
            j[(i, 2)] = -t * d * eb;
            j[(i, 3)] = e * c;
            j[(i, 4)] = e * s;
            j[(i, 5)] = 1.0;
            j[(i, 6)] = eb;
        }
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

/// Fits the damped-sinusoid model to a uniformly sampled trace.
pub fn fit_damped_sinusoid(t: &[f64], y: &[f64]) -> Result<DampedSinusoid, FitError> {
    check_uniform(t)?;
    if t.len() != y.len() {
        return Err(FitError::TooShort(t.len().min(y.len())));
    }
    let span = t[t.len() - 1] - t[0];
    let t0 = t[0];
    let omega0 = spectral_peak(t, y)? * span;

    let mut problem = Problem {
        tau: t.iter().map(|x| (x - t0) / span).collect(),
        y: y.to_vec(),
        p: Vector::<f64, U7, Owned<f64, U7>>::zeros(),
    };

    let mut best: Option<(f64, [f64; 7], bool)> = None;
    for &g0 in &[0.0, 0.5, 2.0, 6.0] {
        for &gb0 in &[0.5, 3.0] {
            let Some((coef, cost0)) = problem.linear_solve(g0, omega0, gb0) else {
                continue;
            };
            let start = [g0, omega0, gb0, coef[0], coef[1], coef[2], coef[3]];
            if best.as_ref().is_none_or(|b| cost0 < b.0) {
                best = Some((cost0, start, true));
            }
            problem.p = Vector::<f64, U7, Owned<f64, U7>>::from(start);
            let (solved, _report) = LevenbergMarquardt::new().with_patience(200).minimize(problem);
            problem = solved;
            if let Some(r) = problem.residuals() {
                let cost = r.norm_squared();
                if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.0) {
                    best = Some((cost, <[f64; 7]>::from(problem.p), false));
                }
            }
        }
    }
    let (cost, [g, w, gb, a, b, c, d], fallback) = best.ok_or(FitError::NoOscillation)?;
    let fit = DampedSinusoid {
        decay_rate: g / span,
        angular_frequency: w.abs() / span,
        background_rate: gb / span,
        cos_amplitude: a,
        sin_amplitude: if w < 0.0 { -b } else { b },
        offset: c,
        background_amplitude: d,
        rms_residual: (cost / y.len() as f64).sqrt(),
        spectral_fallback: fallback,
    };
    // a zero residual (exact synthetic data) is always acceptable
    if !(fit.amplitude() >= MIN_AMPLITUDE_TO_RESIDUAL * fit.rms_residual) || fit.amplitude() == 0.0 {
        return Err(FitError::LowAmplitude {
            amplitude: fit.amplitude(),
            residual: fit.rms_residual,
        });
    }
    // a drift fitted as a fraction of a period is not a frequency measurement
    let periods = w.abs() / std::f64::consts::TAU;
    if periods < 1.0 {
        return Err(FitError::TooFewPeriods(periods));
    }
    Ok(fit)
}
