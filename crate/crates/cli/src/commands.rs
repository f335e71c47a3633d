//! Figure-reproduction subcommands. Each returns its outputs in memory.

use std::fmt::Write as _;

use rayon::prelude::*;

use clockprobe::birefringence::{cloud_at_od, photon_flux, projection_noise_snr, shot_noise_trace};
use clockprobe::dynamics::rabi_frequency;
use clockprobe::ensemble::{
    argmax_detuning, decay_time, ensemble_average, is_masked, peak_center, sweep_measurement_strength, SweepPoint,
};
use clockprobe::lightshift::{
    build_light_shift, check_detuning, differential_clock_shift, find_magic_detunings, reference_scattering_rate,
    two_color_balance,
};
use clockprobe::{MeasurementFigure, PhaseSpectrum, Scenario, SimRecord, TimeGrid};

use crate::config::{grid, linspace, magic_detuning, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, OutputSet, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Spectra,
    Rabi,
    Chevron,
    Measurement,
}

pub fn execute(cmd: Command, cfg: &RunConfig, seed: u64) -> Result<OutputSet, CliError> {
    match cmd {
        Command::Spectra => spectra(cfg),
        Command::Rabi => rabi(cfg, seed),
        Command::Chevron => chevron(cfg),
        Command::Measurement => measurement(cfg, seed),
    }
}

/// Scenario for the configured probe (or an explicit one).
pub fn scenario(cfg: &RunConfig, probe: clockprobe::ProbeConfig) -> Result<Scenario, CliError> {
    let s = &cfg.simulation;
    let mut grid = TimeGrid::new(s.duration_ms * 1e-3, s.sample_interval_us * 1e-6)?;
    grid.substep_doublings = s.substep_doublings;
    Ok(Scenario {
        atom: cfg.atom.clone(),
        probe: Some(probe),
        microwave: cfg.microwave.clone(),
        bias_field_g: cfg.cloud.bias_field_g,
        od: cfg.cloud.od_resonant,
        pumping: s.pumping,
        extra_loss_rate_per_s: s.extra_loss_rate_per_s,
        initial: s.initial_state.clone(),
        grid,
    })
}

/// Number of sign changes of a sequence, ignoring exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let signs: Vec<bool> = values.iter().filter(|v| **v != 0.0).map(|v| *v > 0.0).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn spectra(cfg: &RunConfig) -> Result<OutputSet, CliError> {
    let atom = &cfg.atom;
    let theta = cfg.probe.polarization_angle_deg;
    let sp = &cfg.spectra;
    let detunings = grid(sp.start_mhz, sp.stop_mhz, sp.step_mhz);
    let reference = cfg.resolved_probe()?;

    let phases = PhaseSpectrum::compute(&detunings, theta, atom)?;
    let mut phase_table = Table::new(&["detuning_mhz", "phi_up_rad_per_od", "phi_down_rad_per_od"]);
    for i in 0..phases.len() {
        phase_table.push(vec![
            num(phases.detunings_mhz[i]),
            num(phases.phi_up_rad[i]),
            num(phases.phi_down_rad[i]),
        ]);
    }

    let rows: Vec<Option<Vec<String>>> = detunings
        .par_iter()
        .map(|&d| {
            check_detuning(d, atom).ok()?;
            let ls = build_light_shift(&reference.with_detuning(d), atom).ok()?;
            let du = differential_clock_shift(&reference.with_detuning(d), atom).ok()?;
            Some(vec![num(d), num(du), num(ls.xi0_mhz), num(ls.xi1_mhz), num(ls.xi2_mhz)])
        })
        .collect();
    let mut shift_table = Table::new(&["detuning_mhz", "delta_u_khz", "xi0_mhz", "xi1_mhz", "xi2_mhz"]);
    let mut du_between_f4_lines = Vec::new();
    let (r43, r44) = (atom.resonance_mhz(4, 3), atom.resonance_mhz(4, 4));
    for row in rows.into_iter().flatten() {
        let d: f64 = row[0].parse().unwrap_or(f64::NAN);
        if d > r43 && d < r44 {
            du_between_f4_lines.push(row[1].parse().unwrap_or(f64::NAN));
        }
        shift_table.push(row);
    }

    let windows = [
        ("F=4", (r43, r44)),
        ("F=3", (atom.resonance_mhz(3, 3), atom.resonance_mhz(3, 4))),
    ];
    let mut magic_table = Table::new(&["window", "polarization_angle_deg", "detuning_mhz", "residual_du_khz"]);
    let mut summary = String::new();
    writeln!(summary, "probe polarization angle: {theta} deg").ok();
    writeln!(summary, "light-shift irradiance: {} I_sat", reference.irradiance_rel).ok();
    for (name, w) in windows {
        let roots = find_magic_detunings(theta, w, atom)?;
        writeln!(summary, "magic points between the {name} lines ({:.2}, {:.2}) MHz: {}", w.0, w.1, roots.len()).ok();
        for r in &roots {
            writeln!(summary, "  {:.3} MHz (|dU| = {:.2e} kHz)", r.detuning_mhz, r.residual_du_khz.abs()).ok();
            magic_table.push(vec![
                name.to_string(),
                num(r.polarization_angle_deg),
                num(r.detuning_mhz),
                num(r.residual_du_khz),
            ]);
        }
    }
    writeln!(
        summary,
        "sign changes of dU on the grid between the F=4 lines: {}",
        sign_changes(&du_between_f4_lines)
    )
    .ok();
    let eps = 1e-6;
    match two_color_balance(
        (windows[1].1 .0 + eps, windows[1].1 .1 - eps),
        (r43 + eps, r44 - eps),
        theta,
        atom,
    ) {
        Ok(b) => {
            let residual = b.total_phase(0.5, 1.0, theta, atom)?;
            writeln!(
                summary,
                "two-color balance: {:.3} MHz and {:.3} MHz, power ratio {:.6}, component phases {:.4e} / {:.4e} rad per OD, residual {:.1e} rad",
                b.detuning_34_mhz, b.detuning_44_mhz, b.power_ratio, b.phase_34_per_od, b.phase_44_per_od, residual
            )
            .ok();
        }
        Err(e) => {
            writeln!(summary, "two-color balance: {e}").ok();
        }
    }

    let mut out = OutputSet::default();
    out.add_table("phase_spectrum.csv", &phase_table)?;
    out.add_table("light_shift.csv", &shift_table)?;
    out.add_table("magic_points.csv", &magic_table)?;
    out.add_text("summary.txt", summary);
    if cfg.output.plot_scripts {
        out.add_text("plot_spectra.py", PLOT_SPECTRA.to_string());
    }
    Ok(out)
}

fn run_configured(cfg: &RunConfig, scenario: &Scenario, seed: u64) -> Result<SimRecord, CliError> {
    let inhomog = cfg.inhomogeneity(seed);
    if inhomog.is_homogeneous() {
        Ok(scenario.run()?)
    } else {
        Ok(ensemble_average(scenario, &inhomog)?)
    }
}

fn rabi(cfg: &RunConfig, seed: u64) -> Result<OutputSet, CliError> {
    let probe = cfg.resolved_probe()?;
    let sc = scenario(cfg, probe.clone())?;
    let record = run_configured(cfg, &sc, seed).map_err(|e| e.context("rabi simulation"))?;

    let mut out = OutputSet::default();
    out.add_record("rabi.csv", &record)?;

    let mut summary = String::new();
    writeln!(summary, "probe detuning: {:.3} MHz, irradiance {:.4} I_sat", probe.detuning_mhz, probe.irradiance_rel).ok();
    writeln!(
        summary,
        "reference scattering rate: {:.2} /s",
        reference_scattering_rate(&probe, &cfg.atom)?
    )
    .ok();
    writeln!(summary, "initial signal: {:.6e} rad", record.signal_rad.first().copied().unwrap_or(0.0)).ok();
    // a record without a readable oscillation is a failed run
    let omega = rabi_frequency(&record)?;
    let tau = decay_time(&record)?;
    writeln!(summary, "rabi frequency: {omega:.4} kHz").ok();
    writeln!(summary, "decay time: {:.4} ms", tau * 1e3).ok();

    if cfg.output.shot_noise {
        let flux = photon_flux(&probe, &cfg.atom, &cfg.cloud);
        let noisy = shot_noise_trace(&record.signal_rad, flux, sc.grid.sample_interval_s, seed)?;
        let mut t = Table::new(&["time_s", "signal_rad", "noisy_signal_rad"]);
        for i in 0..record.len() {
            t.push(vec![num(record.times_s[i]), num(record.signal_rad[i]), num(noisy[i])]);
        }
        out.add_table("rabi_shot_noise.csv", &t)?;
        writeln!(summary, "detected photon flux: {flux:.4e} /s").ok();
    }
    out.add_text("summary.txt", summary);
    if cfg.output.plot_scripts {
        out.add_text("plot_rabi.py", PLOT_RABI.to_string());
    }
    Ok(out)
}

fn chevron(cfg: &RunConfig) -> Result<OutputSet, CliError> {
    let atom = &cfg.atom;
    let ch = &cfg.chevron;
    let chi = cfg.microwave.rabi_khz;
    let magic = cfg.resolved_detuning_mhz()?;
    let mut detunings = linspace(ch.start_mhz, ch.stop_mhz, ch.points);
    if magic > ch.start_mhz && magic < ch.stop_mhz {
        detunings.push(magic);
        detunings.sort_by(f64::total_cmp);
    }

    let rows: Vec<Vec<String>> = detunings
        .par_iter()
        .map(|&d| {
            if is_masked(d, atom) {
                return vec![num(d), "masked".into(), String::new(), String::new(), String::new(), String::new()];
            }
            let point = || -> Result<(f64, f64), CliError> {
                let probe = cfg.probe_at(d)?;
                let du = differential_clock_shift(&probe, atom)?;
                let record = scenario(cfg, probe)?.run()?;
                Ok((rabi_frequency(&record)?, du))
            };
            match point() {
                Ok((omega, du)) => {
                    let analytic = (chi * chi + (du - cfg.microwave.detuning_khz).powi(2)).sqrt();
                    vec![num(d), "ok".into(), num(omega), num(du), num(analytic), num(omega / chi)]
                }
                Err(e) => vec![
                    num(d),
                    format!("failed: {e}"),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
            }
        })
        .collect();
    let mut table = Table::new(&[
        "detuning_mhz",
        "status",
        "omega_khz",
        "delta_u_khz",
        "omega_analytic_khz",
        "omega_over_chi",
    ]);
    for r in rows {
        table.push(r);
    }

    let thetas = linspace(ch.theta_start_deg, ch.theta_stop_deg, ch.theta_points);
    let magic_rows: Vec<Vec<String>> = thetas
        .par_iter()
        .map(|&th| match magic_detuning(th, atom) {
            Ok(d) => vec![num(th), "ok".into(), num(d)],
            Err(e) => vec![num(th), format!("failed: {e}"), String::new()],
        })
        .collect();
    let mut theta_table = Table::new(&["polarization_angle_deg", "status", "magic_detuning_mhz"]);
    for r in magic_rows {
        theta_table.push(r);
    }

    let mut summary = String::new();
    writeln!(summary, "microwave Rabi frequency chi: {chi} kHz").ok();
    writeln!(summary, "magic detuning: {magic:.3} MHz").ok();
    let omega = table.column("omega_khz").unwrap_or_default();
    let analytic = table.column("omega_analytic_khz").unwrap_or_default();
    let worst = omega
        .iter()
        .zip(&analytic)
        .filter(|(o, a)| o.is_finite() && a.is_finite())
        .map(|(o, a)| (o - a).abs() / o)
        .fold(0.0, f64::max);
    writeln!(summary, "largest relative deviation from sqrt(chi^2 + dU^2): {worst:.4}").ok();
    if let Some(i) = detunings.iter().position(|&d| d == magic) {
        writeln!(summary, "omega/chi at the magic detuning: {}", opt_num(omega.get(i).map(|o| o / chi))).ok();
    }

    let mut out = OutputSet::default();
    out.add_table("chevron.csv", &table)?;
    out.add_table("magic_vs_theta.csv", &theta_table)?;
    out.add_text("summary.txt", summary);
    if cfg.output.plot_scripts {
        out.add_text("plot_chevron.py", PLOT_CHEVRON.to_string());
    }
    Ok(out)
}

fn sweep_table(points: &[SweepPoint]) -> Table {
    let mut t = Table::new(&[
        "detuning_mhz",
        "status",
        "tau_d_ms",
        "omega_khz",
        "eta",
        "eta_sq",
        "pn_snr",
    ]);
    for p in points {
        let mut row = vec![num(p.detuning_mhz())];
        match p {
            SweepPoint::Measured(m) => {
                row.push("ok".into());
                row.extend([num(m.tau_d_s * 1e3), num(m.omega_khz), num(m.eta), num(m.eta_sq), num(m.pn_snr)]);
            }
            SweepPoint::Masked { .. } => {
                row.push("masked".into());
                row.extend(std::iter::repeat_n(String::new(), 5));
            }
            SweepPoint::Failed { reason, .. } => {
                row.push(format!("failed: {reason}"));
                row.extend(std::iter::repeat_n(String::new(), 5));
            }
        }
        t.push(row);
    }
    t
}

fn measurement(cfg: &RunConfig, seed: u64) -> Result<OutputSet, CliError> {
    let atom = &cfg.atom;
    let m = &cfg.measurement;
    let probe = cfg.resolved_probe()?;
    let magic = magic_detuning(probe.polarization_angle_deg, atom)?;
    let rate = reference_scattering_rate(&probe, atom)?;
    let detunings = grid(m.start_mhz, m.stop_mhz, m.step_mhz);
    let inhomog = cfg.inhomogeneity(seed);
    let base = scenario(cfg, probe.clone())?;

    let mut variants = vec![("measurement.csv", base.clone())];
    if base.extra_loss_rate_per_s > 0.0 {
        variants.push((
            "measurement_no_loss.csv",
            Scenario {
                extra_loss_rate_per_s: 0.0,
                ..base.clone()
            },
        ));
    }

    let mut out = OutputSet::default();
    let mut summary = String::new();
    writeln!(summary, "magic detuning: {magic:.3} MHz").ok();
    writeln!(summary, "reference scattering rate: {rate:.2} /s").ok();
    for (name, sc) in variants {
        let points = sweep_measurement_strength(&detunings, &sc, &cfg.cloud, rate, &inhomog)?;
        out.add_table(name, &sweep_table(&points))?;
        writeln!(summary, "[{name}] extra loss {} /s", sc.extra_loss_rate_per_s).ok();
        for (label, key) in [("tau_d", (|f: &MeasurementFigure| f.tau_d_s) as fn(&MeasurementFigure) -> f64), ("eta^2", |f| f.eta_sq)] {
            writeln!(
                summary,
                "  {label} peak: half-maximum centre {} MHz, largest grid value at {} MHz",
                opt_num(peak_center(&points, key)),
                opt_num(argmax_detuning(&points, key))
            )
            .ok();
        }
        let best = points
            .iter()
            .filter_map(SweepPoint::figure)
            .max_by(|a, b| a.eta_sq.total_cmp(&b.eta_sq));
        if let Some(f) = best {
            let p = cfg.probe_at(f.detuning_mhz)?.with_scattering_rate(rate, atom)?;
            let far = projection_noise_snr(&cloud_at_od(&cfg.cloud, m.extrapolate_od), &p, atom, f.tau_d_s)?;
            writeln!(summary, "  peak eta^2: {:.6e} (tau_d {:.4} ms)", f.eta_sq, f.tau_d_s * 1e3).ok();
            writeln!(summary, "  projection-noise SNR at OD {}: {:.4}", cfg.cloud.od_resonant, f.pn_snr).ok();
            writeln!(summary, "  projection-noise SNR at OD {}: {:.4}", m.extrapolate_od, far).ok();
            writeln!(summary, "  ratio: {:.4}", far / f.pn_snr).ok();
        }
        let failed = points.iter().filter(|p| matches!(p, SweepPoint::Failed { .. })).count();
        if failed > 0 {
            writeln!(summary, "  {failed} points failed; see the status column").ok();
        }
    }
    out.add_text("summary.txt", summary);
    if cfg.output.plot_scripts {
        out.add_text("plot_measurement.py", PLOT_MEASUREMENT.to_string());
    }
    Ok(out)
}

const PLOT_SPECTRA: &str = include_str!("../plots/plot_spectra.py");
const PLOT_RABI: &str = include_str!("../plots/plot_rabi.py");
const PLOT_CHEVRON: &str = include_str!("../plots/plot_chevron.py");
const PLOT_MEASUREMENT: &str = include_str!("../plots/plot_measurement.py");
