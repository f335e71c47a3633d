//! Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.
//!
//! Criteria that cannot be met by a faithful model are listed in
//! `KNOWN_FAILURES`; they still print FAIL, but do not fail the run. Any
//! other failure exits nonzero.

use std::time::{Duration, Instant};

use clockprobe::birefringence::{cloud_at_od, per_state_phase, projection_noise_snr};
use clockprobe::dynamics::{propagate, InitialState, Liouvillian, MicrowaveConfig};
use clockprobe::ensemble::{
    argmax_detuning, decay_time, peak_center, sweep_measurement_strength, InhomogeneityConfig, SweepPoint,
};
use clockprobe::lightshift::{find_magic_detunings, two_color_balance};
use clockprobe::{dipole_element, CsD1Constants, GroundState, HalfInt, ProbeConfig, Scenario, TimeGrid};
use clockprobe_cli::commands::scenario;
use clockprobe_cli::presets::preset;
use clockprobe_cli::{execute, Command, OutputSet};

/// `(id, reason)`; the analysis is in the README.
const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "4c",
        "pi light cannot drive |4,0> -> |4',0>, so at theta = 0 dU has no pole at F'=4 and no zero in the window",
    ),
    (
        "1b",
        "dU has a single zero between the F=4 lines; the second zero lies between the F=3 lines",
    ),
    (
        "8b",
        "absolute projection-noise SNR depends on a detection chain the model does not know",
    ),
];

struct Report {
    unexpected: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, what: &str, pass: bool, detail: String) {
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let verdict = match (pass, known) {
            (true, None) => "PASS".to_string(),
            (true, Some(_)) => "PASS (listed as a known failure; update the list)".to_string(),
            (false, Some((_, why))) => format!("FAIL (known: {why})"),
            (false, None) => {
                self.unexpected.push(id.to_string());
                "FAIL".to_string()
            }
        };
        println!("[{id:>3}] {verdict:<6} {what}: {detail}");
    }

    fn runtime(&mut self, id: &str, elapsed: Duration, budget: Duration) {
        self.check(
            id,
            &format!("runtime < {budget:?}"),
            elapsed < budget,
            format!("{elapsed:.2?}"),
        );
    }
}

fn atom() -> CsD1Constants {
    CsD1Constants::default()
}

fn table(out: &OutputSet, name: &str) -> Vec<csv::StringRecord> {
    let bytes = out.get(name).unwrap_or_else(|| panic!("missing output {name}"));
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes);
    r.records().map(|x| x.expect("csv row")).collect()
}

fn magic(theta: f64) -> f64 {
    find_magic_detunings(theta, (-1168.0, 0.0), &atom()).unwrap()[0].detuning_mhz
}

fn magic_point(r: &mut Report) {
    let t = Instant::now();
    let roots = find_magic_detunings(45.0, (-1168.0, 0.0), &atom()).unwrap();
    let elapsed = t.elapsed();
    let near = roots.iter().find(|m| (m.detuning_mhz + 335.0).abs() <= 5.0);
    r.check(
        "1a",
        "magic root at -335 +- 5 MHz for theta = 45 deg",
        near.is_some(),
        format!("roots {:?} MHz", roots.iter().map(|m| m.detuning_mhz).collect::<Vec<_>>()),
    );
    r.check(
        "1b",
        "exactly 2 roots in (-1168, 0) MHz",
        roots.len() == 2,
        format!("{} root(s)", roots.len()),
    );
    r.runtime("1c", elapsed, Duration::from_secs(1));
}

fn phase_prefactor(r: &mut Report) {
    let t = Instant::now();
    let a = atom();
    let delta = -a.excited_hf_splitting_mhz / 2.0;
    let od = 1.0;
    let probe = ProbeConfig::new(delta, 1.0, 45.0).unwrap();
    let full = per_state_phase(GroundState::clock_upper(), &probe, &a, od).unwrap();
    let closed = 5.0 / 96.0 * od / (delta / a.gamma_mhz) * 2.0;
    let rel = (full / closed - 1.0).abs();
    r.check(
        "2a",
        "|4,0> phase at -Delta_HF/2 vs (5/96) OD/(Delta/Gamma) * 2 within 2%",
        rel <= 0.02,
        format!("{full:.6e} vs {closed:.6e} rad (rel {rel:.2e})"),
    );
    r.runtime("2b", t.elapsed(), Duration::from_secs(1));
}

fn selection_rule(r: &mut Report) {
    let h = HalfInt::integer;
    let forbidden = dipole_element(h(4), h(0), h(4), h(0), 0).unwrap().amplitude;
    r.check("3a", "4,0 -> 4',0 pi element is exactly zero", forbidden == 0.0, format!("{forbidden:e}"));

    let mut sums = Vec::new();
    for f in [3, 4] {
        for m in -f..=f {
            let mut s = 0.0;
            for fe in [3, 4] {
                for q in -1..=1 {
                    let me: i32 = m + q;
                    if me.abs() <= fe {
                        s += dipole_element(h(f), h(m), h(fe), h(me), q).unwrap().amplitude.powi(2);
                    }
                }
            }
            sums.push(s);
        }
    }
    let spread = sums.iter().cloned().fold(f64::MIN, f64::max) - sums.iter().cloned().fold(f64::MAX, f64::min);
    r.check(
        "3b",
        "line-strength sum uniform over the 16 sublevels to 1e-12",
        sums.len() == 16 && spread <= 1e-12,
        format!("spread {spread:.2e}"),
    );
}

fn chevron(r: &mut Report) {
    let t = Instant::now();
    let cfg = preset("fig3").unwrap();
    let chi = cfg.microwave.rabi_khz;
    let out = execute(Command::Chevron, &cfg, 0).unwrap();
    let elapsed = t.elapsed();
    let rows = table(&out, "chevron.csv");
    let m = magic(45.0);

    let mut worst: f64 = 0.0;
    let mut measured = 0;
    let mut failed = 0;
    let mut at_magic = None;
    for row in &rows {
        let d: f64 = row[0].parse().unwrap();
        match &row[1] {
            "ok" => {
                let omega: f64 = row[2].parse().unwrap();
                let analytic: f64 = row[4].parse().unwrap();
                worst = worst.max((omega - analytic).abs() / omega);
                measured += 1;
                if d == m {
                    at_magic = Some(omega / chi);
                }
            }
            "masked" => {}
            _ => failed += 1,
        }
    }
    r.check(
        "4a",
        "Omega(Delta) = sqrt(chi^2 + dU^2) within 2% over the masked window",
        worst <= 0.02 && failed == 0 && measured >= 40,
        format!("{measured} points, {failed} failed, worst deviation {worst:.4}"),
    );
    let ratio = at_magic.unwrap_or(f64::NAN);
    r.check(
        "4b",
        "Omega(Delta_M) = chi within 1%",
        (ratio - 1.0).abs() <= 0.01,
        format!("Omega/chi = {ratio:.5}"),
    );
    let thetas = table(&out, "magic_vs_theta.csv");
    let ends_ok = [thetas.first(), thetas.last()].iter().all(|row| {
        row.map(|x| &x[1] == "ok" && x[2].parse::<f64>().is_ok_and(|d| d > -1168.0 && d < 0.0))
            .unwrap_or(false)
    });
    r.check(
        "4c",
        "magic detuning finite inside the window at theta = 0 and 90 deg",
        ends_ok,
        {
            let show = |row: Option<&csv::StringRecord>| match row {
                Some(x) if &x[1] == "ok" => format!("theta {} deg: {} MHz", &x[0], &x[2]),
                Some(x) => format!("theta {} deg: {}", &x[0], &x[1]),
                None => "missing".into(),
            };
            let first_root = thetas.iter().find(|x| &x[1] == "ok");
            format!(
                "{}; {}; smallest angle with a root: {}",
                show(thetas.first()),
                show(thetas.last()),
                show(first_root)
            )
        },
    );
    r.runtime("4d", elapsed, Duration::from_secs(600));
}

fn leakage_scenario(bias_field_g: f64) -> Scenario {
    let a = atom();
    Scenario {
        probe: Some(ProbeConfig::new(magic(45.0), 16.0, 45.0).unwrap()),
        microwave: MicrowaveConfig::default(),
        bias_field_g,
        od: 2.2,
        pumping: false,
        extra_loss_rate_per_s: 0.0,
        initial: InitialState::DressedClockLower,
        grid: TimeGrid::new(5e-3, 5e-6).unwrap(),
        atom: a,
    }
}

fn bias_decoupling(r: &mut Report) {
    let t = Instant::now();
    let worst = |b: f64| {
        let l = leakage_scenario(b).clock_leakage().unwrap();
        (
            l.iter().map(|x| x.1).fold(0.0, f64::max),
            l.iter().map(|x| x.2).fold(0.0, f64::max),
        )
    };
    let (with_field, with_field_bare) = worst(0.5);
    let (no_field, _) = worst(0.0);
    r.check(
        "5a",
        "B = 0.5 G, no pumping: leakage out of the clock states < 1e-3 over 5 ms",
        with_field < 1e-3,
        format!("{with_field:.2e} (bare-basis population outside |3,0>,|4,0>: {with_field_bare:.2e})"),
    );
    r.check("5b", "B = 0: leakage exceeds 1e-2", no_field > 1e-2, format!("{no_field:.2e}"));
    r.runtime("5c", t.elapsed(), Duration::from_secs(60));
}

fn magic_scenario(rate: f64, loss: f64, duration_s: f64) -> Scenario {
    let a = atom();
    let probe = ProbeConfig::new(magic(45.0), 1.0, 45.0)
        .unwrap()
        .with_scattering_rate(rate, &a)
        .unwrap();
    Scenario {
        probe: Some(probe),
        microwave: MicrowaveConfig::default(),
        bias_field_g: 0.5,
        od: 2.5,
        pumping: true,
        extra_loss_rate_per_s: loss,
        initial: InitialState::ClockLower,
        grid: TimeGrid::new(duration_s, 5e-6).unwrap(),
        atom: a,
    }
}

fn decay_physics(r: &mut Report) {
    let t = Instant::now();
    let rates = [1.0 / 0.8e-3, 1.0 / 1.6e-3, 1.0 / 3.2e-3, 1.0 / 6.4e-3];
    let products: Vec<f64> = rates
        .iter()
        .map(|&rate| decay_time(&magic_scenario(rate, 0.0, 6.0 / rate).run().unwrap()).unwrap() * rate)
        .collect();
    let mean = products.iter().sum::<f64>() / products.len() as f64;
    let spread = products.iter().map(|p| (p / mean - 1.0).abs()).fold(0.0, f64::max);
    r.check(
        "6a",
        "tau_d * scattering rate constant within 5% (loss and inhomogeneity off)",
        spread <= 0.05,
        format!("tau_d*R = {products:.4?}"),
    );

    // decay rate versus scattering rate with the extra loss on; intercept at R -> 0
    let loss = 1.0 / 2.5e-3;
    let low = [1.0 / 3.2e-3, 1.0 / 6.4e-3, 1.0 / 12.8e-3];
    let gammas: Vec<f64> = low
        .iter()
        .map(|&rate| 1.0 / decay_time(&magic_scenario(rate, loss, 5.0 / (rate + loss)).run().unwrap()).unwrap())
        .collect();
    let n = low.len() as f64;
    let (mx, my) = (low.iter().sum::<f64>() / n, gammas.iter().sum::<f64>() / n);
    let slope = low.iter().zip(&gammas).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / low.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let intercept = my - slope * mx;
    r.check(
        "6b",
        "decay rate -> (2.5 ms)^-1 within 5% as scattering -> 0",
        (intercept / loss - 1.0).abs() <= 0.05,
        format!("intercept {intercept:.2} /s vs {loss:.2} /s"),
    );
    r.runtime("6c", t.elapsed(), Duration::from_secs(300));
}

/// Returns the pn_snr at the eta^2 peak for criterion 8.
fn fig4_shape(r: &mut Report) -> Option<(f64, f64, f64)> {
    let t = Instant::now();
    let cfg = preset("fig4").unwrap();
    let a = &cfg.atom;
    let probe = cfg.resolved_probe().unwrap();
    let rate = cfg.probe.scattering_rate_per_s.unwrap();
    let base = scenario(&cfg, probe).unwrap();
    let m = magic(45.0);

    let mut detunings: Vec<f64> = (0..22).map(|k| -1100.0 + 50.0 * k as f64).collect();
    detunings.extend((0..15).map(|k| -400.0 + 10.0 * k as f64));
    detunings.sort_by(f64::total_cmp);
    detunings.dedup();

    let spread = cfg.inhomogeneity(0);
    let flat = InhomogeneityConfig {
        probe_irradiance_rms_frac: 0.0,
        ..spread.clone()
    };
    let with_spread = sweep_measurement_strength(&detunings, &base, &cfg.cloud, rate, &spread).unwrap();
    let without = sweep_measurement_strength(&detunings, &base, &cfg.cloud, rate, &flat).unwrap();
    let elapsed = t.elapsed();

    let failures = |p: &[SweepPoint]| p.iter().filter(|x| matches!(x, SweepPoint::Failed { .. })).count();
    let tau_peak = peak_center(&with_spread, |f| f.tau_d_s).unwrap_or(f64::NAN);
    let eta_peak = peak_center(&with_spread, |f| f.eta_sq).unwrap_or(f64::NAN);
    let tau_grid = argmax_detuning(&with_spread, |f| f.tau_d_s).unwrap_or(f64::NAN);
    let eta_grid = argmax_detuning(&with_spread, |f| f.eta_sq).unwrap_or(f64::NAN);
    r.check(
        "7a",
        "tau_d(Delta) and eta^2(Delta) peak (half-maximum centre) at Delta_M +- 15 MHz",
        (tau_peak - m).abs() <= 15.0 && (eta_peak - m).abs() <= 15.0,
        format!(
            "tau_d {tau_peak:.1} MHz, eta^2 {eta_peak:.1} MHz (grid maxima {tau_grid} / {eta_grid}), Delta_M {m:.2} MHz, {} failed points",
            failures(&with_spread)
        ),
    );
    let contrast = |p: &[SweepPoint]| {
        let taus: Vec<f64> = p.iter().filter_map(SweepPoint::figure).map(|f| f.tau_d_s).collect();
        taus.iter().cloned().fold(f64::MIN, f64::max) / taus.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (c_spread, c_flat) = (contrast(&with_spread), contrast(&without));
    r.check(
        "7b",
        "removing the 15% irradiance spread flattens tau_d max/min by >= 2x",
        c_spread / c_flat >= 2.0 && failures(&without) == 0,
        format!("max/min {c_spread:.2} with spread, {c_flat:.3} without"),
    );
    r.runtime("7c", elapsed, Duration::from_secs(900));

    let best = with_spread
        .iter()
        .filter_map(SweepPoint::figure)
        .max_by(|x, y| x.eta_sq.total_cmp(&y.eta_sq))?;
    let p = cfg.probe_at(best.detuning_mhz).unwrap().with_scattering_rate(rate, a).unwrap();
    let far = projection_noise_snr(&cloud_at_od(&cfg.cloud, 1000.0), &p, a, best.tau_d_s).unwrap();
    Some((best.pn_snr, far, cfg.cloud.od_resonant))
}

fn scaling_laws(r: &mut Report, fig4: Option<(f64, f64, f64)>) {
    let Some((near, far, od)) = fig4 else {
        r.check("8a", "projection-noise SNR available", false, "no measured sweep point".into());
        return;
    };
    let ratio = far / near;
    r.check(
        "8a",
        &format!("pn_snr(OD = 1000) / pn_snr(OD = {od}) = 20 +- 0.5"),
        (ratio - 20.0).abs() <= 0.5,
        format!("{ratio:.4}"),
    );
    r.check(
        "8b",
        "absolute pn_snr at the measurement-strength peak within 2x of 0.2",
        near >= 0.1 && near <= 0.4,
        format!("{near:.4}"),
    );
}

fn hygiene(r: &mut Report) {
    let mut s = magic_scenario(1.0 / 0.8e-3, 1.0 / 2.5e-3, 10e-3);
    s.microwave.inhomogeneity_frac = 0.0;
    let generator = Liouvillian::new(&s.hamiltonian().unwrap(), &s.jumps().unwrap(), s.extra_loss_rate_per_s).unwrap();
    let grid = s.grid.resolving(generator.step_limit_s());
    let mut drift_per_ms: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    propagate(&s.initial_state().unwrap(), &generator, &grid, |t, rho| {
        if t > 0.0 {
            let d = (rho.trace() + rho.lost_population - 1.0).abs();
            drift_per_ms = drift_per_ms.max(d / (t * 1e3));
        }
        min_eig = min_eig.min(rho.min_eigenvalue());
    })
    .unwrap();
    r.check(
        "9a",
        "trace + lost population conserved to 1e-9 per ms",
        drift_per_ms <= 1e-9,
        format!("{drift_per_ms:.2e} per ms over 10 ms"),
    );
    r.check("9b", "smallest eigenvalue >= -1e-9", min_eig >= -1e-9, format!("{min_eig:.2e}"));

    let coarse = s.run().unwrap();
    let fine = s.run_refined(1).unwrap();
    let scale = coarse.signal_rad.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let mut change: f64 = 0.0;
    for i in 0..coarse.len() {
        change = change
            .max((coarse.s3[i] - fine.s3[i]).abs())
            .max((coarse.lost[i] - fine.lost[i]).abs())
            .max((coarse.signal_rad[i] - fine.signal_rad[i]).abs() / scale);
    }
    r.check(
        "9c",
        "halving the step changes observables by < 1e-6",
        change < 1e-6,
        format!("{change:.2e} (s3, lost; signal relative to its peak)"),
    );

    let cfg = preset("fig2c").unwrap();
    let a = execute(Command::Rabi, &cfg, 7).unwrap();
    let b = execute(Command::Rabi, &cfg, 7).unwrap();
    let names: Vec<&str> = a.names().collect();
    let same = names.iter().all(|n| a.get(n) == b.get(n)) && names.len() == b.names().count();
    r.check(
        "9d",
        "identical config and seed give byte-identical outputs",
        same,
        format!("{} files compared", names.len()),
    );
}

fn two_color(r: &mut Report) {
    let a = atom();
    let eps = 1e-6;
    let b = two_color_balance(
        (a.resonance_mhz(3, 3) + eps, a.resonance_mhz(3, 4) - eps),
        (a.resonance_mhz(4, 3) + eps, a.resonance_mhz(4, 4) - eps),
        45.0,
        &a,
    );
    match b {
        Ok(b) => {
            let residual = b.total_phase(0.5, 2.5, 45.0, &a).unwrap();
            r.check(
                "10a",
                "two-color phase at S3 = 0 is 0 +- 1e-6 rad",
                residual.abs() <= 1e-6,
                format!("{residual:.2e} rad at OD 2.5"),
            );
            r.check(
                "10b",
                "component phases have opposite signs",
                b.phase_34_per_od * b.phase_44_per_od < 0.0,
                format!("{:.4e} / {:.4e} rad per OD", b.phase_34_per_od, b.phase_44_per_od),
            );
        }
        Err(e) => r.check("10a", "two-color balance", false, e.to_string()),
    }
}

fn main() {
    let mut r = Report { unexpected: Vec::new() };
    magic_point(&mut r);
    phase_prefactor(&mut r);
    selection_rule(&mut r);
    bias_decoupling(&mut r);
    two_color(&mut r);
    decay_physics(&mut r);
    hygiene(&mut r);
    chevron(&mut r);
    let fig4 = fig4_shape(&mut r);
    scaling_laws(&mut r, fig4);

    if r.unexpected.is_empty() {
        println!("acceptance: all criteria met except the known failures");
    } else {
        println!("acceptance: unexpected failures: {}", r.unexpected.join(", "));
        std::process::exit(1);
    }
}
