import sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
phase = pd.read_csv(f"{d}/phase_spectrum.csv", comment="#")
shift = pd.read_csv(f"{d}/light_shift.csv", comment="#")
fig, (a, b) = plt.subplots(2, 1, sharex=True)
a.plot(phase.detuning_mhz, phase.phi_up_rad_per_od, label="|4,0>")
a.plot(phase.detuning_mhz, phase.phi_down_rad_per_od, label="|3,0>")
a.set_ylabel("phase per OD (rad)")
a.legend()
b.plot(shift.detuning_mhz, shift.delta_u_khz)
b.set_ylim(-50, 50)
b.set_xlabel("detuning from F=4 -> F'=4 (MHz)")
b.set_ylabel("dU (kHz)")
fig.savefig(f"{d}/spectra.png", dpi=150)
