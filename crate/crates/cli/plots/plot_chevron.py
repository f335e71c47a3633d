import sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
ch = pd.read_csv(f"{d}/chevron.csv", comment="#")
th = pd.read_csv(f"{d}/magic_vs_theta.csv", comment="#")
ch = ch[ch.status == "ok"]
fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
a.plot(ch.detuning_mhz, ch.omega_khz, "o", label="master equation")
a.plot(ch.detuning_mhz, ch.omega_analytic_khz, "-", label="sqrt(chi^2 + dU^2)")
a.set_xlabel("probe detuning (MHz)")
a.set_ylabel("Rabi frequency (kHz)")
a.legend()
b.plot(th.polarization_angle_deg, th.magic_detuning_mhz, "o-")
b.set_xlabel("polarization angle (deg)")
b.set_ylabel("magic detuning (MHz)")
fig.savefig(f"{d}/chevron.png", dpi=150)
