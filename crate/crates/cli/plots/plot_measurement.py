import os, sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
fig, (a, b) = plt.subplots(2, 1, sharex=True)
for name, style in [("measurement.csv", "-"), ("measurement_no_loss.csv", "--")]:
    if not os.path.exists(f"{d}/{name}"):
        continue
    m = pd.read_csv(f"{d}/{name}", comment="#")
    m = m[m.status == "ok"]
    a.plot(m.detuning_mhz, m.tau_d_ms, style, label=name)
    b.plot(m.detuning_mhz, m.eta_sq, style)
a.set_ylabel("tau_d (ms)")
a.legend()
b.set_ylabel("eta^2")
b.set_xlabel("probe detuning (MHz)")
fig.savefig(f"{d}/measurement.png", dpi=150)
