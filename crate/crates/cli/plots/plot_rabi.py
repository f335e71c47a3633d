import os, sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
rec = pd.read_csv(f"{d}/rabi.csv", comment="#")
fig, ax = plt.subplots()
if os.path.exists(f"{d}/rabi_shot_noise.csv"):
    noisy = pd.read_csv(f"{d}/rabi_shot_noise.csv", comment="#")
    ax.plot(noisy.time_s * 1e3, noisy.noisy_signal_rad, lw=0.5, alpha=0.5)
ax.plot(rec.time_s * 1e3, rec.signal_rad)
ax.set_xlabel("time (ms)")
ax.set_ylabel("polarimeter signal (rad)")
fig.savefig(f"{d}/rabi.png", dpi=150)
