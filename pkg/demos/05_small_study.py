"""
A desk-sized simulation study
=============================

Two generators, two magnitudes, a handful of spike counts. The same seed
gives the same report whatever the number of worker processes.
"""

from spikedetect import simlab

gens = simlab.load_generators()
configs = []
for name in ("los_angeles", "berkeley"):
    configs += simlab.grid(gens[name], magnitudes=(0.2, 0.5), counts=(1, 5, 10), replicates=20, seed=1)

report = simlab.run_grid(configs, workers=2)
print(report.summary_table())

for name in ("los_angeles", "berkeley"):
    line = ", ".join(f"{m} {100 * report.mean('mean_sensitivity', generator=name, method=m):.1f}"
                     for m in ("kalman", "arima", "wavelet", "ao"))
    print(f"{name}: mean sensitivity {line}")

with open("small_study.csv", "w", encoding="utf-8", newline="\n") as fh:
    fh.write(report.to_csv())
print("wrote small_study.csv")
