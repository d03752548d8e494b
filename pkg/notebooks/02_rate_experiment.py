# %% Estimation error versus record length with known modes and states
import numpy as np

from ncrsm.acceptance import stabilized_example1
from ncrsm.metrics import rate_bound, rate_experiment

grid = (500, 1000, 2000, 4000, 8000)
exp = rate_experiment(stabilized_example1(), grid, range(10))
print("failures:", len(exp.failures))

med = exp.median_error()
for T, e in zip(grid, med):
    print(f"T={T:5d}  median max|A err|={e:.4f}  bound={rate_bound(T):.4f}  ratio={e / rate_bound(T):.3f}")
print("ratio spread:", exp.ratio_spread())
print("decreasing fraction:", exp.decreasing_fraction())
exp.to_csv("rate.csv")

# %% Original example: every run diverges before a full record is drawn
from ncrsm.model import example1_params

bad = rate_experiment(example1_params(), (500, 1000, 2000), (0, 1))
print("failures:", len(bad.failures), "medians:", bad.median_error())
