# %% How well can the causal mode be read off, even knowing every state?
# Classify each step by MAP using the true states and true anticausal modes.
import numpy as np
from scipy.stats import multivariate_normal

from ncrsm.acceptance import stabilized_example1
from ncrsm.metrics import match_rate
from ncrsm.model import example1_params, spectral_radius
from ncrsm.simulate import simulate_model

for i, A in enumerate(example1_params().A_c):
    print(f"original causal mode {i + 1}: spectral radius {spectral_radius(A):.4f}")

p = stabilized_example1()
tr = simulate_model(p, 10_000, seed=0)
xc, xa, y, s_a = tr.x_c_true, tr.x_a_true, tr.y, tr.seq_true.s_a
prev = np.vstack([tr.x_c0, xc[:-1]])
out_a = np.einsum("tij,tj->ti", p.C_a[s_a], xa)

full = np.empty((tr.T, p.dims.m_c))
out_only = np.empty_like(full)
for i in range(p.dims.m_c):
    trans = multivariate_normal(cov=p.Sigma_c[i]).logpdf(xc - prev @ p.A_c[i].T)
    out = multivariate_normal(cov=p.Sigma_m).logpdf((y - xc @ p.C_c[i].T - out_a).reshape(tr.T, -1))
    full[:, i] = np.log(p.pi_c[i]) + trans + out
    out_only[:, i] = np.log(p.pi_c[i]) + out

print("MAP causal match (states + outputs):", match_rate(tr.seq_true.s_c, full.argmax(1), p.dims.m_c))
print("MAP causal match (outputs only):   ", match_rate(tr.seq_true.s_c, out_only.argmax(1), p.dims.m_c))
