# %% Simulate the stabilized two-mode example and identify it with EM
import numpy as np

from ncrsm.acceptance import stabilized_example1
from ncrsm.em import EmConfig, run
from ncrsm.metrics import match_rate, param_error, rel_state_error
from ncrsm.model import spectral_stability_hint
from ncrsm.simulate import simulate_model

p = stabilized_example1()
print(spectral_stability_hint(p))

traj = simulate_model(p, 10_000, seed=0)
print("output variance:", np.var(traj.y))

# %% Identify from outputs only
rep = run(traj.y, (traj.x_c0, traj.x_aT1), p.dims, EmConfig(seed=0, restarts=3, ascent_guard=True))
print("stop:", rep.stop_reason, "iters:", rep.n_iters, "loglik:", rep.final_loglik)

# %% Score against the truth (labels are matched up to permutation)
err = param_error(p, rep.final_params)
for row in err.table():
    print(row)
a = rep.final_assignment
print("causal match:", match_rate(traj.seq_true.s_c, a.s_c_hat, p.dims.m_c))
print("anticausal match:", match_rate(traj.seq_true.s_a, a.s_a_hat, p.dims.m_a))
print("delta_c:", rel_state_error(traj.x_c_true, rep.final_filter.x_c_hat))
print("delta_a:", rel_state_error(traj.x_a_true, rep.final_filter.x_a_hat))
