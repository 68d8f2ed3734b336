"""Library-level tour: ground state, unstable mode, and one threshold solution.

Run with ``python3 demos/threshold_walkthrough.py``; takes well under a minute.
"""

import numpy as np

from nls3lab import MassTriple, ground_state
from nls3lab.evolution import EvolutionConfig
from nls3lab.linearized import assemble, coercivity_min
from nls3lab.special import verify_special
from nls3lab.spectrum import compute_lambda1, witness_negative_direction
from nls3lab.states import balanced_grid, functionals, gn_constant

masses = MassTriple(1.0, 1.0, 3.0)
grid = balanced_grid(512)
gs = ground_state(masses, grid, discrete=True)
rep = functionals(gs.Qvec, masses, gs)
print(f"K={rep.K:.6f}  P={rep.P:.6f}  K-4P={rep.nehari:.2e}  gn_ratio/G_S={rep.gn_ratio / gn_constant(masses):.6f}")

ops = assemble(masses, grid, gs)
print("smallest L_I eigenvalues (Hdot^1-relative):", np.round(coercivity_min(ops, "LI", k=4), 5))
pair = compute_lambda1(ops)
print(f"lambda1={pair.lambda1:.6f}  residuals {pair.residual_r:.1e}/{pair.residual_i:.1e}  witness {witness_negative_direction(ops):.4f}")

sc = verify_special(-1.0, 6, pair, ops, cfg=EvolutionConfig(dt=0.05, sample_every=10), seed_tol=1e-10 * gs.K, forward_periods=4, run_backward=False)
print(f"threshold run a=-1: delta decays at {sc.forward['delta_rate_over_lambda1']:.3f} lambda1 ({sc.label})")
