"""Linear confounding: OLS is pulled away from the true effect, IV is not.

    python demos/iv_demo.py
"""

from isaiv.causal_linear import ScmConfig, estimate_iv, estimate_ols, ols_bias_plim, simulate_scm

print("w_cy  omega_iv  omega_ols  predicted_ols_bias")
for w_cy in (0.0, 1.0, 5.0, -3.0):
    cfg = ScmConfig(omega=3.0, w_cy=w_cy, w_cx=1.0, n=50_000, seed=7)
    s = simulate_scm(cfg)
    iv = estimate_iv(s.z, s.x, s.y).omega_hat
    ols = estimate_ols(s.x, s.y).omega_hat
    print(f"{w_cy:4.1f}  {iv:8.4f}  {ols:9.4f}  {ols_bias_plim(cfg):+.4f}")
