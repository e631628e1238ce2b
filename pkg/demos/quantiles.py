"""Walkthrough: estimating upper quantiles of skewed data held by several centers.

Run with ``python demos/quantiles.py``.  Compares the three estimators on one
simulated federation against the exact mixture quantile.
"""

import math

from fedstat.binning import GroupedSample
from fedstat.runtime import make_federation, run_quantile_protocol
from fedstat.simulation import GammaSimConfig, gen_gamma_data, true_mixture_quantile

cfg = GammaSimConfig(r=4, phi=0.1, L=3, seed=3)
centers, alphas = gen_gamma_data(cfg, replicate=0)
samples = [GroupedSample(c, [], f"site{i}") for i, c in enumerate(centers)]
probs = [0.02, 0.5, 0.98]
truth = [true_mixture_quantile(alphas, cfg.center_sizes, cfg.r, p) for p in probs]

print("center sizes:", cfg.center_sizes, " center log-scales:", [round(a, 3) for a in alphas])
print(f"{'method':<12}" + "".join(f"Q{p:<10}" for p in probs) + "rounds  privacy")
print(f"{'truth':<12}" + "".join(f"{t:<11.4f}" for t in truth))
for method in ("loss", "yj-mle", "yj-mle-grid", "yj-table"):
    coord = make_federation(samples, k=10)
    est, _ = run_quantile_protocol(coord, method, probs)
    row = "".join(f"{e.value:<11.4f}" for e in est)
    print(f"{method:<12}{row}{est[0].communication_rounds:<8}{est[0].privacy_flag}")

print("\nNormalized error of the 0.98 quantile, (estimate - truth) / sqrt(r):")
for method in ("loss", "yj-mle", "yj-table"):
    est, _ = run_quantile_protocol(make_federation(samples, k=10), method, [0.98])
    print(f"  {method:<9}{(est[0].value - truth[2]) / math.sqrt(cfg.r):+.4f}")

print("\nA coordinator that refuses raw-value releases rejects the loss method:")
try:
    run_quantile_protocol(make_federation(samples, k=10, forbid_privacy_violating=True), "loss", [0.5])
except Exception as e:
    print("  refused:", e)
