# =============================================================================
# 02 - Response functions R_ij(tau)
#
# R_ij(tau) = <r_i(t,tau) e_j(t)> - <r_i(t,tau)><e_j(t)>: how much stock i's
# midpoint moves tau seconds after a signed trade in stock j. i = j is the
# self-response, i != j the cross-response. Seconds with e_j = 0 can be kept
# (include-zero) or dropped (exclude-zero).
# =============================================================================

import numpy as np

from impactlab.estimators import (
    average_days, response_fast, response_pair_day,
)
from impactlab.grids import default_lags
from impactlab.synth import ImpactKernel, SynthConfig, gen_prices, gen_signs

cfg = SynthConfig(
    n_symbols=2, n_days=6, seed=7,
    metaorder_rate=0.008, metaorder_length_exponent=1.5,
    length_min=3, length_max=150, participation=0.7,
    impact=ImpactKernel(g0=0.01, tau0=15.0, beta=0.6),
    cross_coupling=0.3, noise_std=0.0005,
    open_s=10 * 3600, close_s=10 * 3600 + 3600,
)
truth = gen_signs(cfg)
series = gen_prices(truth)
lags = default_lags(20, 1, 600)
A, B = cfg.symbols

# -----------------------------------------------------------------------------
# 1. One symbol-day, naive reference vs vectorized fast path.
# -----------------------------------------------------------------------------
date = truth.dates[0]
mid_a = series[(A, date)]
signs_a = truth.data[(A, date)].sign_series
naive = response_pair_day(mid_a, signs_a, lags, "exclude_zero")
fast = response_fast(mid_a, signs_a, lags, "exclude_zero")
worst = np.nanmax(np.abs(naive.value - fast.value)
                  / np.maximum(np.abs(naive.value), 1e-300))
print(f"naive vs fast, worst relative difference: {worst:.2e} (must be < 1e-12)")

# -----------------------------------------------------------------------------
# 2. Average the per-day curves, self and cross, both zero-handling modes.
# -----------------------------------------------------------------------------
def day_avg(i, j, mode):
    curves = [
        response_fast(series[(i, d)], truth.data[(j, d)].sign_series, lags, mode)
        for d in truth.dates
    ]
    return average_days(curves)

self_ex = day_avg(A, A, "exclude_zero")
self_in = day_avg(A, A, "include_zero")
cross_ex = day_avg(A, B, "exclude_zero")

print(f"\n{'tau':>6} {'self excl':>12} {'self incl':>12} {'cross excl':>12}")
for k in range(0, len(lags), 3):
    print(f"{lags[k]:>6} {self_ex.value[k]:>12.3e} "
          f"{self_in.value[k]:>12.3e} {cross_ex.value[k]:>12.3e}")

print("\nobservations:")
print(" - the self-response rises over the first ~decade of lags, then bends")
print("   (the transient kernel lets the price relax);")
print(" - include-zero values are smaller in magnitude than exclude-zero;")
print(" - the cross-response exists only because the order flows are coupled.")

# -----------------------------------------------------------------------------
# 3. n_samples bookkeeping: how many days contributed per lag.
# -----------------------------------------------------------------------------
print("\ncontributing days per lag (self, exclude):",
      sorted(set(self_ex.n_samples.tolist())))
print("dispersion (std across days) at tau=1:", f"{self_ex.dispersion[0]:.2e}")
