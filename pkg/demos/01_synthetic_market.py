# =============================================================================
# 01 - The synthetic market generator
#
# Everything in impactlab is validated against a generator with known ground
# truth: parent orders arrive at random, live for a power-law number of
# seconds, and emit child trades; prices react through a transient-impact
# kernel. Same seed, same bytes - always.
# =============================================================================

import numpy as np

from impactlab.synth import ImpactKernel, SynthConfig, gen_prices, gen_signs

# -----------------------------------------------------------------------------
# 1. Configure a tiny two-asset market: 30 minutes, two days.
# -----------------------------------------------------------------------------
cfg = SynthConfig(
    n_symbols=2,
    n_days=2,
    seed=1234,
    metaorder_rate=0.01,            # parent-order arrivals per second
    metaorder_length_exponent=1.6,  # heavy-ish tail of lifetimes
    length_min=3,
    length_max=200,
    participation=0.7,              # child-trade emission probability
    impact=ImpactKernel(g0=0.01, tau0=15.0, beta=0.6),
    cross_coupling=0.25,            # P(copy the other symbol's flow sign)
    noise_std=0.0005,
    open_s=10 * 3600,
    close_s=10 * 3600 + 1800,
)
cfg.validate()
print(f"universe: {cfg.symbols}, session length {cfg.session_len} s, "
      f"mean metaorder length {cfg.mean_length():.1f} s")

# -----------------------------------------------------------------------------
# 2. Generate signs, then prices. The truth object keeps both per symbol-day.
# -----------------------------------------------------------------------------
truth = gen_signs(cfg)
gen_prices(truth)

sym, date = cfg.symbols[0], truth.dates[0]
sd = truth.data[(sym, date)]
active = np.flatnonzero(sd.eps)
print(f"\n{sym} on {date}: {active.size} active seconds out of {cfg.session_len}")
print("first active seconds:", active[:8].tolist())
print("signs there:         ", sd.eps[active[:8]].tolist())

# -----------------------------------------------------------------------------
# 3. The impact kernel. beta = 0 would make every trade permanent; here the
#    bump decays like (1 + u/tau0)^-beta.
# -----------------------------------------------------------------------------
u = np.array([0, 1, 5, 15, 60, 300])
print("\nkernel G(u) for u =", u.tolist())
print("               ", np.round(truth.kernel[u], 6).tolist())

m = sd.midpoint
print(f"\nmidpoint starts at {m[0]:.2f}, ends at {m[-1]:.4f}, "
      f"range [{m.min():.4f}, {m.max():.4f}]")

# -----------------------------------------------------------------------------
# 4. Determinism: regenerate and compare bytes.
# -----------------------------------------------------------------------------
truth2 = gen_signs(cfg)
gen_prices(truth2)
same = all(
    np.array_equal(truth.data[k].eps, truth2.data[k].eps)
    and np.array_equal(truth.data[k].midpoint, truth2.data[k].midpoint)
    for k in truth.data
)
print("\nregenerated identically:", same)

# -----------------------------------------------------------------------------
# 5. The same market as CSV files (the exact schemas the ingest stage reads).
# -----------------------------------------------------------------------------
import tempfile
from impactlab.synth import emit_csv_universe

with tempfile.TemporaryDirectory() as td:
    written = emit_csv_universe(truth, td)
    print("\nCSV emission writes:")
    for path in written:
        print("  ", path.split("/")[-1])
    with open(written[0]) as fh:
        print("\nfirst trades rows:")
        for _ in range(4):
            print("  ", fh.readline().rstrip())
