# =============================================================================
# 04 - Sector-level aggregation
#
# Pair curves roll up three ways: market averages (self / cross, and the
# intra- vs inter-sector split of the cross pairs), per-stock passive and
# active responses, and the sector-sorted normalized response matrix.
# =============================================================================

import numpy as np

from impactlab.aggregation import (
    active_curve, market_average, normalized_matrix, passive_curve,
)
from impactlab.estimators import average_days, response_fast
from impactlab.grids import default_lags
from impactlab.synth import ImpactKernel, SynthConfig, gen_prices, gen_signs, round_robin_sectors

# -----------------------------------------------------------------------------
# 1. A 12-symbol universe -> the bundled ten GICS sectors, two symbols deep
#    in the first two.
# -----------------------------------------------------------------------------
cfg = SynthConfig(
    n_symbols=12, n_days=4, seed=11,
    metaorder_rate=0.01, metaorder_length_exponent=1.6,
    length_min=3, length_max=120, participation=0.7,
    impact=ImpactKernel(g0=0.01, tau0=15.0, beta=0.4),
    cross_coupling=0.15, noise_std=0.0005,
    open_s=10 * 3600, close_s=10 * 3600 + 1800,
)
truth = gen_signs(cfg)
series = gen_prices(truth)
smap = round_robin_sectors(cfg.symbols)
print("sectors:", {s: smap.sector_of(s) for s in cfg.symbols[:4]}, "...")

lags = default_lags(16, 1, 300)
curves = {}
for i in cfg.symbols:
    for j in cfg.symbols:
        curves[(i, j)] = average_days([
            response_fast(series[(i, d)], truth.data[(j, d)].sign_series,
                          lags, "exclude_zero")
            for d in truth.dates
        ])

# -----------------------------------------------------------------------------
# 2. Market averages. The double mean (inner over j, outer over i) equals the
#    flat pair mean when every inner set has the same size.
# -----------------------------------------------------------------------------
m_self = market_average(curves, cfg.symbols, "self")
m_cross = market_average(curves, cfg.symbols, "cross")
intra = market_average(curves, cfg.symbols, "intra", smap)
inter = market_average(curves, cfg.symbols, "inter", smap)
k = 8
print(f"\nat tau={lags[k]}:")
print(f"  market self  {m_self.value[k]: .3e} (+- {m_self.dispersion[k]:.1e} across stocks)")
print(f"  market cross {m_cross.value[k]: .3e} (+- {m_cross.dispersion[k]:.1e} across pairs)")
print(f"  intra-sector {intra.value[k]: .3e}   inter-sector {inter.value[k]: .3e}")

# -----------------------------------------------------------------------------
# 3. Passive (who gets pushed) and active (who pushes) per-stock curves.
# -----------------------------------------------------------------------------
sym = cfg.symbols[0]
p = passive_curve(sym, curves, cfg.symbols).curve
a = active_curve(sym, curves, cfg.symbols).curve
print(f"\n{sym}: passive@tau={lags[k]} {p.value[k]:.3e}, active {a.value[k]:.3e}")
p_mean = np.mean([passive_curve(s, curves, cfg.symbols).curve.value
                  for s in cfg.symbols], axis=0)
print("mean of passive curves == market cross:",
      bool(np.max(np.abs(p_mean - m_cross.value)) < 1e-12))

# -----------------------------------------------------------------------------
# 4. Normalized response matrix at one lag, sector-sorted: the diagonal and
#    same-sector blocks stand out.
# -----------------------------------------------------------------------------
mat = normalized_matrix(curves, int(lags[k]), smap, cfg.symbols)
print(f"\nnormalized matrix at tau={mat.tau}, normalizer={mat.normalizer:.3e}")
print("ordering:", mat.ordering[:4], "...")
with np.printoptions(precision=2, suppress=True, linewidth=120):
    print(mat.rho[:6, :6])
print("max |rho| =", np.abs(mat.rho).max(), "(always 1 by construction)")
print("mean |diagonal| vs mean |off-diagonal|:",
      f"{np.abs(np.diag(mat.rho)).mean():.3f}",
      "vs",
      f"{np.abs(mat.rho[~np.eye(len(mat.ordering), dtype=bool)]).mean():.3f}")
