"""Offline scores on replayed logs versus live performance.

A replay suite is built from mu_s's own logs. Every policy is scored there by
R/R* and then run in the live market. The replay never rejects a bid at the
rough stage and never reacts to a changed bid, so rankings drift. Any pair whose
order flips between the two columns is an inversion.

Run: python demos/04_iboo.py   (about 1 minute)
"""
from sorl.approx import compute_precision
from sorl.cli import ExperimentConfig, iboo_policies
from sorl.ddpg import DdpgConfig, train_safe_policy
from sorl.market import Market, MarketConfig, simulate
from sorl.vas import build_vas_suite, iboo_report

market = Market(MarketConfig.desk())
with compute_precision("float32"):
    safe = train_safe_policy(market, DdpgConfig.desk())
    pols = iboo_policies(ExperimentConfig(out_dir="/nonexistent"), safe.actor, seed=1)
    logs = simulate(market, safe.actor, list(range(11_000_000, 11_000_020)), record_impressions=True)
    rep = iboo_report(pols, build_vas_suite(logs), market, list(range(9_000_000, 9_000_100)))

print(f"{'policy':<14} {'replay R/R*':>11} {'rank':>5} {'live BuyCnt':>11} {'rank':>5}")
for r in rep.rows:
    print(f"{r.name:<14} {r.vas_score:>11.3f} {r.vas_rank:>5.0f} {r.sras_buycnt:>11.1f} {r.sras_rank:>5.0f}")
rho = "undefined" if rep.spearman is None else f"{rep.spearman:.3f}"
print(f"Spearman rank correlation {rho}, {rep.inversions()} inverted pairs")
