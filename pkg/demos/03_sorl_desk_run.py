"""A full iterative run on the desk market: warm boot, then explore and retrain.

Each round explores around mu_s with SER guided by the latest critic. The new
round is added to the tagged dataset, and (mu_tau, Q_tau) are retrained with
V-CQL anchored to the previous critic. The table shows exploration safety
(V(pi_e) against mu_s on the same episodes), SER against vanilla, and the
learned policy's value and R/R* against the per-episode LP bound.

Run: python demos/03_sorl_desk_run.py [--iterations 5] [--seed 1] [--out runs/demo]
(about 4 minutes per seed on one core)
"""
import argparse

from sorl.approx import compute_precision
from sorl.ddpg import DdpgConfig, train_safe_policy
from sorl.explore import SerConfig
from sorl.loop import SorlConfig, run_sorl
from sorl.market import Market, MarketConfig
from sorl.vcql import VcqlConfig

ap = argparse.ArgumentParser()
ap.add_argument("--iterations", type=int, default=5)
ap.add_argument("--seed", type=int, default=1)
ap.add_argument("--out", default=None, help="optional directory for checkpoints and iterations.csv")
args = ap.parse_args()

market = Market(MarketConfig.desk(), cache_size=1000)
with compute_precision("float32"):
    safe = train_safe_policy(market, DdpgConfig.desk())
    state = run_sorl(market, safe.actor, safe.critic, SerConfig(), VcqlConfig.desk(),
                     SorlConfig(iterations=args.iterations), seed=args.seed, out_dir=args.out)

print(f"V(mu_s) on evaluation episodes: {state.v_safe_eval:.2f}")
print(f"{'tau':>3} {'V(pi_e)':>9} {'V(vanilla)':>10} {'V(mu_s) same eps':>16} {'V(mu_tau)':>9} {'R/R*':>6} gate")
for m in state.metrics:
    print(f"{m['tau']:>3} {m['v_explore']:>9.2f} {m['v_vanilla']:>10.2f} {m['v_safe_paired']:>16.2f} "
          f"{m['v_mu']:>9.2f} {m['rr_star']:>6.3f} {'ok' if m['safety_gate'] else 'VIOLATED'}")
