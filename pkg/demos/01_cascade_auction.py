"""Walk through one bidding step of the two-stage auction and its replayed counterpart.

Three impressions, one bid. The live market needs the bid to clear both the
rough stage (a * v1 >= p1) and the refined stage (a * v2 >= p2); the replay
built from logs only checks the refined stage, so it can report wins the live
system would never grant. That gap is why policies scored on replayed logs can
be ranked differently once they meet the real auction.

Run: python demos/01_cascade_auction.py
"""
from sorl.market import BidState, ImpressionOpportunity, MarketConfig, auction_step
from sorl.vas import VasLogEntry, vas_step

cfg = MarketConfig.desk()
imps = [
    # v1, v2, v, p1, p2, p (final value and price equal the refined-stage ones)
    ImpressionOpportunity(0.50, 0.60, 0.60, 6.0, 7.0, 7.0),    # clears both stages at a=15
    ImpressionOpportunity(0.20, 0.70, 0.70, 4.0, 9.0, 9.0),    # rough stage rejects it at a=15
    ImpressionOpportunity(0.90, 0.90, 0.90, 8.0, 12.0, 12.0),  # clears both; affordable only if impression 2 was skipped
]
state = BidState.initial(B=20.0, T=cfg.T)
bid = 15.0

live = auction_step(state, bid, imps, cfg)
print(f"bid {bid}, budget {state.budget_left}")
print(f"live auction:  won {live.won.astype(int).tolist()}  reward {live.reward:.2f}  cost {live.cost:.2f}")

entries = [VasLogEntry(t=0, v2=o.v2, p2=o.p2, v=o.v, p=o.p) for o in imps]
replay = vas_step(state, bid, entries, cfg)
print(f"replayed logs: won {replay.won.astype(int).tolist()}  reward {replay.reward:.2f}  cost {replay.cost:.2f}")
print("The replay skips the rough stage, so impression 2 looks winnable and the budget is spent differently.")
