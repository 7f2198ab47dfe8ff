"""Probability that a search window contains a useful relay.

With fresh peers the probability depends only on the window length.
Compares the closed form for fixed-interval schedules with a Monte Carlo
estimate, then shows the random-interval family where only the estimate exists.

    python3 demos/relay_probability.py
"""
from fedmobile.analysis import FixedInterval, RandomInterval, agreement_z, q_analytic_fixed_interval, q_meet_monte_carlo

TRIALS = 50_000

print(f"{'kind':<9}{'rho':>5}{'window':>10}{'analytic':>10}{'monte carlo':>14}{'z':>6}")
for kind in ("upload", "download"):
    for rho in (0.1, 0.5):
        for window in ((25, 25), (20, 30), (0, 50)):
            q = q_analytic_fixed_interval(kind, 50, rho, window)
            est, se = q_meet_monte_carlo(kind, FixedInterval(50), rho, window, trials=TRIALS, seed=1)
            z = agreement_z(est, se, q, TRIALS)
            print(f"{kind:<9}{rho:>5}{str(window):>10}{q:>10.4f}{est:>10.4f}±{se:.3f}{z:>6.2f}")

print("\nrandom intervals in [30, 50], rho=0.5 (no closed form):")
for kind in ("upload", "download"):
    for window in ((25, 25), (20, 30), (0, 50)):
        est, se = q_meet_monte_carlo(kind, RandomInterval(30, 50), 0.5, window, trials=TRIALS, seed=2)
        print(f"  {kind:<9}{str(window):>10}  q~{est:.4f}±{se:.3f}")
