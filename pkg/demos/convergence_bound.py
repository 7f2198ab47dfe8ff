"""Evaluating the convergence bound and its tuned step size.

    python3 demos/convergence_bound.py
"""
from dataclasses import replace

from fedmobile.analysis import BoundParams, theorem1_bound, theorem1_terms, theorem1_tuned_terms

p = BoundParams(theta=25, Theta=25, omega=25, Omega=25, delta=50, L=1.0, G=1.0, sigma=1.0,
                eta=1.0, T=100, N=10, f0_minus_fstar=1.0)
print(f"C={p.C} D={p.D}; terms={theorem1_terms(p)} bound={theorem1_bound(p)}")

print("\nthe staleness term grows with C and D; windows near the cycle middle are cheapest:")
for lo, hi in [(0, 10), (20, 30), (25, 25), (40, 50)]:
    q = replace(p, theta=lo, Theta=hi, omega=lo, Omega=hi, eta=0.1, T=10_000)
    print(f"  window [{lo},{hi}]  C={q.C:2d}  bound={theorem1_bound(q):.5g}")

print("\nwith eta = sqrt(N)/(L sqrt(T)) the first and third terms shrink like 1/sqrt(NT):")
for scale in (1, 4, 16):
    q = replace(p, T=1000 * scale, N=10 * scale)
    a, b, c = theorem1_tuned_terms(q)
    print(f"  N={q.N:4d} T={q.T:6d}  terms=({a:.5g}, {b:.5g}, {c:.5g})")
