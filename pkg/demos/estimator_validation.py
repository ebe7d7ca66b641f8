"""Online identification of two reference surfaces.

A finger presses into a stiff and a soft surface along a sinusoid while
sliding at constant speed.  The dual EKF estimates stiffness, damping and
friction from the noisy encoder and force readings.  The script prints the
true values next to the estimates averaged over the last ten seconds, and a
coarse time course of the stiffness estimate.

    python demos/estimator_validation.py [--seed N]
"""
import argparse
import time

import numpy as np

from haptest.exploration import ActionSpec, default_catalog, run_trial


def window_mean(rec, series, t0=10.0, t1=20.0):
    sel = (rec.t >= t0) & (rec.t <= t1 + 1e-9)
    return float(np.mean(series[sel]))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    catalog = default_catalog()
    print(f"{'surface':<8} {'quantity':<10} {'true':>9} {'estimate':>9} {'error':>7}")
    for surface in (catalog[0], catalog[10]):
        t0 = time.perf_counter()
        rec = run_trial(surface, ActionSpec.validation(), seed=args.seed)
        elapsed = time.perf_counter() - t0
        rows = [("stiffness", surface.stiffness, window_mean(rec, rec.theta_hat[:, 1])),
                ("damping", surface.viscosity, window_mean(rec, rec.theta_hat[:, 2])),
                ("friction", surface.friction, window_mean(rec, rec.mu_hat))]
        for quantity, true, est in rows:
            print(f"{surface.name:<8} {quantity:<10} {true:>9.3f} {est:>9.3f} {100 * (est - true) / true:>6.1f}%")
        print(f"{'':<8} simulated 20 s in {elapsed:.1f} s")

        print(f"{'':<8} stiffness estimate over time:", end="")
        for t in (0.5, 1, 2, 5, 10, 20):
            k = rec.theta_hat[int(round(t / 1e-3)) - 1, 1]
            print(f"  {t:g}s={k:.0f}", end="")
        print("\n")


if __name__ == "__main__":
    main()
