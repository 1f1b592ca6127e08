"""Simulated cluster structure below and above the lambda_c upper bound (Boolean, H^3, L = 100)."""
import warnings

from hyprcm import models as m
from hyprcm import percolation as pc
from hyprcm import thresholds as th


def main(replicas=20):
    model = m.AdjacencyModel(3, m.MarkSpace.single(1.0), m.BooleanDisc(), m.VolumeLinear(3, 100.0))
    lam_c, theta, _ = th.scan_angles(model)
    print(f"lambda_c <= {lam_c:.4e} (theta = {theta:.3f})")
    warnings.simplefilter("ignore", RuntimeWarning)  # the connection range reaches the ball boundary
    for mult in (0.2, 1.0, 5.0):
        cfg = pc.PercConfig(model, mult * lam_c, 9.0, 3.0, 8.0, replicas=replicas, two_point=False)
        res = pc.run(cfg)
        frac, se = pc.largest_cluster_core_fraction(res)
        deg, _ = pc.core_mean_degree(res)
        cross = sum(r.crossing_clusters for r in res) / len(res)
        print(f"{mult:4.1f} x: core degree {deg:6.2f}  largest-cluster core fraction {frac:.3f} +- {se:.3f}"
              f"  crossing clusters {cross:6.1f}")


if __name__ == "__main__":
    main()
