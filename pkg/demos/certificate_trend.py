"""Bounds on lambda_c and lambda_u for the one-mark Boolean model as L grows.

The lower bound on lambda_u decays like 1/|Phi_L| while the upper bound on
lambda_c decays like 1/L; once L is large enough the two separate.
"""
import math

from hyprcm import models as m
from hyprcm import thresholds as th


def main():
    print(f"{'L':>10} {'lambda_c <=':>12} {'lambda_u >=':>12} {'|Phi|/|D|':>10}  gap")
    for k in range(0, 25, 2):
        L = 2.0 ** k
        model = m.AdjacencyModel(3, m.MarkSpace.single(1.0), m.BooleanDisc(), m.VolumeLinear(3, L))
        tb = th.certify_nonuniqueness(model, math.pi / 2, math.pi / 12, with_triangle=False)
        ratio = tb.metadata["norm_2to2"] / tb.metadata["degree_norm_2to2"]
        print(f"{L:10.0f} {tb.lambda_c_upper:12.4e} {tb.lambda_u_lower:12.4e} {ratio:10.4f}  {tb.gap_certified}")


if __name__ == "__main__":
    main()
