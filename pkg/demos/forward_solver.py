"""Forward problem: solve div(sigma grad u) = 0 and watch the error shrink.

The fixture sigma = (1 + x)^-2 has the exact potential u = (1 + x)^3 / 3 for
matching boundary data, so halving h should cut the max error by about 4.
"""

import numpy as np

from cdilab import DomainGrid, ScalarField
from cdilab.forward import current_density, solve


def main():
    prev = None
    for n in (32, 64, 128):
        g = DomainGrid("square", n)
        sigma = ScalarField.from_function(g, lambda x, y: (1 + x) ** -2)
        u, rep = solve(sigma, lambda x, y: (1 + x) ** 3 / 3)
        err = np.abs(u.values - (1 + g.x) ** 3 / 3)[g.domain].max()
        note = "" if prev is None else f"  (ratio {prev / err:.2f})"
        print(f"n = {n:4d}  CG iterations {rep.iterations:4d}  max error {err:.3e}{note}")
        prev = err
    J = current_density(sigma, u)
    print(f"current density at the centre: ({J.x[n // 2, n // 2]:.4f}, {J.y[n // 2, n // 2]:.4f}); exact -1")


if __name__ == "__main__":
    main()
