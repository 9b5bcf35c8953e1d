"""Injectivity and stability regions on the unit disk.

With boundary data cos(theta) the potential is u = x. Level lines are
vertical, streamlines horizontal. Keeping only the left half of the circle
(minus 0.3 rad at each end) as accessible data leaves a region where both
the level line and the leftward streamline land on accessible boundary. Cutting
a gap around theta = pi keeps the level lines visible but blocks the
streamlines near y = 0, so the stability region shrinks.
"""

import numpy as np

from cdilab import BoundaryArcSet, DomainGrid, ScalarField
from cdilab.forward import solve
from cdilab.regions import stability_analysis


def show(title, arcs, g, v):
    res = stability_analysis(BoundaryArcSet.from_arcs(g, arcs), v)
    I, S = res.injectivity, res.region
    print(f"{title}: |I| = {I.measure:.3f}, |S| = {S.measure:.3f}, |S|/|I| = {S.measure / I.measure:.3f}")
    step = max(g.n_cells // 32, 1)
    for j in range(g.n_cells, -1, -2 * step):
        row = ""
        for i in range(0, g.n_cells + 1, step):
            row += "#" if S.mask[i, j] else ("+" if I.mask[i, j] else ("." if g.domain[i, j] else " "))
        print("   " + row)


def main():
    g = DomainGrid("disk", 64)
    u, _ = solve(ScalarField.constant(g, 1.0), lambda x, y: x)
    v = u + u
    a = 0.3
    show("connected arc", [(np.pi / 2 + a, 3 * np.pi / 2 - a)], g, v)
    show("split arc", [(np.pi / 2 + a, np.pi - a), (np.pi + a, 3 * np.pi / 2 - a)], g, v)
    print("legend: # stability region, + injectivity only, . rest of the disk")


if __name__ == "__main__":
    main()
