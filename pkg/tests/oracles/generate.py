"""Regenerate ``frozen.json``: reference values computed without the package.

* Fourier integrals of the Gaussian bump over the unit square, from the
  closed form of the 1-D integral through the complex error function.
* The torsion function (``-Delta w = 1``, ``w = 0`` on the boundary) from
  its double sine series.
* Bell numbers by the Bell triangle.
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import erf

BUMP = {"center": [0.5, 0.5], "width": 0.15, "amplitude": 1.0}


def gauss_fourier_1d(c, w, k):
    """int_0^1 exp(-(x - c)^2 / (2 w^2)) exp(i k x) dx."""
    s = w * math.sqrt(2.0)
    shift = 1j * k * w * w
    pref = math.sqrt(math.pi / 2) * w * np.exp(1j * k * c - 0.5 * k * k * w * w)
    upper = (1 - c - shift) / s
    lower = (0 - c - shift) / s
    return pref * (erf(upper) - erf(lower))


def bump_fourier(xi):
    cx, cy = BUMP["center"]
    w = BUMP["width"]
    return BUMP["amplitude"] * gauss_fourier_1d(cx, w, 2 * xi[0]) * gauss_fourier_1d(cy, w, 2 * xi[1])


def torsion(x, y, terms=401):
    total = 0.0
    for m in range(1, terms, 2):
        for n in range(1, terms, 2):
            total += 16.0 / (math.pi**4 * m * n * (m * m + n * n)) * math.sin(m * math.pi * x) * math.sin(n * math.pi * y)
    return total


def bell(count):
    row, out = [1], [1]
    for _ in range(count - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
        out.append(row[0])
    return out


def main():
    lattice = [(math.pi * a, math.pi * b) for a in range(-2, 3) for b in range(-2, 3) if a * a + b * b <= 4]
    fourier = [{"xi": list(xi), "re": float(bump_fourier(xi).real), "im": float(bump_fourier(xi).imag)} for xi in lattice]
    pts = [(i / 8, j / 8) for i in range(1, 8) for j in range(1, 8)]
    tors = [{"x": x, "y": y, "w": torsion(x, y)} for x, y in pts]
    data = {"bump": BUMP, "bump_fourier": fourier, "torsion": tors, "bell": bell(9)}
    Path(__file__).with_name("frozen.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
