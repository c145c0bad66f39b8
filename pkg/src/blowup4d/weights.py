"""Vectorised weight functions k(x) on R^4."""

import numpy as np


class Weight:
    """A real function of four coordinates, evaluated with numpy broadcasting.

    ``fn`` receives the four coordinate arrays ``(x1, x2, x3, x4)``; they only
    need to be broadcast-compatible, which lets grid evaluation use open 1D
    axes instead of a dense ``n^4 x 4`` point array.
    """

    def __init__(self, fn, label="k"):
        self._fn = fn
        self.label = label

    def __call__(self, points):
        p = np.asarray(points, dtype=float)
        out = self._fn(p[..., 0], p[..., 1], p[..., 2], p[..., 3])
        return np.broadcast_to(np.asarray(out, dtype=float), p.shape[:-1]).copy()

    def on_grid(self, grid):
        out = self._fn(*grid.open_axes())
        return np.broadcast_to(np.asarray(out, dtype=float), grid.shape).copy()

    def scaled(self, c):
        fn = self._fn
        return Weight(lambda a, b, d, e: c * fn(a, b, d, e), label="%g*(%s)" % (c, self.label))

    def __repr__(self):
        return "Weight(%s)" % self.label


def constant(c=1.0):
    c = float(c)
    return Weight(lambda a, b, d, e: np.full(np.broadcast(a, b, d, e).shape, c), label=repr(c))


def as_weight(k):
    """Coerce a number, a ``Weight`` or a parsed expression to a ``Weight``."""
    if isinstance(k, Weight):
        return k
    if isinstance(k, (int, float)):
        return constant(k)
    to_weight = getattr(k, "to_weight", None)
    if to_weight is not None:
        return to_weight()
    raise TypeError("cannot use %r as a weight function" % (k,))
