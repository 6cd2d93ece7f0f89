"""Second-order forward-mode jets layered on tape scalars.

A Jet2 carries a value and its first and pure second spatial derivatives
(v, dx, dy, dxx, dyy) with respect to the two input coordinates.  Every
component is a TapeScalar, so an expression propagated through a jet stays
differentiable with respect to network parameters: forward mode supplies the
spatial derivatives, the tape's reverse sweep supplies parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tape import Tape, TapeScalar, UnsupportedPrimitiveError

__all__ = ["Jet2", "jet_eval", "seed_xy"]


@dataclass
class Jet2:
    v: TapeScalar
    dx: TapeScalar
    dy: TapeScalar
    dxx: TapeScalar
    dyy: TapeScalar

    # -- construction --------------------------------------------------------

    @staticmethod
    def constant(tape: Tape, value) -> "Jet2":
        z = tape.constant(np.zeros_like(np.asarray(value, dtype=float)))
        return Jet2(tape.constant(value), z, z, z, z)

    @staticmethod
    def seed_x(tape: Tape, x) -> "Jet2":
        x = np.asarray(x, dtype=float)
        one = tape.constant(np.ones_like(x))
        zero = tape.constant(np.zeros_like(x))
        return Jet2(tape.constant(x), one, zero, zero, zero)

    @staticmethod
    def seed_y(tape: Tape, y) -> "Jet2":
        y = np.asarray(y, dtype=float)
        one = tape.constant(np.ones_like(y))
        zero = tape.constant(np.zeros_like(y))
        return Jet2(tape.constant(y), zero, one, zero, zero)

    @property
    def tape(self) -> Tape:
        return self.v.tape

    def values(self):
        return (self.v.value, self.dx.value, self.dy.value,
                self.dxx.value, self.dyy.value)

    # -- ring operations -------------------------------------------------------

    def _coerce(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(self.tape, other)

    def __add__(self, other):
        o = self._coerce(other)
        return Jet2(self.v + o.v, self.dx + o.dx, self.dy + o.dy,
                    self.dxx + o.dxx, self.dyy + o.dyy)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Jet2(self.v - o.v, self.dx - o.dx, self.dy - o.dy,
                    self.dxx - o.dxx, self.dyy - o.dyy)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __neg__(self):
        return Jet2(-self.v, -self.dx, -self.dy, -self.dxx, -self.dyy)

    def __mul__(self, other):
        # Leibniz: (uw)' = u'w + uw', (uw)'' = u''w + 2u'w' + uw'' per axis
        o = self._coerce(other)
        u, w = self, o
        return Jet2(
            u.v * w.v,
            u.dx * w.v + u.v * w.dx,
            u.dy * w.v + u.v * w.dy,
            u.dxx * w.v + 2.0 * (u.dx * w.dx) + u.v * w.dxx,
            u.dyy * w.v + 2.0 * (u.dy * w.dy) + u.v * w.dyy,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        return self * o._reciprocal()

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def _reciprocal(self) -> "Jet2":
        # 1/w: d = -w'/w^2, dd = (2w'^2 - w w'')/w^3 per axis
        w = self.v
        inv = 1.0 / w
        inv2 = inv * inv
        inv3 = inv2 * inv
        return Jet2(
            inv,
            -self.dx * inv2,
            -self.dy * inv2,
            (2.0 * (self.dx * self.dx) - w * self.dxx) * inv3,
            (2.0 * (self.dy * self.dy) - w * self.dyy) * inv3,
        )

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise UnsupportedPrimitiveError(
                f"power-by-integer is the only supported power; got {n!r}"
            )
        n = int(n)
        if n == 0:
            return Jet2.constant(self.tape, np.ones_like(self.v.value))
        f = self.v ** n
        f1 = float(n) * self.v ** (n - 1)
        if n == 1:
            f2 = self.tape.constant(np.zeros_like(self.v.value))
        else:
            f2 = float(n * (n - 1)) * self.v ** (n - 2)
        return self._chain(f, f1, f2)

    # -- unary elementwise maps -------------------------------------------------

    def _chain(self, f: TapeScalar, f1: TapeScalar, f2) -> "Jet2":
        # phi(u): d = phi'(u) u', dd = phi''(u) u'^2 + phi'(u) u'' per axis
        return Jet2(
            f,
            f1 * self.dx,
            f1 * self.dy,
            f2 * (self.dx * self.dx) + f1 * self.dxx,
            f2 * (self.dy * self.dy) + f1 * self.dyy,
        )

    def tanh(self):
        t = self.v.tanh()
        s = 1.0 - t * t
        return self._chain(t, s, -2.0 * (t * s))

    def exp(self):
        e = self.v.exp()
        return self._chain(e, e, e)

    def sin(self):
        s = self.v.sin()
        c = self.v.cos()
        return self._chain(s, c, -s)

    def cos(self):
        c = self.v.cos()
        s = self.v.sin()
        return self._chain(c, -s, -c)

    def sigmoid(self):
        s = self.v.sigmoid()
        s1 = s * (1.0 - s)
        return self._chain(s, s1, s1 * (1.0 - 2.0 * s))

    def silu(self):
        return self * self.sigmoid()

    def apply(self, primitive: str) -> "Jet2":
        """Apply a named unary primitive; unknown names raise a hard error."""
        fn = _UNARY.get(primitive)
        if fn is None:
            raise UnsupportedPrimitiveError(
                f"unsupported primitive {primitive!r}; supported: "
                f"{sorted(_UNARY)} and the ring operations"
            )
        return fn(self)


_UNARY: dict[str, Callable[[Jet2], Jet2]] = {
    "tanh": Jet2.tanh,
    "exp": Jet2.exp,
    "sin": Jet2.sin,
    "cos": Jet2.cos,
    "sigmoid": Jet2.sigmoid,
    "silu": Jet2.silu,
}


def seed_xy(tape: Tape, x, y) -> tuple[Jet2, Jet2]:
    """Seed the two input coordinates: x -> (x,1,0,0,0), y -> (y,0,1,0,0)."""
    return Jet2.seed_x(tape, x), Jet2.seed_y(tape, y)


def jet_eval(f: Callable[[Jet2, Jet2], Jet2], x, y, tape: Tape | None = None) -> Jet2:
    """Evaluate f and its spatial derivatives (f, f_x, f_y, f_xx, f_yy) at (x, y).

    `f` must be composed solely of supported primitives; its parameters, if
    any, are bound by the caller (e.g. functools.partial).  The returned jet
    components are TapeScalars differentiable with respect to any parameter
    leaves `f` touched on the same tape.
    """
    if tape is None:
        tape = Tape()
    xj, yj = seed_xy(tape, x, y)
    out = f(xj, yj)
    if not isinstance(out, Jet2):
        raise TypeError("jet_eval target must return a Jet2")
    return out
