"""Tape-based reverse-mode automatic differentiation over scalars.

The tape is an append-only list of nodes; each node stores its opcode, its
value, and the local partial derivative w.r.t. each input node.  A single
reverse sweep accumulates adjoints in linear time.  Tapes are cheap,
single-use objects: build, sweep, discard.

Besides the generic primitives (add/sub/mul/div/neg/pow_int/exp/log/tanh/
sigmoid/select), the tape offers fused nodes for the oscillator unrolling
(`fhn_step`, `rate_step_smooth`).  A fused node is an ordinary node with
more than two inputs and analytically derived partials; it exists purely to
keep node counts low on long unrollings and changes nothing about the
reverse sweep.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

from .errors import DomainError, ValidationError


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> float:
        return self.tape._values[self.index]

    def __repr__(self) -> str:
        return f"Var({self.value!r} @ {self.index})"

    # -- arithmetic -------------------------------------------------------

    def _other(self, other) -> tuple[bool, float]:
        """Return (is_var, float_value) for the second operand."""
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return True, other.value
        return False, float(other)

    def __add__(self, other):
        t = self.tape
        is_var, ov = self._other(other)
        if is_var:
            return t._record("add", self.value + ov, ((self.index, 1.0), (other.index, 1.0)))
        return t._record("add", self.value + ov, ((self.index, 1.0),))

    __radd__ = __add__

    def __sub__(self, other):
        t = self.tape
        is_var, ov = self._other(other)
        if is_var:
            return t._record("sub", self.value - ov, ((self.index, 1.0), (other.index, -1.0)))
        return t._record("sub", self.value - ov, ((self.index, 1.0),))

    def __rsub__(self, other):
        t = self.tape
        return t._record("sub", float(other) - self.value, ((self.index, -1.0),))

    def __mul__(self, other):
        t = self.tape
        is_var, ov = self._other(other)
        if is_var:
            return t._record("mul", self.value * ov, ((self.index, ov), (other.index, self.value)))
        return t._record("mul", self.value * ov, ((self.index, ov),))

    __rmul__ = __mul__

    def __truediv__(self, other):
        t = self.tape
        is_var, ov = self._other(other)
        if ov == 0.0:
            raise DomainError("division by zero")
        if is_var:
            q = self.value / ov
            return t._record("div", q, ((self.index, 1.0 / ov), (other.index, -q / ov)))
        return t._record("div", self.value / ov, ((self.index, 1.0 / ov),))

    def __rtruediv__(self, other):
        t = self.tape
        if self.value == 0.0:
            raise DomainError("division by zero")
        q = float(other) / self.value
        return t._record("div", q, ((self.index, -q / self.value),))

    def __neg__(self):
        return self.tape._record("neg", -self.value, ((self.index, -1.0),))

    def __pow__(self, n):
        return powi(self, n)


class Tape:
    """Recorded scalar computation graph supporting one reverse sweep."""

    __slots__ = ("_ops", "_values", "_deps", "roots")

    def __init__(self):
        self._ops: list[str] = []
        self._values: list[float] = []
        self._deps: list[tuple] = []
        self.roots: list[int] = []

    def __len__(self) -> int:
        return len(self._values)

    def _record(self, op: str, value: float, deps: tuple) -> Var:
        self._ops.append(op)
        self._values.append(value)
        self._deps.append(deps)
        return Var(self, len(self._values) - 1)

    def leaf(self, value: float) -> Var:
        """Create a differentiable input node (registered as a root)."""
        v = self._record("leaf", float(value), ())
        self.roots.append(v.index)
        return v

    def const(self, value: float) -> Var:
        """Create a non-differentiable constant node."""
        return self._record("const", float(value), ())

    # -- fused oscillator nodes --------------------------------------------

    def fhn_step(self, v: Var, w: Var, p1: Var, p2: Var, p3: Var, amp: Var,
                 pulse: float, h: float) -> tuple[Var, Var]:
        """One forward-Euler step of the modified oscillator as two nodes.

        v' = v + h*(v - v^3/3 - p1*w*v + amp*pulse)
        w' = w + h*p2*(v - p3*w)

        pulse is the 0/1 drive mask at this step; partials are the exact
        derivatives of the update w.r.t. (v, w, p1, amp) and (v, w, p2, p3).
        """
        vals = self._values
        vv = vals[v.index]
        wv = vals[w.index]
        p1v = vals[p1.index]
        p2v = vals[p2.index]
        p3v = vals[p3.index]
        nv = vv + h * (vv - vv * vv * vv / 3.0 - p1v * wv * vv + vals[amp.index] * pulse)
        if pulse != 0.0:
            dv = ((v.index, 1.0 + h * (1.0 - vv * vv - p1v * wv)),
                  (w.index, -h * p1v * vv),
                  (p1.index, -h * wv * vv),
                  (amp.index, h * pulse))
        else:
            dv = ((v.index, 1.0 + h * (1.0 - vv * vv - p1v * wv)),
                  (w.index, -h * p1v * vv),
                  (p1.index, -h * wv * vv))
        new_v = self._record("fhn_v", nv, dv)
        nw = wv + h * p2v * (vv - p3v * wv)
        new_w = self._record(
            "fhn_w", nw,
            ((v.index, h * p2v),
             (w.index, 1.0 - h * p2v * p3v),
             (p2.index, h * (vv - p3v * wv)),
             (p3.index, -h * p2v * wv)),
        )
        return new_v, new_w

    def rate_step_smooth(self, acc: Var, v: Var, p4: Var, inv_temp: float) -> Var:
        """acc' = acc + v * sigmoid((v - p4) * inv_temp), as one node."""
        vals = self._values
        vv = vals[v.index]
        s = _sigmoid_value((vv - vals[p4.index]) * inv_temp)
        ds = s * (1.0 - s) * inv_temp
        return self._record(
            "rate_acc", vals[acc.index] + vv * s,
            ((acc.index, 1.0), (v.index, s + vv * ds), (p4.index, -vv * ds)),
        )

    # -- introspection helpers (used by tests) ------------------------------

    def dep_count(self) -> int:
        """Total number of (input, partial) entries across all nodes."""
        return sum(len(d) for d in self._deps)

    def check_topological(self) -> bool:
        return all(j < i for i, deps in enumerate(self._deps) for j, _ in deps)


def _sigmoid_value(z: float) -> float:
    if z >= 0.0:
        if z > 700.0:
            return 1.0
        e = math.exp(-z)
        return 1.0 / (1.0 + e)
    if z < -700.0:
        return 0.0
    e = math.exp(z)
    return e / (1.0 + e)


def _lift(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(float(x))


# -- unary primitives -------------------------------------------------------

def exp(x: Var) -> Var:
    try:
        v = math.exp(x.value)
    except OverflowError as err:
        raise DomainError(f"exp overflow at {x.value!r}") from err
    return x.tape._record("exp", v, ((x.index, v),))


def log(x: Var) -> Var:
    if x.value <= 0.0:
        raise DomainError(f"log of non-positive value {x.value!r}")
    return x.tape._record("log", math.log(x.value), ((x.index, 1.0 / x.value),))


def tanh(x: Var) -> Var:
    v = math.tanh(x.value)
    return x.tape._record("tanh", v, ((x.index, 1.0 - v * v),))


def sigmoid(x: Var) -> Var:
    s = _sigmoid_value(x.value)
    return x.tape._record("sigmoid", s, ((x.index, s * (1.0 - s)),))


def powi(x: Var, n: int) -> Var:
    """Integer power with derivative n*x^(n-1)."""
    n = int(n)
    if n == 0:
        return x.tape._record("pow_int", 1.0, ((x.index, 0.0),))
    if n < 0 and x.value == 0.0:
        raise DomainError("zero raised to a negative power")
    return x.tape._record("pow_int", x.value ** n, ((x.index, n * x.value ** (n - 1)),))


def select_ge(x, y, a, b) -> Var:
    """a if x >= y else b; the gradient flows only through the selected operand.

    x and y take part in the comparison only and receive no gradient (the
    branch value is locally constant in them almost everywhere).
    """
    xv = x.value if isinstance(x, Var) else float(x)
    yv = y.value if isinstance(y, Var) else float(y)
    tape = None
    for operand in (x, y, a, b):
        if isinstance(operand, Var):
            tape = operand.tape
            break
    if tape is None:
        raise ValueError("select_ge needs at least one Var operand")
    chosen = a if xv >= yv else b
    if isinstance(chosen, Var):
        return tape._record("select", chosen.value, ((chosen.index, 1.0),))
    return tape._record("select", float(chosen), ())


def backward(tape: Tape, output: Var) -> dict[int, float]:
    """Reverse sweep from output; returns {root index: d(output)/d(root)}.

    Roots not reachable from the output get gradient 0.  Cost is linear in
    the number of nodes recorded before the output.
    """
    if output.tape is not tape:
        raise ValueError("output does not belong to this tape")
    adjoint = [0.0] * (output.index + 1)
    adjoint[output.index] = 1.0
    deps = tape._deps
    for i in range(output.index, -1, -1):
        g = adjoint[i]
        if g != 0.0:
            for j, d in deps[i]:
                adjoint[j] += g * d
    return {r: (adjoint[r] if r <= output.index else 0.0) for r in tape.roots}


def grad_check(f: Callable[[list[Var]], Var], x: Sequence[float], fd_step: float = 1e-6) -> float:
    """Max relative error between tape gradients and central finite differences.

    f must build its result from the given leaf Vars on their tape.  The
    error at coordinate i is |g_ad - g_fd| / max(1, |g_fd|).
    """
    x = [float(xi) for xi in x]

    def value_at(point: Sequence[float]) -> float:
        tape = Tape()
        out = f([tape.leaf(p) for p in point])
        return out.value

    tape = Tape()
    leaves = [tape.leaf(xi) for xi in x]
    out = f(leaves)
    if not math.isfinite(out.value):
        raise ValidationError("objective is non-finite at the check point")
    grads = backward(tape, out)
    g_ad = [grads[v.index] for v in leaves]

    worst = 0.0
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += fd_step
        lo[i] -= fd_step
        f_hi = value_at(hi)
        f_lo = value_at(lo)
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise ValidationError(f"objective is non-finite near the check point (coord {i})")
        g_fd = (f_hi - f_lo) / (2.0 * fd_step)
        err = abs(g_ad[i] - g_fd) / max(1.0, abs(g_fd))
        worst = max(worst, err)
    return worst
