"""Shared test oracles: finite differences, a direct-exponential loss
reference, and small model builders.

Everything here is deliberately independent of the library's analytic
paths: gradients come from central differences on the forward value, and
the alignment loss reference exponentiates similarities directly instead
of working in log space.
"""

from __future__ import annotations

import math

import numpy as np

from hralign.encoder import Backbone
from hralign.rng import RngState


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / denom


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        step = h * max(1.0, abs(x[idx]))
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (f(xp) - f(xm)) / (2.0 * step)
    return grad


def check_grad_against_fd(build, x0: np.ndarray, tol: float = 1e-6) -> float:
    """``build(x_array)`` must return a scalar Tensor; compares backward()
    gradients at x0 against central differences. Returns the error."""
    from hralign.tensor import Tensor

    holder = Tensor(x0.copy(), requires_grad=True)
    out = build(holder)
    out.backward()
    analytic = holder.grad.copy()
    numeric = numeric_grad(lambda xv: float(build(Tensor(xv, requires_grad=True)).data), x0)
    err = rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol:g}"
    return err


def naive_hr_align_loss(
    human: np.ndarray, robot_frozen: np.ndarray, robot_adapted: np.ndarray, tau: float
) -> float:
    """Direct-exponential evaluation of the symmetric alignment loss.

    Only safe for small feature norms; this is the reference the log-space
    implementation is checked against.
    """
    m = human.shape[0]

    def s(x, y):
        return math.exp(float(x @ y) / tau)

    total = 0.0
    for i in range(m):
        num = s(human[i], robot_adapted[i])
        den1 = s(human[i], robot_frozen[i]) + sum(
            s(human[i], robot_adapted[j]) for j in range(m)
        )
        den2 = s(robot_frozen[i], human[i]) + sum(
            s(robot_adapted[i], human[j]) for j in range(m)
        )
        total += -math.log(num / den1) - math.log(num / den2)
    return total / (2.0 * m)


def micro_backbone(seed: int = 3, channels=(3, 4, 4, 4)) -> Backbone:
    """Tiny backbone for finite-difference audits through the full stack."""
    return Backbone.create(RngState(seed), channels=channels)


def random_clip_frames(rng: RngState, t: int = 3, h: int = 16, w: int = 16) -> np.ndarray:
    return rng.uniform((t, h, w, 3))


def sum_param_sizes(named: dict) -> int:
    """Independent size-sum oracle for parameter counts."""
    return int(sum(t.data.size for t in named.values()))
