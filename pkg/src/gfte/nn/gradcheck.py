"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from gfte.nn.layers import ParamSet
from gfte.rng import Xoshiro256

STEP = 1e-5
MAX_COORDS = 64


class GradcheckError(FloatingPointError):
    pass


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def gradcheck(
    f: Callable[[], "object"],
    params: ParamSet,
    step: float = STEP,
    max_coords: int = MAX_COORDS,
    seed: int = 0,
) -> dict[str, float]:
    """Max relative error between analytic and numeric gradient per tensor.

    ``f`` recomputes a scalar loss Tensor from the current contents of
    ``params`` (which should be float64). Up to ``max_coords`` coordinates
    per tensor are sampled.
    """
    params.zero_grad()
    loss = f()
    if not np.isfinite(loss.item()):
        raise GradcheckError("loss is not finite")
    loss.backward()
    analytic = {k: g.copy() for k, g in params.grads().items()}
    rng = Xoshiro256.named(seed, "gradcheck")
    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = list(range(n))
        else:
            coords = list(range(n))
            rng.shuffle(coords)
            coords = sorted(coords[:max_coords])
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise GradcheckError(f"loss became non-finite while perturbing {name}[{i}]")
            num = (fp - fm) / (2.0 * step)
            worst = max(worst, rel_error(float(ga[i]), num))
        report[name] = worst
    params.zero_grad()
    return report
