from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NumericError
from . import autodiff as ad


def finite_diff_check(f: Callable[[], ad.Node], params: Sequence[ad.Node], h: float = 1e-5,
                      max_coords: int = 200, rng: np.random.Generator | None = None,
                      floor: float = 1e-8) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values on
    every call. At most ``max_coords`` coordinates per parameter block are
    probed; the relative error is ``|analytic - numeric| / (|numeric| + floor)``.
    """
    rng = rng or np.random.default_rng(0)
    loss = f()
    if not np.isfinite(loss.value).all():
        raise NumericError("f(theta) is not finite")
    grads = ad.backward(loss, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.value.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = f().value[0, 0]
            flat[c] = orig - h
            down = f().value[0, 0]
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("f(theta +/- h) is not finite")
            numeric = (up - down) / (2.0 * h)
            err = abs(g.reshape(-1)[c] - numeric) / (abs(numeric) + floor)
            worst = max(worst, err)
    return worst
