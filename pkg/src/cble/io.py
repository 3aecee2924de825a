"""CSV and JSON writers with exact float formatting."""

from __future__ import annotations

import csv
import json
import math
from typing import Sequence, Tuple

from .fluctuation import RenewalEstimate
from .stats import McEstimate


def _r(x) -> str:
    return repr(float(x))


def write_decay_csv(path, points: Sequence[Tuple[float, McEstimate]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p_hat", "stderr", "n", "ess", "y"])
        for T, e in points:
            y = math.log(e.mean) + 1.5 * math.log(T) if e.mean > 0 else float("nan")
            w.writerow([_r(T), _r(e.mean), _r(e.stderr), e.n,
                        _r(e.ess if e.ess is not None else e.n), _r(y)])


def write_renewal_csv(path, ren: RenewalEstimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u", "u_hat", "stderr"])
        for x, u, uh, se in zip(ren.x, ren.u, ren.u_hat, ren.se_u_hat):
            w.writerow([_r(x), _r(u), _r(uh), _r(se)])


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_r(v) if isinstance(v, float) else v for v in row])


def write_json(path, obj) -> None:
    def default(o):
        try:
            import numpy as np
            if isinstance(o, np.generic):
                return o.item()
            if isinstance(o, np.ndarray):
                return o.tolist()
        except ImportError:  # pragma: no cover
            pass
        raise TypeError(f"not serializable: {type(o)}")

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=default)
        fh.write("\n")
