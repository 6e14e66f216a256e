
from typing import Callable, Dict

import numpy as np


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of scalar `f()` w.r.t. array `x`, perturbed in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=[["readwrite"]])
    while not it.finished:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """‖a - n‖ / max(‖a‖ + ‖n‖, floor)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(f: Callable[[], float], arrays: Dict[str, np.ndarray],
                    analytic: Dict[str, np.ndarray], h: float = 1e-4) -> Dict[str, float]:
    return {name: rel_error(analytic[name], numeric_grad(f, arr, h)) for name, arr in arrays.items()}
