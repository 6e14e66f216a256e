#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
00_doctor.py: environment check: dependencies, config, data directory, gradient check.
"""
import argparse
import importlib
import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

REQ = ["numpy", "pandas", "tqdm", "yaml"]


def check_mod(m):
    try:
        mod = importlib.import_module(m)
        print(f"[doctor] dep {m}: OK ({getattr(mod, '__version__', '?')})")
        return True
    except Exception as e:
        print(f"[doctor] dep {m}: MISSING ({e})")
        return False


def check_gradients():
    import numpy as np

    from fedquad.gradcheck import check_gradients as run_check
    from fedquad.layers import Dense

    rng = np.random.default_rng(0)
    layer = Dense("probe", 5, 3, rng)
    x = rng.standard_normal((4, 5))
    w = rng.standard_normal((4, 3))

    def f():
        return float((layer.forward(x, training=False) * w).sum())

    layer.forward(x, training=True)
    layer.zero_grad()
    layer.backward(w)
    err = run_check(f, {"weight": layer.params["weight"], "bias": layer.params["bias"]},
                    {"weight": layer.grads["weight"], "bias": layer.grads["bias"]})
    worst = max(err.values())
    print(f"[doctor] gradient check (dense): max rel error {worst:.2e}")
    return worst <= 1e-6


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=os.path.join("config", "settings.yaml"))
    args = ap.parse_args()

    print(f"[doctor] Python: {sys.version.split()[0]}")
    ok = True
    for m in REQ:
        ok &= check_mod(m)
    if not ok:
        print("[doctor] Some dependencies missing. Try: pip install -r requirements.txt")
        return 1

    from fedquad.errors import FedQuadError
    from fedquad.settings import DATA_DIR_ENV, local_override_path, parse_config

    print(f"[doctor] env {DATA_DIR_ENV}: {os.getenv(DATA_DIR_ENV) or 'missing'}")
    local = local_override_path(args.config)
    print(f"[doctor] {os.path.basename(local)}: {'FOUND' if os.path.exists(local) else 'NOT FOUND'}")
    try:
        cfg = parse_config(args.config if os.path.exists(args.config) else None)
        print(f"[doctor] config: OK (dataset={cfg.dataset.kind}, method={cfg.loss.method}, "
              f"model={cfg.model_kind})")
        if cfg.dataset.kind != "blobs":
            found = bool(cfg.dataset.path) and os.path.isdir(cfg.dataset.path)
            print(f"[doctor] data dir {cfg.dataset.path or '(empty)'}: "
                  f"{'OK' if found else 'NOT FOUND'}")
            ok &= found
    except FedQuadError as e:
        print(f"[doctor] config: ERROR {e}")
        ok = False
    ok &= check_gradients()
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
