"""Time the numba kernels against the numpy fallback.

Each backend runs in its own interpreter because the flag is read at import.

    python benchmarks/bench_backends.py [--repeat 3] [--epochs 5]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from tailminer import _backend, kernels
from tailminer import backbone as bb
from tailminer.data import SkewProfile, generate_synthetic
from tailminer.nn import Loss, Network, TrainConfig, fit, loss_and_gradient

repeat, epochs = int(sys.argv[1]), int(sys.argv[2])
splits = generate_synthetic(SkewProfile())
X, y = splits.train.features, splits.train.labels
net = Network.initialize([X.shape[1], *bb.DEFAULT_ARCH, 10], ["relu", "relu", "identity"],
                         np.random.default_rng(0))
cfg = TrainConfig(learning_rate=0.1, epochs=epochs, batch_size=64, seed=0)
loss = Loss.cross_entropy()

t = time.perf_counter()
fit(net, X[:64], y[:64], loss, TrainConfig(epochs=1, batch_size=64))
loss_and_gradient(net, X[:8], y[:8], loss)
warmup = time.perf_counter() - t

def best(fn):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)

out = {
    "backend": "numba" if _backend.use_numba() else "numpy",
    "samples": int(X.shape[0]),
    "warmup_s": warmup,
    "fit_s": best(lambda: fit(net, X, y, loss, cfg)),
    "full_batch_grad_s": best(lambda: loss_and_gradient(net, X, y, loss)),
}
print(json.dumps(out))
"""


def run(flag: str, repeat: int, epochs: int) -> dict:
    env = dict(os.environ, TAILMINER_NUMBA=flag)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(epochs)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args()
    rows = [run(flag, args.repeat, args.epochs) for flag in ("1", "0")]
    print(f"{rows[0]['samples']} training samples, {args.epochs} epochs, best of {args.repeat}")
    print(f"{'backend':<8} {'warmup':>9} {'fit':>9} {'grad':>9}")
    for r in rows:
        print(f"{r['backend']:<8} {r['warmup_s']:>8.3f}s {r['fit_s']:>8.3f}s {r['full_batch_grad_s']:>8.4f}s")
    nb, npy = rows
    print(f"speedup  fit x{npy['fit_s'] / nb['fit_s']:.1f}  grad x{npy['full_batch_grad_s'] / nb['full_batch_grad_s']:.1f}")


if __name__ == "__main__":
    main()
