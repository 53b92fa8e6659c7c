"""Compare the compiled and pure-numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Times MLP forward/backward, the fused Adam and polyak passes, and one full
WBSAC train step under each available backend, and reports how far apart the
two backends' outputs are.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from wbsac import kernels
from wbsac.nn_core import n_params

SHAPES = [((6, 64, 64, 4), 1), ((6, 64, 64, 4), 256), ((6, 256, 256, 4), 256)]


def bench_backend(mod, repeat):
    rng = np.random.default_rng(0)
    rows = []
    for sizes, batch in SHAPES:
        flat = rng.normal(size=n_params(sizes)) * 0.1
        x = rng.normal(size=(batch, sizes[0]))
        dout = rng.normal(size=(batch, sizes[-1]))
        grad = np.zeros_like(flat)
        acts = mod.mlp_forward(flat, sizes, x)
        fwd = min(timeit.repeat(lambda: mod.mlp_forward(flat, sizes, x), number=50, repeat=repeat)) / 50
        bwd = min(timeit.repeat(lambda: mod.mlp_backward(flat, sizes, acts, dout, grad, True),
                                number=50, repeat=repeat)) / 50
        rows.append((f"mlp {'-'.join(map(str, sizes))} batch={batch}", fwd, bwd))

    n = n_params((6, 256, 256, 4))
    p, g, m, v = (rng.normal(size=n) for _ in range(4))
    v = np.abs(v)
    adam = min(timeit.repeat(lambda: mod.adam_update(p, g, m, v, 3e-4, 0.9, 0.999, 1e-8, 10),
                             number=50, repeat=repeat)) / 50
    t = p.copy()
    polyak = min(timeit.repeat(lambda: mod.polyak_update(t, p, 0.005), number=50, repeat=repeat)) / 50
    rows.append((f"adam / polyak n={n}", adam, polyak))
    return rows


def bench_train_step(repeat):
    from wbsac.agents import AgentConfig, ReplayBuffer, WbsacAgent

    rng = np.random.default_rng(0)
    cfg = AgentConfig(hidden_sizes=(64, 64), batch_size=256, total_env_steps=10_000)
    agent = WbsacAgent(4, 2, cfg, np.random.default_rng(1))
    buf = ReplayBuffer(2000, 4, 2)
    for _ in range(2000):
        buf.push(rng.normal(size=4), rng.uniform(-1, 1, 2), 0.0, rng.normal(size=4), False)
    agent.t = 5000
    return min(timeit.repeat(lambda: agent.train_step(buf, rng), number=20, repeat=repeat)) / 20


def equivalence_check():
    mods = kernels.available_backends()
    if len(mods) < 2:
        return "only one backend available"
    rng = np.random.default_rng(1)
    sizes = (6, 64, 64, 4)
    flat = rng.normal(size=n_params(sizes))
    x = rng.normal(size=(32, 6))
    outs = {k: m.mlp_forward(flat, sizes, x)[-1] for k, m in mods.items()}
    a, b = outs.values()
    return f"forward max |diff| between backends = {np.max(np.abs(a - b)):.3e}"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train-step-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.train_step_only:
        print(bench_train_step(args.repeat))
        return

    mods = kernels.available_backends()
    results = {name: bench_backend(mod, args.repeat) for name, mod in mods.items()}
    names = list(results)
    print(f"{'case':38s}" + "".join(f"{n + ' a':>14s}{n + ' b':>14s}" for n in names))
    for i, (label, *_) in enumerate(results[names[0]]):
        cells = "".join(f"{results[n][i][1] * 1e6:12.1f}us{results[n][i][2] * 1e6:12.1f}us" for n in names)
        print(f"{label:38s}{cells}")
    print("(a, b) = (forward, backward) for mlp rows; (adam, polyak) for the optimizer row")

    # full train step once per backend, each in a fresh interpreter since the backend is fixed at import
    for name, force in (("cython", "0"), ("python", "1")):
        if name == "cython" and "cython" not in mods:
            continue
        env = dict(os.environ, WBSAC_PURE_PYTHON=force)
        out = subprocess.run([sys.executable, __file__, "--train-step-only", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        print(f"wbsac train_step (64-64, batch 256) [{name}]: {float(out.stdout) * 1e3:.2f} ms")
    print(equivalence_check())


if __name__ == "__main__":
    main()
