"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 200]

Shapes are those of the toy model with batch 32: 17 tokens of width 48,
FFN width 192, four attention heads.  The last rows time one full
forward/backward/update step under each backend.
"""

import argparse
import timeit

import numpy as np

from adapterx import kernels
from adapterx.config import ExperimentConfig
from adapterx.data import SyntheticTask, make_task
from adapterx.model import build_model
from adapterx.train import AdamW


def kernel_cases(rng):
    rows = 32 * 18
    x = rng.standard_normal((rows, 48))
    h = rng.standard_normal((32 * 18, 192))
    s = rng.standard_normal((32 * 4 * 18, 18))
    gamma, beta = np.ones(48), np.zeros(48)
    return {
        "gelu_fwd": lambda k: k.gelu_fwd(h),
        "gelu_bwd": lambda k: k.gelu_bwd(h, h),
        "softmax_fwd": lambda k: k.softmax_fwd(s),
        "softmax_bwd": lambda k: k.softmax_bwd(s, s),
        "layer_norm_fwd": lambda k: k.layer_norm_fwd(x, gamma, beta, 1e-6),
        "layer_norm_bwd": lambda k: k.layer_norm_bwd(x, x, np.ones(rows), gamma),
    }


def train_step_case():
    cfg = ExperimentConfig().validate()
    data = make_task(SyntheticTask.from_config(cfg))
    model = build_model(cfg.model)
    opt = AdamW(model.named_parameters())
    xb, yb = data.train.x[:32], data.train.y[:32]

    def step(_):
        opt.zero_grad()
        model.loss(xb, yb)[0].backward()
        opt.step()

    return step


def best_of(fn, backend, repeat):
    fn(backend)  # compile / warm caches
    return min(timeit.repeat(lambda: fn(backend), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    if "numba" not in kernels.BACKENDS:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'case':<16}{'numpy us':>12}{'numba us':>12}{'speedup':>10}")
    for name, fn in cases.items():
        t_np = best_of(fn, kernels.NUMPY, args.repeat)
        t_nb = best_of(fn, kernels.NUMBA, args.repeat)
        print(f"{name:<16}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>10.2f}")

    step = train_step_case()
    times = {}
    for name in ("numpy", "numba"):
        prev = kernels.use(name)
        try:
            times[name] = best_of(step, None, max(5, args.repeat // 20))
        finally:
            kernels.use(prev)
    print(f"{'train_step':<16}{times['numpy'] * 1e6:>12.1f}{times['numba'] * 1e6:>12.1f}"
          f"{times['numpy'] / times['numba']:>10.2f}")


if __name__ == "__main__":
    main()
