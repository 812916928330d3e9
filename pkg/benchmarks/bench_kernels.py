"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Times each kernel at the shapes the default model uses (batch 128,
280 hidden units), then one full training step of the default network
with each backend swapped in.
"""
import argparse
import timeit

import numpy as np

from harvestcast import kernels
from harvestcast.model import build
from harvestcast.optim import AdamState, adam_step, mae_loss
from harvestcast.tensor import Tape, Tensor, backprop

KERNEL_NAMES = ("lstm_gates_forward", "lstm_gates_backward", "adam_update", "selu_forward", "selu_backward",
                "sample_points")


def kernel_cases(mod, rng):
    n, h = 128, 280
    z = rng.standard_normal((n, 4 * h))
    c_prev = rng.standard_normal((n, h))
    gates, c, tc, hh = np.empty((n, 4 * h)), np.empty((n, h)), np.empty((n, h)), np.empty((n, h))
    mod.lstm_gates_forward(z.copy(), c_prev, gates, c, tc, hh)
    dz, dcp = np.empty((n, 4 * h)), np.empty((n, h))
    p, g = rng.standard_normal(628_320), rng.standard_normal(628_320)
    m, v = np.zeros_like(p), np.zeros_like(p)
    x = rng.standard_normal((n, 100))
    grid = rng.random((400, 400)).astype(np.float32)
    rr, cc = rng.uniform(0, 399, 40_000), rng.uniform(0, 399, 40_000)
    return {
        "lstm_gates_forward (128x280)": lambda: mod.lstm_gates_forward(z.copy(), c_prev, gates, c, tc, hh),
        "lstm_gates_backward (128x280)": lambda: mod.lstm_gates_backward(hh, c, gates, c_prev, tc, dz, dcp),
        "adam_update (628k params)": lambda: mod.adam_update(p, g, m, v, 5e-4, 0.9, 0.999, 0.1, 0.001, 1e-8),
        "selu_forward (128x100)": lambda: mod.selu_forward(x),
        "selu_backward (128x100)": lambda: mod.selu_backward(x, x),
        "sample_points bilinear (40k pts)": lambda: mod.sample_points(grid, rr, cc, 1, -9999.0),
    }


def train_step_case(rng):
    net = build(seed=0)
    params = net.parameters()
    state = AdamState.for_params(params)
    d = Tensor(rng.standard_normal((128, 8, 3)))
    s = Tensor(rng.standard_normal((128, 65)))
    y = Tensor(rng.random(128) * 3000)

    def step():
        with Tape() as tape:
            loss = mae_loss(net.forward(d, s), y)
        backprop(tape, loss)
        adam_step(state, params, [p.grad for p in params])

    return step


def use_backend(mod):
    for name in KERNEL_NAMES:
        setattr(kernels, name, getattr(mod, name))


def best_ms(fn, repeat):
    fn()
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = {"python": kernels.load_backend("python")}
    try:
        backends["cython"] = kernels.load_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")
    original = {name: getattr(kernels, name) for name in KERNEL_NAMES}
    rows = {}
    for bname, mod in backends.items():
        rng = np.random.default_rng(0)
        for case, fn in kernel_cases(mod, rng).items():
            rows.setdefault(case, {})[bname] = best_ms(fn, args.repeat)
        use_backend(mod)
        rows.setdefault("train step, default net, batch 128", {})[bname] = best_ms(
            train_step_case(np.random.default_rng(0)), max(3, args.repeat // 4))
    use_backend(type("orig", (), original))
    names = list(backends)
    print(f"{'case':40s}" + "".join(f"{n + ' ms':>14s}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for case, t in rows.items():
        line = f"{case:40s}" + "".join(f"{t[n]:14.3f}" for n in names)
        if len(names) == 2:
            line += f"{t['python'] / t['cython']:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
