"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from stepcast import _pycore

try:
    from stepcast import _core
except ImportError:
    _core = None


def lstm_case(batch=32, steps=7, n_in=65, hidden=64, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, steps, n_in))
    W_ih = rng.normal(size=(4 * hidden, n_in)) * 0.1
    W_hh = rng.normal(size=(4 * hidden, hidden)) * 0.1
    b = np.zeros(4 * hidden)
    h0 = np.zeros((batch, hidden))
    return x, W_ih, W_hh, b, h0, h0.copy()


def bench(fn, repeat):
    fn()
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times), float(np.median(times))


def run(repeat):
    x, W_ih, W_hh, b, h0, c0 = lstm_case()
    z = np.random.default_rng(1).normal(size=200)
    ar, ma = np.array([0.5]), np.array([0.2])
    backends = [("python", _pycore)] + ([("compiled", _core)] if _core is not None else [])
    results = {}
    for name, mod in backends:
        fwd = mod.lstm_forward(x, W_ih, W_hh, b, h0, c0)
        dh, dc = np.ones_like(fwd[0]), np.zeros_like(fwd[1])
        results[name] = {
            "lstm_forward": bench(lambda m=mod: m.lstm_forward(x, W_ih, W_hh, b, h0, c0), repeat),
            "lstm_backward": bench(lambda m=mod, f=fwd: m.lstm_backward(x, W_ih, W_hh, h0, c0, *f, dh, dc),
                                   repeat),
            "css_objective": bench(lambda m=mod: m.css_objective(z, 0.0, ar, ma), repeat),
        }
    print(f"{'kernel':<15}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for kernel in results["python"]:
        py = results["python"][kernel][1] * 1e3
        if "compiled" in results:
            c = results["compiled"][kernel][1] * 1e3
            print(f"{kernel:<15}{py:>12.3f}{c:>14.3f}{py / c:>9.1f}x")
        else:
            print(f"{kernel:<15}{py:>12.3f}{'n/a':>14}{'':>10}")
    return results


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    run(parser.parse_args().repeat)
