"""Compare the compiled and pure-numpy kernel backends.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--p P] [--batch N]
"""
import argparse
import timeit

import numpy as np

from koopcast.kernels import available_backends


def cases(p: int, batch: int, horizon: int, seed: int):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((p, p))
    K *= 0.95 / np.max(np.abs(np.linalg.eigvals(K)))
    H, d = 8, 2
    q = 2 * H * d + d
    Kq = rng.standard_normal((q, q)) * 0.05
    cand = rng.standard_normal((20, horizon, 2))
    truth = rng.standard_normal((horizon, 2))
    return {
        "rollout_linear (single)": lambda b: b.rollout_linear(K, rng.standard_normal((1, p)), horizon),
        "rollout_linear (batch)": lambda b: b.rollout_linear(K, rng.standard_normal((batch, p)), horizon),
        "rollout_relift (batch)": lambda b: b.rollout_relift(Kq, rng.standard_normal((batch, q)),
                                                             horizon, H, d, True),
        "displacement_errors": lambda b: b.displacement_errors(cand, truth),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--p", type=int, default=50)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--horizon", type=int, default=12)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = available_backends()
    print(f"{'kernel':28s}" + "".join(f"{name:>14s}" for name in backends) + "   (us/call)")
    for label, fn in cases(args.p, args.batch, args.horizon, args.seed).items():
        row = []
        for b in backends.values():
            fn(b)
            best = min(timeit.repeat(lambda: fn(b), number=args.repeat, repeat=3))
            row.append(best / args.repeat * 1e6)
        print(f"{label:28s}" + "".join(f"{t:14.2f}" for t in row))


if __name__ == "__main__":
    main()
