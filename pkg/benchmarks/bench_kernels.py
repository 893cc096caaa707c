"""Compare the compiled and pure-Python Merkle kernels.

    python benchmarks/bench_kernels.py [--sizes 16,256,4096] [--repeat 5]

Prints one row per (kernel, size) with the best-of-N time per call and the
speedup of the compiled kernel. Results are checked for equality first.
"""

import argparse
import hashlib
import sys
import timeit

from chainless import kernels


def leaves(n: int) -> list[bytes]:
    return [hashlib.sha256(i.to_bytes(8, "big")).digest() for i in range(n)]


def cases(n: int):
    ls = leaves(n)
    levels = kernels.python_backend.merkle_levels(ls)
    idx = n // 2
    sibs = []
    for lvl in levels[:-1]:
        j = idx ^ 1
        sibs.append(lvl[j] if j < len(lvl) else lvl[idx])
        idx //= 2
    return {
        "merkle_root": (ls,),
        "merkle_levels": (ls,),
        "merkle_fold": (ls[n // 2], n // 2, sibs),
    }


def best(fn, args, repeat: int) -> float:
    number = max(1, 20_000 // max(1, len(args[0]) if isinstance(args[0], list) else 1))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,256,4096")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    py, cy = kernels.python_backend, kernels.compiled_backend
    if cy is None:
        print("compiled kernels not built; only the Python timings are shown", file=sys.stderr)

    print(f"{'kernel':<14} {'leaves':>7} {'python us':>11} {'cython us':>11} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, call in cases(n).items():
            want = getattr(py, name)(*call)
            t_py = best(getattr(py, name), call, args.repeat)
            if cy is None:
                print(f"{name:<14} {n:>7} {t_py * 1e6:>11.2f} {'-':>11} {'-':>8}")
                continue
            if getattr(cy, name)(*call) != want:
                print(f"{name}: backends disagree at n={n}", file=sys.stderr)
                return 1
            t_cy = best(getattr(cy, name), call, args.repeat)
            print(f"{name:<14} {n:>7} {t_py * 1e6:>11.2f} {t_cy * 1e6:>11.2f} {t_py / t_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
