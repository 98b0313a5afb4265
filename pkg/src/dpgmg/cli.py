"""Entry point for the ``dpgmg`` command.

DPGMG_THREADS bounds the BLAS/OpenMP thread pools; it has to be applied
before numpy is first imported, hence this separate module.
"""
import os
import sys

_POOLS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def apply_thread_limit(env=os.environ) -> int | None:
    raw = env.get("DPGMG_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError("DPGMG_THREADS must be a positive integer")
    for var in _POOLS:
        env[var] = str(n)
    return n


def main(argv=None) -> int:
    try:
        apply_thread_limit()
    except ValueError as exc:
        print(f"dpgmg: {exc}", file=sys.stderr)
        return 2
    from .io_cli import run

    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
