"""Backend selection for the hot clustering kernel.

Prefers the compiled Cython extension, falling back to the numpy/python
implementation when the extension is unavailable. Both backends produce
identical partitions; see benchmarks/bench_kernels.py for the speed
comparison.
"""

try:
    from racenav._kernels import connected_labels

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from racenav._kernels_py import connected_labels

    BACKEND = "python"

__all__ = ["connected_labels", "BACKEND"]
