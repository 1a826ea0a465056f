import os
from pathlib import Path

import pytest

from pipesafe import kernels as kn


def matrix_dir() -> Path:
    override = os.environ.get("PIPESAFE_MATRIX_DIR")
    if override:
        return Path(override)
    return Path(__file__).parent / "data" / "suitesparse"


def require_matrix(name: str) -> Path:
    """Path to a downloaded test matrix, skipping when it is absent."""
    path = matrix_dir() / f"{name}.mtx"
    if not path.exists():
        pytest.skip(
            f"matrix {name}.mtx not present under {matrix_dir()} "
            f"(run scripts/fetch_matrices.py on a networked machine, or set "
            f"PIPESAFE_MATRIX_DIR)"
        )
    return path


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # pay any jit compilation once, before timing-sensitive assertions
    kn.warmup()
    yield
