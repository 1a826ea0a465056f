#!/usr/bin/env python3
"""Download the SuiteSparse matrices used by the acceptance tests.

Run this on a machine with network access, then point the test suite at
the output directory (default tests/data/suitesparse) via
PIPESAFE_MATRIX_DIR.  Tests that need these files skip when absent.

Usage: python scripts/fetch_matrices.py [--dest DIR] [--only NAME ...]
"""

from __future__ import annotations

import argparse
import io
import sys
import tarfile
import urllib.request
from pathlib import Path

BASE = "https://suitesparse-collection-website.herokuapp.com/MM"

# name -> collection group
MATRICES = {
    "sherman3": "HB",
    "utm5940": "TOKAMAK",
    "epb3": "Averous",
    "bcsstk18": "HB",
    "xenon2": "Ronis",
    "poisson3Db": "FEMLAB",
}


def fetch(name: str, group: str, dest: Path) -> Path:
    target = dest / f"{name}.mtx"
    if target.exists():
        print(f"  {name}: already present")
        return target
    url = f"{BASE}/{group}/{name}.tar.gz"
    print(f"  {name}: downloading {url}")
    with urllib.request.urlopen(url, timeout=120) as resp:
        blob = resp.read()
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        member = next(
            m for m in tar.getmembers() if m.name.endswith(f"{name}.mtx")
        )
        extracted = tar.extractfile(member)
        assert extracted is not None
        target.write_bytes(extracted.read())
    print(f"  {name}: wrote {target}")
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--dest",
        default=str(Path(__file__).resolve().parent.parent / "tests" / "data" / "suitesparse"),
    )
    parser.add_argument("--only", nargs="*", help="subset of matrix names")
    args = parser.parse_args(argv)

    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    wanted = args.only if args.only else sorted(MATRICES)
    unknown = [n for n in wanted if n not in MATRICES]
    if unknown:
        parser.error(f"unknown matrices: {unknown}; know {sorted(MATRICES)}")

    failures = []
    for name in wanted:
        try:
            fetch(name, MATRICES[name], dest)
        except Exception as exc:  # noqa: BLE001 - report and continue
            print(f"  {name}: FAILED ({exc})", file=sys.stderr)
            failures.append(name)
    if failures:
        print(f"failed: {failures}", file=sys.stderr)
        return 1
    print(f"all matrices present under {dest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
