#!/usr/bin/env python3
"""Fetch the Kapferer tailor-shop panel used by the acceptance suite.

Downloads the UCINET file kaptail.dat (four stacked 39x39 matrices: two
waves of the sociational network and two of the instrumental one), extracts
the sociational waves KAPFTS1 and KAPFTS2, and writes them as plain 0/1
adjacency matrices.

The job-status covariate is not part of the UCINET file; the row labels
are worker names only. Supply it yourself as status.txt in the same
directory: 39 lines, one 0/1 value per line (1 = higher-status job), in
the same actor order as the matrices.

Sanity values for the written waves: 39 actors, mean out-degree about 2.8
in wave 1 and about 3.8 in wave 2.
"""

import argparse
import re
import sys
import urllib.request
from pathlib import Path

DEFAULT_URL = "http://vlado.fmf.uni-lj.si/pub/networks/data/ucinet/kaptail.dat"
WANTED = ("KAPFTS1", "KAPFTS2")
OUT_NAMES = ("kapt1.txt", "kapt2.txt")


def parse_dl(text: str):
    """Matrices from a UCINET DL full-matrix file, keyed by level label."""
    m = re.search(r"\bN\s*=\s*(\d+)", text, re.IGNORECASE)
    if not m:
        raise SystemExit("cannot find N= in the DL header")
    n = int(m.group(1))
    nm = re.search(r"\bNM\s*=\s*(\d+)", text, re.IGNORECASE)
    n_levels = int(nm.group(1)) if nm else 1

    lines = text.splitlines()
    levels = []
    data_start = None
    in_levels = False
    for k, line in enumerate(lines):
        token = line.strip().rstrip(":").upper()
        if token == "LEVEL LABELS":
            in_levels = True
            continue
        if token in ("DATA", "ROW LABELS", "COLUMN LABELS", "LABELS"):
            in_levels = False
            if token == "DATA":
                data_start = k + 1
                break
            continue
        if in_levels and line.strip():
            levels.append(line.strip().strip('"'))
    if data_start is None:
        raise SystemExit("cannot find DATA: section")
    if not levels:
        levels = [f"LEVEL{j + 1}" for j in range(n_levels)]
    if len(levels) != n_levels:
        raise SystemExit(f"header says NM={n_levels} but {len(levels)} level labels found")

    values = []
    for line in lines[data_start:]:
        values.extend(int(v) for v in line.split())
    if len(values) != n_levels * n * n:
        raise SystemExit(
            f"expected {n_levels}x{n}x{n} = {n_levels * n * n} values, got {len(values)}"
        )
    out = {}
    for j, label in enumerate(levels):
        flat = values[j * n * n : (j + 1) * n * n]
        out[label.upper()] = [flat[i * n : (i + 1) * n] for i in range(n)]
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--url", default=DEFAULT_URL, help="source for kaptail.dat")
    ap.add_argument(
        "--dest",
        default=Path(__file__).resolve().parent.parent / "data" / "kapferer",
        type=Path,
        help="output directory (default data/kapferer)",
    )
    args = ap.parse_args(argv)

    print(f"fetching {args.url}")
    with urllib.request.urlopen(args.url, timeout=60) as resp:
        text = resp.read().decode("utf-8", errors="replace")
    matrices = parse_dl(text)
    missing = [w for w in WANTED if w not in matrices]
    if missing:
        raise SystemExit(f"levels {missing} not in file; found {sorted(matrices)}")

    args.dest.mkdir(parents=True, exist_ok=True)
    for label, out_name in zip(WANTED, OUT_NAMES):
        rows = matrices[label]
        n = len(rows)
        for i in range(n):
            rows[i][i] = 0  # stray self-loops are meaningless here
        path = args.dest / out_name
        path.write_text("\n".join(" ".join(str(v) for v in r) for r in rows) + "\n")
        mean_out = sum(sum(r) for r in rows) / n
        print(f"wrote {path} ({n} actors, mean out-degree {mean_out:.2f})")

    status = args.dest / "status.txt"
    if not status.is_file():
        print(
            "\nstill missing: status.txt (39 lines of 0/1, the job-status "
            "indicator, same actor order as the matrices). The acceptance "
            "tests that need the covariate stay skipped until it exists."
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
