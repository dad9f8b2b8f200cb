#!/usr/bin/env python3
"""Download the extended benchmark tables from the UCI repository.

Only Iris ships inside the package (it is small and the test suite needs it
offline).  The larger classification tables used by the extended experiment
grids are fetched on demand by this script, converted to headered CSV that
``labimpute.data.load_csv`` ingests directly, and pinned by checksum.

Integrity model: trust-on-first-use.  The first successful download of each
raw file records its SHA-256 in ``checksums.json`` next to the downloaded
data; every later run verifies against the recorded digest and fails loudly
on mismatch.  Delete an entry from the lockfile to accept a changed upstream
file on purpose.

Usage:
    python3 scripts/fetch_datasets.py [--out-dir data] [--only soybean heart car]
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import urllib.request
from pathlib import Path

_UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"


def _rows_soybean(raw: dict[str, bytes]) -> tuple[list[str], list[list[str]]]:
    """35 categorical attributes, class token last on each line."""
    header = [f"a{i}" for i in range(1, 36)] + ["class"]
    rows = []
    for line in raw["soybean-small.data"].decode("ascii").splitlines():
        line = line.strip()
        if line:
            rows.append(line.split(","))
    return header, rows


def _rows_heart(raw: dict[str, bytes]) -> tuple[list[str], list[list[str]]]:
    """SPECTF: class first, 44 integer-valued features; train + test pooled."""
    header = ["diagnosis"] + [f"f{i}" for i in range(1, 45)]
    rows = []
    for name in ("SPECTF.train", "SPECTF.test"):
        for line in raw[name].decode("ascii").splitlines():
            line = line.strip()
            if line:
                rows.append(line.split(","))
    return header, rows


def _rows_car(raw: dict[str, bytes]) -> tuple[list[str], list[list[str]]]:
    """6 ordinal attributes, acceptability class last."""
    header = ["buying", "maint", "doors", "persons", "lug_boot", "safety", "class"]
    rows = []
    for line in raw["car.data"].decode("ascii").splitlines():
        line = line.strip()
        if line:
            rows.append(line.split(","))
    return header, rows


DATASETS = {
    "soybean": {
        "files": {"soybean-small.data": f"{_UCI}/soybean/soybean-small.data"},
        "convert": _rows_soybean,
        "label": "class",
    },
    "heart": {
        "files": {
            "SPECTF.train": f"{_UCI}/spect/SPECTF.train",
            "SPECTF.test": f"{_UCI}/spect/SPECTF.test",
        },
        "convert": _rows_heart,
        "label": "diagnosis",
    },
    "car": {
        "files": {"car.data": f"{_UCI}/car/car.data"},
        "convert": _rows_car,
        "label": "class",
    },
}


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _download(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=60) as resp:
        return resp.read()


def fetch(names: list[str], out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / "checksums.json"
    lock: dict[str, str] = {}
    if lock_path.is_file():
        lock = json.loads(lock_path.read_text())
    changed = False
    for name in names:
        entry = DATASETS[name]
        raw: dict[str, bytes] = {}
        for fname, url in entry["files"].items():
            print(f"[{name}] fetching {url}")
            data = _download(url)
            digest = _sha256(data)
            if fname in lock:
                if lock[fname] != digest:
                    print(f"error: checksum mismatch for {fname}:\n"
                          f"  recorded {lock[fname]}\n  received {digest}\n"
                          f"remove the entry from {lock_path} to accept the new file",
                          file=sys.stderr)
                    return 1
            else:
                lock[fname] = digest
                changed = True
                print(f"[{name}] pinned {fname} sha256={digest[:16]}…")
            raw[fname] = data
        header, rows = entry["convert"](raw)
        width = len(header)
        for i, row in enumerate(rows):
            if len(row) != width:
                print(f"error: {name} row {i} has {len(row)} fields, "
                      f"expected {width}", file=sys.stderr)
                return 1
        csv_path = out_dir / f"{name}.csv"
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        print(f"[{name}] wrote {csv_path} ({len(rows)} rows, "
              f"label column {entry['label']!r})")
    if changed:
        lock_path.write_text(json.dumps(lock, indent=2, sort_keys=True) + "\n")
        print(f"updated {lock_path}")
    return 0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="data", help="directory for CSVs + lockfile")
    ap.add_argument("--only", nargs="+", choices=sorted(DATASETS),
                    help="fetch a subset (default: everything)")
    args = ap.parse_args()
    names = args.only if args.only else sorted(DATASETS)
    return fetch(names, Path(args.out_dir))


if __name__ == "__main__":
    sys.exit(main())
