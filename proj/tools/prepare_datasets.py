#!/usr/bin/env python3
"""Convert KEEL-format .dat files shipped inside the keel_ds / common_datasets
wheels into the CSV layout read by `pathrf` (header row, numeric features,
label column named "class")."""

import argparse
import csv
import io
import pathlib
import sys
import zipfile

# Board cells get ordinal codes in lexicographic order of their symbols.
TIC_TAC_TOE_CELLS = {"b": 0, "o": 1, "x": 2}

# output name -> (wheel glob prefix, member path, fallback column names)
SOURCES = {
    "tic-tac-toe": ("keel_ds", "keel_ds/data/balanced/raw/tic-tac-toe.dat",
                    ["top_left", "top_middle", "top_right", "middle_left", "middle_middle",
                     "middle_right", "bottom_left", "bottom_middle", "bottom_right", "class"]),
    "mammographic-mass": ("common_datasets", "common_datasets/data/classification/mammographic/mammographic.dat", None),
    "haberman": ("common_datasets", "common_datasets/data/classification/haberman/haberman.dat", None),
    "ionosphere": ("common_datasets", "common_datasets/data/classification/ionosphere/ionosphere.dat", None),
    "diabetes": ("common_datasets", "common_datasets/data/classification/pima/pima.dat", None),
    "wdbc": ("common_datasets", "common_datasets/data/classification/wdbc/wdbc.dat", None),
    "sonar": ("keel_ds", "keel_ds/data/balanced/raw/sonar.dat", [f"A{i}" for i in range(1, 61)] + ["class"]),
}


def parse_keel(text, names):
    header, rows = [], []
    in_data = names is not None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("%"):
            continue
        low = line.lower()
        if not in_data:
            if low.startswith("@attribute"):
                header.append(line.split()[1])
            elif low.startswith("@data"):
                in_data = True
            continue
        rows.append([c.strip() for c in line.split(",")])
    if names is not None:
        header = names
    return header, rows


def encode(value):
    if value in TIC_TAC_TOE_CELLS:
        return TIC_TAC_TOE_CELLS[value]
    float(value)
    return value


def convert(wheel_dir, out_dir, only):
    wheels = {w.name.split("-")[0]: w for w in wheel_dir.glob("*.whl")}
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (wheel, member, names) in SOURCES.items():
        if only and name not in only:
            continue
        if wheel not in wheels:
            print(f"skip {name}: no {wheel} wheel in {wheel_dir}", file=sys.stderr)
            continue
        text = zipfile.ZipFile(wheels[wheel]).read(member).decode()
        header, rows = parse_keel(text, names)
        header[-1] = "class"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            if len(r) != len(header) or any(c in ("", "?") for c in r):
                continue
            w.writerow([encode(c) for c in r[:-1]] + [r[-1]])
        (out_dir / f"{name}.csv").write_text(buf.getvalue())
        print(f"{name}: {len(rows)} rows, {len(header) - 1} features")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--wheel-dir", type=pathlib.Path, required=True)
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data"))
    ap.add_argument("names", nargs="*")
    args = ap.parse_args()
    convert(args.wheel_dir, args.out, set(args.names))


if __name__ == "__main__":
    main()
