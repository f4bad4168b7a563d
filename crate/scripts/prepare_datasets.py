#!/usr/bin/env python3
"""Build data/adult.csv and data/bank.csv from copies of the UCI files that
ship inside two PyPI wheels.

    pip download --no-deps responsibly==0.1.2 hypergbm==0.3.2 -d /tmp/wheels
    python3 scripts/prepare_datasets.py /tmp/wheels data/

Adult: adult.data + adult.test (48,842 rows), whitespace stripped, the
trailing '.' on test labels removed.
Bank Marketing: bank-full (45,211 rows), reassembled in original row order
from the train/test halves keyed by their original row id.
"""
import csv
import glob
import gzip
import io
import os
import sys
import zipfile

ADULT_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]


def wheel(wheel_dir, prefix):
    hits = glob.glob(os.path.join(wheel_dir, prefix + "-*.whl"))
    if not hits:
        sys.exit(f"no {prefix} wheel in {wheel_dir}")
    return zipfile.ZipFile(sorted(hits)[-1])


def adult(wheel_dir, out_dir):
    z = wheel(wheel_dir, "responsibly")
    rows = []
    for name in ("adult.data", "adult.test"):
        text = z.read(f"responsibly/dataset/adult/{name}").decode("utf-8")
        for line in text.splitlines():
            if not line.strip() or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(ADULT_COLUMNS):
                sys.exit(f"bad adult row: {line!r}")
            fields[-1] = fields[-1].rstrip(".")
            rows.append(fields)
    path = os.path.join(out_dir, "adult.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ADULT_COLUMNS)
        w.writerows(rows)
    print(f"{path}: {len(rows)} rows")


def bank(wheel_dir, out_dir):
    z = wheel(wheel_dir, "hypergbm")
    header = None
    by_id = {}
    for part in ("train", "test"):
        raw = gzip.decompress(z.read(f"hypergbm/examples/datasets/Bank/{part}.csv.gz"))
        reader = csv.reader(io.StringIO(raw.decode("utf-8")))
        head = next(reader)
        header = head[1:-1] + ["y"]
        for r in reader:
            by_id[int(r[0])] = r[1:]
    ids = sorted(by_id)
    if ids != list(range(len(ids))):
        sys.exit("bank row ids are not a contiguous range")
    path = os.path.join(out_dir, "bank.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i in ids:
            w.writerow(by_id[i])
    print(f"{path}: {len(ids)} rows")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    os.makedirs(sys.argv[2], exist_ok=True)
    adult(sys.argv[1], sys.argv[2])
    bank(sys.argv[1], sys.argv[2])
