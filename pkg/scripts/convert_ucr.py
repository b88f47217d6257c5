"""Convert a UCR-archive TSV pair into the one-window-per-row CSV used here.

One class is declared normal and every other class becomes an anomaly:

    python scripts/convert_ucr.py Wafer_TRAIN.tsv Wafer_TEST.tsv --normal 1 -o wafer.csv

UCR TSV rows hold the class label followed by the series values. Rows of
unequal length (a few archive sets are padded with NaN) are rejected.
"""

import argparse
import csv
import sys
from collections import Counter


def read_rows(path):
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if row:
                yield row_no, row[0].strip(), [float(v) for v in row[1:]]


def main(argv=None):
    ap = argparse.ArgumentParser(description="UCR TSV to labelled window CSV")
    ap.add_argument("inputs", nargs="+")
    ap.add_argument("--normal", help="class label treated as normal (default: most frequent)")
    ap.add_argument("-o", "--out", required=True)
    args = ap.parse_args(argv)

    rows = []
    for path in args.inputs:
        rows.extend((path, *r) for r in read_rows(path))
    if not rows:
        sys.exit("no rows read")
    counts = Counter(label for _, _, label, _ in rows)
    normal = args.normal or counts.most_common(1)[0][0]
    if normal not in counts:
        sys.exit(f"class {normal!r} not present; classes: {sorted(counts)}")
    L = len(rows[0][3])
    with open(args.out, "w", newline="") as fh:
        out = csv.writer(fh)
        for path, row_no, label, values in rows:
            if len(values) != L or any(v != v for v in values):
                sys.exit(f"{path} row {row_no}: expected {L} finite values")
            out.writerow([0 if label == normal else 1] + [repr(v) for v in values])
    n_anom = sum(c for k, c in counts.items() if k != normal)
    print(f"{len(rows)} windows of length {L}: {counts[normal]} normal (class {normal}), "
          f"{n_anom} anomalous -> {args.out}")


if __name__ == "__main__":
    main()
