"""Print the max-error and RMSE comparison tables for prefix sums.

Usage: python3 scripts/reproduce_tables.py [--steps 8,16,...] [--dense-limit 256]
"""

import argparse
import time

from corrnoise.tables import COLUMNS, DENSE_RMS_LIMIT, table_rows


def format_table(name, rows, columns):
    header = f"{'n':>6} " + " ".join(f"{c:>16}" for c in columns)
    lines = [name, header]
    for row in rows:
        cells = ["-" if row[c] is None else f"{row[c]:.3f}" for c in columns]
        lines.append(f"{row['n']:>6} " + " ".join(f"{c:>16}" for c in cells))
    return "\n".join(lines)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", default="8,16,32,64,128,256,512,1024")
    parser.add_argument("--dense-limit", type=int, default=DENSE_RMS_LIMIT)
    args = parser.parse_args()
    steps = [int(s) for s in args.steps.split(",")]
    for name in ("max-error", "rmse"):
        start = time.perf_counter()
        rows = table_rows(name, steps, COLUMNS, args.dense_limit)
        print(format_table(name, rows, COLUMNS))
        print(f"({time.perf_counter() - start:.1f}s)\n")


if __name__ == "__main__":
    main()
