"""Dump the UCI optical-digits set (as bundled with scikit-learn) to CSV.

Each row holds the 64 pixel counts followed by the digit label, which is
the layout ``gbnn train`` expects by default (label in the last column).

    python3 demos/digits_to_csv.py data/digits.csv
"""
import os
import sys

import numpy as np
from sklearn.datasets import load_digits


def main(path):
    d = load_digits()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    rows = np.column_stack([d.data, d.target]).astype(int)
    np.savetxt(path, rows, fmt="%d", delimiter=",")
    print(f"{len(rows)} rows -> {path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/digits.csv")
