"""Export public datasets to the ``features..., label`` CSV layout read by ``load_csv``.

Usage: ``python -m fedsgm.datasets breast-cancer out.csv [--train-fraction 0.8]``.
Requires scikit-learn (``pip install fedsgm[data]``).
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path

import numpy as np


def export_breast_cancer(path, train_fraction: float = 0.8, seed: int = 0) -> int:
    """Write the Wisconsin breast-cancer training split; returns the row count.

    Benign (the majority) becomes class 0 and malignant class 1, so the
    constraint is the loss on the minority class.
    """
    from sklearn.datasets import load_breast_cancer

    bunch = load_breast_cancer()
    X, y = bunch.data, 1 - bunch.target
    order = np.random.default_rng(seed).permutation(len(y))
    keep = order[: int(round(train_fraction * len(y)))]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*(name.replace(" ", "_") for name in bunch.feature_names), "label"])
        for i in keep:
            writer.writerow([*(repr(float(v)) for v in X[i]), int(y[i])])
    return len(keep)


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="python -m fedsgm.datasets")
    parser.add_argument("name", choices=["breast-cancer"])
    parser.add_argument("output", type=Path)
    parser.add_argument("--train-fraction", type=float, default=0.8)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rows = export_breast_cancer(args.output, args.train_fraction, args.seed)
    print(f"wrote {rows} rows to {args.output}")


if __name__ == "__main__":
    main()
