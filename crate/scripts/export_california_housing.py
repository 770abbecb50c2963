"""Write the California Housing table to data/california_housing.csv.

Needs scikit-learn and network access on first use (the dataset is cached
under ~/scikit_learn_data afterwards).
"""
import sys
from pathlib import Path

from sklearn.datasets import fetch_california_housing

out = Path(sys.argv[1] if len(sys.argv) > 1 else "data/california_housing.csv")
frame = fetch_california_housing(as_frame=True).frame
out.parent.mkdir(parents=True, exist_ok=True)
frame.to_csv(out, index=False)
print(f"wrote {len(frame)} rows to {out}")
