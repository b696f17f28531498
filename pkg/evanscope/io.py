"""
Output files: atomic writes, JSON reports and CSV tables
"""

import json
import os
from pathlib import Path
from typing import Any, List, Union

import numpy as np
import pandas as pd

from evanscope.determinants import DeterminantSample
from evanscope.errors import jsonable

PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write through a temporary sibling and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="\n") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return path


def write_json(path: PathLike, obj: Any) -> Path:
    return atomic_write_text(path, json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_frame(path: PathLike, frame: pd.DataFrame) -> Path:
    """CSV with header, ',' separator, '.' decimal and shortest round-trip floats."""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def read_frame(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])


def read_samples(path: PathLike) -> List[DeterminantSample]:
    """Parse a samples table back into DeterminantSample rows."""
    frame = read_frame(path)
    zeta_cols = sorted((c for c in frame.columns if c.startswith("zetahat_")), key=lambda c: int(c.split("_")[1]))
    samples = []
    for row in frame.itertuples(index=False):
        record = row._asdict()
        zeta_hat = tuple(float(record[c]) for c in zeta_cols)
        value = complex(float(record["re"]), float(record["im"]))
        samples.append(DeterminantSample(str(record["kind"]), value, zeta_hat, float(record["rho"]),
                                         str(record["flag"])))
    return samples


def nan_equal(a: complex, b: complex) -> bool:
    """Equality that treats matching NaN parts as equal."""
    return all(x == y or (np.isnan(x) and np.isnan(y)) for x, y in ((a.real, b.real), (a.imag, b.imag)))
