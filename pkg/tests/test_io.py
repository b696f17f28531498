"""
Test atomic output files and the samples table reader
"""
import sys
import os

import numpy as np

# Add parent directory to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from evanscope.determinants import DeterminantSample
from evanscope.errors import AxisEigenvalueError, jsonable
from evanscope.io import nan_equal, read_json, read_samples, write_frame, write_json
from evanscope.sweep import FrequencyGrid, StabilityReport


def test_write_json_is_sorted_and_atomic(tmp_path):
    path = tmp_path / "out" / "report.json"
    write_json(path, {"b": 1, "a": np.array([1.0, 2.0]), "z": 1 + 2j})
    text = path.read_text(encoding="utf-8")

    assert text.index('"a"') < text.index('"b"'), "keys are sorted"
    assert text.endswith("\n")
    assert not (tmp_path / "out" / "report.json.tmp").exists(), "temporary file renamed away"
    assert read_json(path) == {"a": [1.0, 2.0], "b": 1, "z": {"im": 2.0, "re": 1.0}}


def test_error_details_serialize():
    err = AxisEigenvalueError("on the axis", eigenvalue=1j, gap=0.0)
    data = jsonable(err.to_dict())
    assert data["code"] == "axis-eigenvalue"
    assert data["details"]["eigenvalue"] == {"re": 0.0, "im": 1.0}


def test_samples_table_reads_back_exactly(tmp_path):
    """Shortest round-trip floats and empty NaN cells survive the CSV"""
    grid = FrequencyGrid.build(1, "coarse")
    value = complex(0.1 + 0.2, -1.0 / 3.0)
    samples = [
        DeterminantSample("D_s", value, (0.6, 0.8), 1e-3),
        DeterminantSample("D_m", complex(np.nan, np.nan), (0.6, 0.8), 2e-1, "hp-gap"),
    ]
    path = tmp_path / "samples.csv"
    write_frame(path, StabilityReport(samples, grid, "transversal").to_frame())
    back = read_samples(path)

    assert back[0].value == value, "floats must round-trip bit for bit"
    assert back[0].zeta_hat == (0.6, 0.8)
    assert back[1].flag == "hp-gap"
    assert nan_equal(back[1].value, complex(np.nan, np.nan))
    assert path.read_bytes().count(b"\r") == 0, "lines end with a bare newline"


def test_nan_equal():
    assert nan_equal(1 + 1j, 1 + 1j)
    assert not nan_equal(complex(np.nan, 0.0), 0j)
