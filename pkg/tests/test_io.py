import numpy as np

from petzlab.io import (canonical_hash, fmt, read_csv, read_trajectory_csv, write_csv,
                        write_json, write_trajectory_csv)
from petzlab.linalg import SM, SX, ket, projector
from petzlab.lindblad import Lindbladian, propagate


def test_float_formatting_roundtrips():
    for x in (0.1, 1 / 3, -2.5e-17, 1e300):
        assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt(np.int64(4)) == "4" and fmt("Z") == "Z"


def test_trajectory_csv_roundtrip(tmp_path):
    traj = propagate(Lindbladian(SX, (0.5 * SM,)), projector(ket("0")), 0.0, 1.0, 10)
    path = write_trajectory_csv(tmp_path / "t.csv", traj)
    times, states = read_trajectory_csv(path)
    assert np.array_equal(times, traj.times)
    assert np.array_equal(states, traj.states)


def test_csv_and_hash(tmp_path):
    write_csv(tmp_path / "a.csv", ["t", "v"], [(0, 1.5), (1, 2)])
    header, rows = read_csv(tmp_path / "a.csv")
    assert header == ["t", "v"] and rows == [["0", "1.5"], ["1", "2"]]
    assert canonical_hash({"b": 1, "a": np.float64(2.0)}) == canonical_hash({"a": 2.0, "b": 1})
    text = write_json(tmp_path / "s.json", {"z": 1 + 2j, "arr": np.arange(2)}).read_text()
    assert '"z": [\n    1.0,\n    2.0\n  ]' in text
