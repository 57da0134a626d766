import json
import math

import pytest

from gatenoise import io
from gatenoise.spectra import PowerLaw, WhiteCutoff, variance


def test_sequence_by_angle_and_duration():
    seq = io.sequence_from_dict({"segments": [
        {"axis": "x", "rate": 2.0, "angle": -math.pi},
        {"axis": "i", "duration": 0.5},
    ]})
    assert seq.segments[0].rate == -2.0
    assert seq.segments[0].duration == pytest.approx(math.pi / 2)
    assert seq.tau == pytest.approx(math.pi / 2 + 0.5)


@pytest.mark.parametrize("bad", [
    {},
    {"segments": [{"axis": "x", "rate": 1.0}]},
    {"segments": [{"axis": "q", "rate": 1.0, "duration": 1.0}]},
    {"segments": [{"axis": "x", "rate": 1.0, "duration": -1.0}]},
])
def test_bad_sequences_raise_config_error(bad):
    with pytest.raises(io.ConfigError):
        io.sequence_from_dict(bad)


def test_spectrum_loading(tmp_path):
    s = io.load_spectrum('{"type": "white_cutoff", "alpha": 2, "omega_c": 3}')
    assert s == WhiteCutoff(2.0, 3.0)
    s = io.spectrum_from_dict({"type": "power_law", "exponent": 2, "omega_max": 10}, tau=2.0)
    assert isinstance(s, PowerLaw) and s.omega_min == pytest.approx(5e-4)
    s = io.spectrum_from_dict({"type": "white_cutoff", "omega_c": 3, "rms": 0.2})
    assert math.sqrt(variance(s)) == pytest.approx(0.2)
    f = tmp_path / "tab.csv"
    f.write_text("omega,S\n0,1\n2,0\n")
    s = io.spectrum_from_dict({"type": "tabulated", "file": str(f)})
    assert variance(s) == pytest.approx(1 / math.pi)
    with pytest.raises(io.ConfigError):
        io.spectrum_from_dict({"type": "power_law", "exponent": 2})
    with pytest.raises(io.ConfigError):
        io.spectrum_from_dict({"type": "pink"})
    with pytest.raises(io.ConfigError):
        io.load_spectrum(str(tmp_path / "missing.json"))


def test_csv_has_schema_line():
    text = io.csv_text("mc", [{"trajectory_index": 0, "fidelity": 0.5}])
    lines = text.splitlines()
    assert lines[0].startswith("# gatenoise mc schema v1")
    assert lines[1] == "trajectory_index,fidelity"
    assert lines[2] == "0,0.5"


def test_json_text_is_sorted():
    assert json.loads(io.json_text({"b": 1, "a": 2})) == {"a": 2, "b": 1}
    assert io.json_text({"b": 1, "a": 2}).index('"a"') < io.json_text({"b": 1, "a": 2}).index('"b"')


def test_atomic_outputs(tmp_path):
    out = io.AtomicOutputs()
    out.add(tmp_path / "a.txt", "one")
    out.add(tmp_path / "sub" / "b.txt", "two")
    out.commit()
    assert (tmp_path / "a.txt").read_text() == "one"
    assert (tmp_path / "sub" / "b.txt").read_text() == "two"
    assert not list(tmp_path.glob(".*.tmp"))
