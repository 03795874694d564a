import json
import math

import numpy as np
import pytest

from src.core.error_handler import ConfigError
from src.core.utils import FileUtils, TimeUtils, derive_seed, parse_dose


def test_derive_seed_is_stable_and_order_sensitive():
    assert derive_seed(1234, 3, 7) == derive_seed(1234, 3, 7)
    assert derive_seed(1234, 3, 7) != derive_seed(1234, 7, 3)
    assert 0 <= derive_seed("sweep", math.inf) < 2 ** 63


@pytest.mark.parametrize("text, expected", [
    ("inf", math.inf),
    ("Infinity", math.inf),
    (" 250 ", 250.0),
    (100, 100.0),
])
def test_parse_dose(text, expected):
    assert parse_dose(text) == expected


def test_parse_dose_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_dose("lots")
    with pytest.raises(ConfigError):
        parse_dose(None)


def test_json_files_stay_strict(tmp_path):
    path = FileUtils.write_json_file(str(tmp_path / "nested" / "out.json"), {
        "dose": math.inf,
        "psnr": math.nan,
        "values": np.array([1.0, 2.0]),
        "scalar": np.float32(0.5),
    })
    text = open(path, encoding="utf-8").read()
    assert "Infinity" not in text and "NaN" not in text
    assert json.loads(text) == {"dose": "inf", "psnr": None, "values": [1.0, 2.0], "scalar": 0.5}
    assert FileUtils.read_json_file(path)["dose"] == "inf"


def test_append_json_lines(tmp_path):
    path = str(tmp_path / "metrics.jsonl")
    FileUtils.append_json_line(path, {"step": 0, "total": 1.5})
    FileUtils.append_json_line(path, {"step": 1, "total": -math.inf})
    lines = open(path, encoding="utf-8").read().splitlines()
    assert [json.loads(line)["step"] for line in lines] == [0, 1]
    assert json.loads(lines[1])["total"] == "-inf"


def test_humanize_duration():
    assert TimeUtils.humanize_duration(0) == "0s"
    assert TimeUtils.humanize_duration(3725) == "1h 2m 5s"
    assert TimeUtils.humanize_duration(-4) == "0s"
    assert TimeUtils.utc_now_iso().endswith("+00:00")
