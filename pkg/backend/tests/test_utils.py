import json

import pytest

from backend.app.data_loader import load_ratings
from backend.app.synthetic import generate_synthetic
from backend.app.utils.logger_utils import format_key_values, save_json_log, write_key_values
from backend.app.utils.seeding import derive_seed


def test_derive_seed_is_stable_and_stage_specific():
    assert derive_seed(42, "split") == derive_seed(42, "split")
    assert derive_seed(42, "split") != derive_seed(42, "zeros")
    assert derive_seed(42, "init") != derive_seed(43, "init")
    assert 0 <= derive_seed(0, "partition") < 2**32


def test_derive_seed_rejects_unknown_stage():
    with pytest.raises(ValueError):
        derive_seed(0, "shuffle")


def test_key_values(tmp_path):
    text = format_key_values({"method": "pecf", "wmse": 1 / 3, "rounds": 5})
    assert text == "method=pecf\nwmse=0.3333333333\nrounds=5\n"
    path = write_key_values(tmp_path / "out" / "summary.txt", {"a": 1})
    assert path.read_text() == "a=1\n"


def test_json_log_is_sorted(tmp_path):
    path = save_json_log(tmp_path, "config", {"b": 1, "a": [1, 2]})
    assert path.name == "config.json"
    assert list(json.loads(path.read_text())) == ["a", "b"]


def test_synthetic_file(tmp_path):
    path = generate_synthetic(tmp_path / "s.csv", m=50, n=40, blocks=2, d_true=3, noise=0.2, seed=5)
    frame = load_ratings(path)
    assert (frame["rating"] == 5.0).all()
    assert frame["user_id"].astype(int).between(1, 50).all()
    assert frame["item_id"].astype(int).between(1, 40).all()
    assert abs(len(frame) - 0.1 * 50 * 40) <= 4
    again = generate_synthetic(tmp_path / "t.csv", m=50, n=40, blocks=2, d_true=3, noise=0.2, seed=5)
    assert path.read_bytes() == again.read_bytes()


def test_synthetic_rejects_bad_parameters(tmp_path):
    with pytest.raises(ValueError):
        generate_synthetic(tmp_path / "s.csv", m=1, n=40, blocks=2, d_true=3, noise=0.2, seed=5)
    with pytest.raises(ValueError):
        generate_synthetic(tmp_path / "s.csv", m=10, n=10, blocks=1, d_true=0, noise=0.2, seed=5)
