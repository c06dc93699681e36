import json

import pytest

from conftest import AFFINE, make_problem
from nlinclusion.config import load_config, parse_config
from nlinclusion.errors import ConfigurationError, GeometryError


@pytest.mark.parametrize(
    "patch, field",
    [
        ({"order": 3}, "order"),
        ({"order": "twelve"}, "order"),
        ({"alpha": 1.0}, "alpha"),
        ({"seed": -4}, "seed"),
        ({"schema_version": 2}, "schema_version"),
        ({"solver": {"tolerance": 1e-9}}, "solver"),
        ({"epsilon_grid": {"n": 4, "step": 2}}, "epsilon_grid"),
        ({"outer": {"kind": "cube"}}, "outer"),
    ],
)
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ConfigurationError, match=field):
        parse_config({**AFFINE, **patch})


def test_parse_error_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "order": 8\n  "alpha": 0.5\n}')
    with pytest.raises(ConfigurationError, match="line 3"):
        load_config(p)


def test_round_trip(tmp_path):
    cfg = parse_config(AFFINE)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert load_config(p) == cfg


def test_affine_zeta_is_made_admissible():
    problem = make_problem({**AFFINE, "data": {"family": "affine", "a": 0.2, "b": 2.0, "c": 0.0}, "f_outer": [[[0, 0, 0], 1.0]]})
    assert problem.data.zeta_i == pytest.approx(0.4)


def test_inadmissible_data_rejected():
    with pytest.raises(ConfigurationError, match="admissible"):
        make_problem({**AFFINE, "data": {"family": "affine", "a": 0.0, "b": 1.0, "c": 0.0, "zeta_i": 0.5}})


def test_grid_outside_window_rejected():
    with pytest.raises(GeometryError):
        make_problem({**AFFINE, "epsilon_grid": [0.5, 1.5]})


def test_samples_datum_length_checked():
    with pytest.raises(ConfigurationError, match="samples"):
        make_problem({**AFFINE, "f_outer": {"samples": [0.0, 1.0]}})
