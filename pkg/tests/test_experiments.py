import numpy as np
import pytest

from aacca.errors import ConfigError
from aacca.experiments import (
    CONFIG_NAMES,
    SynthSettings,
    build_pairing,
    parse_config_list,
    parse_variant,
    run_beta_sweep,
    split_cells,
    synth_scene,
    window_pairs,
)
from aacca.linalg import center_columns
from aacca.pairing import PairingMode

SMALL = SynthSettings(rows=8, cols=8, d=12, k=4)


def test_config_names_mirror_the_table():
    assert CONFIG_NAMES == ("standard", "sup+ca", "semisup", "semisup+ca",
                            "res", "res+sup+ca", "res+semisup", "res+semisup+ca")


@pytest.mark.parametrize("name,relaxed,semisup,context", [
    ("standard", False, False, False), ("sup+ca", False, False, True),
    ("semisup+ca", False, True, True), ("res", True, False, False),
    ("res+semisup+ca", True, True, True),
])
def test_parse_variant(name, relaxed, semisup, context):
    v = parse_variant(name)
    assert (v.relaxed, v.semisup, v.context) == (relaxed, semisup, context)


def test_unknown_config_lists_valid_names():
    with pytest.raises(ConfigError, match="res\\+semisup\\+ca"):
        parse_config_list("res,bogus")


def test_split_is_a_partition():
    s = split_cells(100, 0.5, 0.25, seed=3)
    allidx = np.concatenate([s.train, s.dev, s.unlabeled])
    assert sorted(allidx.tolist()) == list(range(100))
    assert (s.train.size, s.dev.size, s.unlabeled.size) == (38, 12, 50)


def test_window_pairs():
    pairs = window_pairs(3, 3, np.arange(9), 1)
    assert len(pairs) == 4 * 4 + 4 * 6 + 9  # corners, edges, center
    assert (4, 0) in pairs and (0, 8) not in pairs
    assert window_pairs(3, 3, np.array([0, 8]), 1) == [(0, 0), (8, 8)]


@pytest.mark.parametrize("name", CONFIG_NAMES)
def test_pairings_are_bounded(name):
    scene = synth_scene("residual", 0, SMALL)
    split = split_cells(scene.n, SMALL.labeled_fraction, SMALL.dev_fraction, 0)
    u, v = center_columns(scene.features_r), center_columns(scene.features_t)
    d = build_pairing(parse_variant(name), scene, u, v, split, SMALL, 0).toarray()
    assert d.min() >= -1 and d.max() <= 1
    # dev and unlabeled labels never leak into a supervised pairing
    if "semisup" not in name:
        hidden = np.concatenate([split.dev, split.unlabeled])
        assert not d[hidden].any() and not d[:, hidden].any()


def test_strict_modes_stay_diagonal():
    scene = synth_scene("strong", 1, SMALL)
    split = split_cells(scene.n, 0.5, 0.25, 1)
    u, v = center_columns(scene.features_r), center_columns(scene.features_t)
    d = build_pairing(parse_variant("semisup"), scene, u, v, split, SMALL, 1)
    assert d.mode is PairingMode.STRICT
    dense = d.toarray()
    assert not (dense - np.diag(np.diag(dense))).any()


def test_beta_sweep_rows_and_first_iteration_count():
    results = run_beta_sweep("residual", parse_variant("sup+ca"), [0.0, 1e-3, 1e-2, 1e-1], 0, SMALL)
    assert len(results) == 4
    assert results[0].trace.iterations == 1


def test_empty_beta_grid():
    with pytest.raises(ConfigError):
        run_beta_sweep("residual", parse_variant("sup+ca"), [], 0, SMALL)


def test_unknown_regime():
    with pytest.raises(ConfigError):
        synth_scene("mild", 0, SMALL)
