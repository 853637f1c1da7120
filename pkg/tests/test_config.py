import numpy as np
import pytest

from bench import A, A_R, B, B_R
from cmrac import config
from cmrac.errors import ConfigError

SEC5 = config.preset_text("paper_sec5")


def edit(old, new, text=SEC5):
    assert old in text
    return text.replace(old, new)


def line_of(text, needle):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if needle in ln)


@pytest.mark.parametrize("name", config.PRESETS)
def test_presets_round_trip(name):
    sc = config.load_preset(name)
    d = sc.to_dict()
    assert config.parse_scenario(d).to_dict() == d
    again = config.loads(config.dumps(sc), "dumped.yaml")
    assert again.to_dict() == d


def test_preset_matches_benchmark(sec5):
    np.testing.assert_array_equal(sec5.plant.A, A)
    np.testing.assert_array_equal(sec5.plant.B, B)
    np.testing.assert_array_equal(sec5.reference.A_r, A_R)
    np.testing.assert_array_equal(sec5.reference.B_r, B_R)
    cs = sec5.constraints
    assert (cs.x_bar, cs.u_bar, cs.xa_bar, cs.d_bar, cs.kx_bar, cs.kr_bar) == (6.5, 12.0, 6.4, 1.2, 1.6, 0.6)
    assert sec5.t_end == 40.0 and sec5.dt == 1e-3
    assert sec5.disturbance.onset == 20.0 and sec5.disturbance.norm_cap == 1.2
    assert np.linalg.norm(sec5.x0) < 6.5


def test_law_selects_gains(sec5):
    np.testing.assert_array_equal(sec5.gains("blf").gamma_x, 5 * np.eye(2))
    np.testing.assert_array_equal(sec5.gains("classical").gamma_x, 15 * np.eye(2))
    assert sec5.gains("classical").law == "classical"
    np.testing.assert_array_equal(sec5.gains("blf").P, sec5.gains("classical").P)


def test_sim_config_overrides(sec5):
    cfg = sec5.sim_config("classical", t_end=1.5)
    assert cfg.t_end == 1.5 and cfg.controller_law == "classical"
    assert sec5.sim_config().controller_law == "blf"


def test_scalar_matrix_shortcut():
    sc = config.load_preset("degenerate")
    np.testing.assert_array_equal(sc.Q, np.eye(4))
    np.testing.assert_array_equal(sc.gamma_x, 5 * np.eye(2))
    text = edit("gamma_x: [[5, 0], [0, 5]]", "gamma_x: 5")
    np.testing.assert_array_equal(config.loads(text).gamma_x, 5 * np.eye(2))


def test_defaults():
    text = edit("    cap: 1.2\n", "")
    sc = config.loads(text)
    assert sc.disturbance.norm_cap == 1.2
    np.testing.assert_array_equal(sc.sim_config().khat_x0, np.zeros((2, 4)))


def test_digest_tracks_text():
    a = config.loads(SEC5)
    b = config.loads(SEC5 + "\n# trailing comment\n")
    assert a.digest == config.digest_text(SEC5)
    assert a.digest != b.digest


def test_resolve(tmp_path):
    assert config.resolve("paper_sec5").name == "paper_sec5"
    p = tmp_path / "s.yaml"
    p.write_text(edit("name: paper_sec5", "name: custom"))
    sc = config.resolve(str(p))
    assert sc.name == "custom" and str(p) in sc.source
    with pytest.raises(ConfigError):
        config.resolve(str(tmp_path / "missing.yaml"))
    with pytest.raises(ConfigError):
        config.load_preset("nope")


@pytest.mark.parametrize(
    "old, new, needle, fragment",
    [
        ("u_bar: 12.0", "u_bar: -1", "u_bar", "u_bar"),
        ("law: blf", "law: fancy", "law:", "law"),
        ("xa_bar: 6.4", "xa_bar: 7.0", "constraints:", "xa_bar"),
        ("  gamma_x: [[5, 0], [0, 5]]", "  gamma_x: [[5, 0], [0, -5]]", "gamma_x: [[5, 0], [0, -5]]", "gamma_x"),
        ("cap: 1.2", "cap: 2.0", "cap:", "cap"),
        ("t_end: 40", "t_end: soon", "t_end", "t_end"),
        ("log_stride: 10", "log_stride: 2.5", "log_stride", "log_stride"),
        ("A: [[0, 1, 0, 0],", "A: [[0, 1, 0],", "  A: [[0, 1, 0],", "A"),
    ],
)
def test_errors_name_the_line(old, new, needle, fragment):
    text = edit(old, new)
    with pytest.raises(ConfigError) as err:
        config.loads(text, "case.yaml")
    where = err.value.where
    assert where.startswith("case.yaml:")
    assert int(where.split(":")[1]) == line_of(text, needle)
    assert fragment in str(err.value)


def test_syntax_error_and_missing_section():
    with pytest.raises(ConfigError, match="case.yaml:1"):
        config.loads("a: [1,", "case.yaml")
    with pytest.raises(ConfigError, match="missing section 'plant'"):
        config.loads("name: x\n", "case.yaml")
    with pytest.raises(ConfigError):
        config.loads("- just\n- a list\n", "case.yaml")


def test_x0_must_respect_x0_bar():
    text = edit("kr_bar: 0.6}", "kr_bar: 0.6, x0_bar: 5.0}")
    with pytest.raises(ConfigError, match="x0"):
        config.loads(text)

