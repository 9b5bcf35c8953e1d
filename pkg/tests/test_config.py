import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdilab.config import (
    ConfigError,
    RunConfig,
    evaluate_constant,
    load_config,
    parse_arcs,
    parse_config_text,
    parse_expression,
)

from conftest import disk, square


def test_expression_evaluation():
    f = parse_expression("1 + x**2 * sin(pi*y)")
    x, y = np.array([0.5]), np.array([0.5])
    assert f(x=x, y=y)[0] == pytest.approx(1.25)
    assert parse_expression("-theta")(theta=np.array([2.0]))[0] == -2.0


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "open", "z + 1", "x[0]", "1 +"])
def test_expression_rejects_unsafe_or_unknown(bad):
    with pytest.raises(ValueError):
        parse_expression(bad)


def test_constants_and_sequences():
    assert evaluate_constant("2*pi") == pytest.approx(2 * np.pi)
    assert np.allclose(evaluate_constant("logspace(-2, -1, 3)"), [0.01, 10**-1.5, 0.1])
    assert evaluate_constant("0.1, 0.2") == (0.1, 0.2)


def test_arc_parsing():
    g = square(32)
    assert parse_arcs("full", g).is_full
    a = parse_arcs("0:0.5, 2.5:3", g)
    assert a.to_list() == [[0.0, 0.5], [2.5, 3.0]]
    d = parse_arcs("pi/2 + 0.3 : 3*pi/2 - 0.3", disk(32))
    assert d.length == pytest.approx(np.pi - 0.6)
    with pytest.raises(ValueError):
        parse_arcs("0-1", g)


def test_config_parsing_and_roundtrip():
    text = "\n".join([
        "# comment", "command = sweep", "n = 32", "sigma = exp_decay",
        "eps = logspace(-2, -1, 5)", "gamma = 2:5", "gamma_prime = 2.07:4.93", "alpha = 0.5",
    ])
    cfg = parse_config_text(text)
    assert cfg.n == 32 and len(cfg.eps) == 5
    assert np.allclose(cfg.sigma_field().values[0], 1.0)
    again = parse_config_text(cfg.to_text())
    assert again == cfg


@pytest.mark.parametrize("text,fragment", [
    ("n = 32\nbogus = 1", "unknown key"),
    ("n = 32\nn = 64", "duplicate key"),
    ("n = 48", "power of two"),
    ("n = 1024", "power of two"),
    ("sigma = 1 - 2*x", "positive"),
    ("command = decompose\nn = 32", "needs sigma_tilde or eps"),
    ("command = sweep\nn = 32\neps = 0.1, 0.2", "four distinct"),
    ("n = 32\ngamma = 0:1\ngamma_prime = 0:1", "margin"),
    ("command = ampere\nn = 32\nf = y\neps = 0.1", "geometry mismatch"),
    ("n = 32\neps = 0.1\nbump_radius = 0.49", "perturbation"),
    ("command = fly", "command"),
    ("just text", "key = value"),
])
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert any(fragment in e for e in exc.value.errors)


def test_gamma_prime_default_is_shrunk_gamma():
    cfg = parse_config_text("n = 32\ngamma = 0:1")
    gp = cfg.gamma_prime_set().to_list()
    assert gp == [[pytest.approx(2 / 32), pytest.approx(1 - 2 / 32)]]


def test_square_theta_is_about_the_centre():
    cfg = parse_config_text("n = 32\nf = cos(theta)")
    f = cfg.boundary_values()
    g = cfg.grid
    idx = g.boundary_index
    x, y = g.x[idx[:, 0], idx[:, 1]], g.y[idx[:, 0], idx[:, 1]]
    assert np.allclose(f, np.cos(np.arctan2(y - 0.5, x - 0.5)))


def test_shipped_configs_are_valid():
    import pathlib

    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.cfg"))
    assert len(files) >= 6
    for p in files:
        load_config(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 9), st.floats(0.05, 1.0), st.floats(0.1, 3.0), st.sampled_from(["sum_gradient", "exact_gradient"]))
def test_roundtrip_property(k, alpha, factor, mode):
    cfg = RunConfig(n=2**k, alpha=alpha, level_factor=factor, mode=mode, eps=(0.01, 0.02), sigma="1 + 0.1*x")
    again = parse_config_text(cfg.to_text(), strict=False)
    assert again == cfg
