"""Tests for star-graph flows: specs, labelers, kernels and the Walsh flow."""

from fractions import Fraction

import pytest

from graphflow_engine.core import ConfigError
from graphflow_engine.noise import NoiseField
from graphflow_engine.starflow import (
    ExcursionLabeler,
    MixtureAtom,
    StarFlow,
    StarGraphSpec,
    StarPoint,
    half_case_kernel,
    validate_labeler,
)
from graphflow_engine.suites import walsh_kernel_labeler, walsh_spec

DELTA = 2**-3
STARTS = (StarPoint.center(), StarPoint(edge=1, radius=0.25), StarPoint(edge=3, radius=0.5))


def _noise(seed: int) -> NoiseField:
    return NoiseField(seed=seed, n_max=6, horizon=(0, 1))


def test_star_spec_sides_and_skewness() -> None:
    spec = walsh_spec()

    assert spec.n == 3
    assert spec.n_minus == 1
    assert spec.alpha_plus == Fraction(3, 5)
    assert spec.beta == pytest.approx(0.2)
    assert spec.side_edges(+1) == (1, 2)
    assert spec.side_edges(-1) == (3,)
    assert spec.side_weights(+1) == (Fraction(1, 2), Fraction(1, 2))
    assert spec.sign(3) == -1


def test_star_spec_rejects_bad_alpha() -> None:
    with pytest.raises(ConfigError, match="alpha sum"):
        StarGraphSpec(alpha=(Fraction(1, 2), Fraction(1, 4)), n_plus=1)
    with pytest.raises(ConfigError):
        StarGraphSpec(alpha=(Fraction(1),), n_plus=2)
    with pytest.raises(ConfigError):
        StarGraphSpec.from_spec({"alpha": [0.5, 0.5], "n_plus": 1, "n_minus": 2})


def test_star_spec_from_spec_reads_decimal_alphas_exactly() -> None:
    spec = StarGraphSpec.from_spec({"alpha": [0.3, 0.3, 0.4], "n_plus": 2})

    assert spec == walsh_spec()


def test_builtin_labelers_are_valid() -> None:
    spec = walsh_spec()

    assert validate_labeler(ExcursionLabeler.mapping(spec), spec) == []
    assert validate_labeler(ExcursionLabeler.wiener(spec), spec) == []
    assert validate_labeler(walsh_kernel_labeler(), spec) == []


def test_validate_labeler_reports_moment_mismatch() -> None:
    spec = walsh_spec()
    lopsided = ExcursionLabeler.kernel(
        m_plus=(MixtureAtom((Fraction(1), Fraction(0)), Fraction(1)),),
        m_minus=(MixtureAtom((Fraction(1),), Fraction(1)),),
    )

    problems = validate_labeler(lopsided, spec)

    assert any("moment of coordinate 1" in p for p in problems)
    with pytest.raises(ConfigError):
        StarFlow(spec, lopsided, _noise(0), DELTA)


def test_labeler_from_spec() -> None:
    spec = walsh_spec()
    labeler = ExcursionLabeler.from_spec(
        {
            "mode": "kernel",
            "m_plus": [
                {"point": ["1/2", "1/2"], "weight": "1/2"},
                {"point": [1, 0], "weight": "1/4"},
                {"point": [0, 1], "weight": "1/4"},
            ],
            "m_minus": [{"point": [1], "weight": 1}],
        },
        spec,
    )

    assert labeler == walsh_kernel_labeler()
    with pytest.raises(ConfigError):
        ExcursionLabeler.from_spec({"mode": "bogus"}, spec)


@pytest.mark.parametrize("mode", ["mapping", "kernel", "wiener"])
def test_kernel_atoms_share_the_radial_position(mode: str) -> None:
    spec = walsh_spec()
    labeler = {
        "mapping": ExcursionLabeler.mapping(spec),
        "kernel": walsh_kernel_labeler(),
        "wiener": ExcursionLabeler.wiener(spec),
    }[mode]

    for seed in range(5):
        star = StarFlow(spec, labeler, _noise(seed), DELTA)
        for x in STARTS:
            value = star.kernel(0, x, 1)
            signed = star.radial_value(0, x, 1)
            assert value.mass == 1
            assert all(a.radius == abs(signed) for a in value.atoms)
            if signed > 0:
                assert all(a.edge in (1, 2) for a in value.atoms)
            elif signed < 0:
                assert all(a.edge == 3 for a in value.atoms)
            else:
                assert [a.edge for a in value.atoms] == [None]


def test_kernel_flow_property_on_a_star() -> None:
    spec = walsh_spec()

    for seed in range(6):
        star = StarFlow(spec, walsh_kernel_labeler(), _noise(seed), DELTA)
        for x in STARTS:
            direct = star.kernel(0, x, 1)
            composed = star.compose(star.kernel(0, x, Fraction(1, 2)), Fraction(1, 2), 1)
            assert composed == direct


def test_walsh_flow_of_mappings_composes() -> None:
    spec = walsh_spec()

    for seed in range(6):
        star = StarFlow(spec, ExcursionLabeler.mapping(spec), _noise(seed), DELTA)
        for x in STARTS:
            mid = star.phi(0, x, Fraction(1, 4))
            assert star.phi(Fraction(1, 4), mid, 1) == star.phi(0, x, 1)


def test_phi_needs_a_mapping_labeler() -> None:
    spec = walsh_spec()
    star = StarFlow(spec, walsh_kernel_labeler(), _noise(0), DELTA)

    with pytest.raises(ConfigError):
        star.phi(0, StarPoint.center(), 1)


def test_per_edge_channels_give_a_flow_of_mappings() -> None:
    spec = walsh_spec()
    channels = ("W:e1", "W:e2", "W:e3")
    noise = NoiseField.for_edges(
        seed=3, n_max=6, horizon=(0, 1), edge_ids=["e1", "e2", "e3"], channels="per-edge"
    )

    star = StarFlow(spec, ExcursionLabeler.mapping(spec), noise, DELTA, channels=channels)

    for x in STARTS:
        assert len(star.kernel(0, x, 1).atoms) == 1
    with pytest.raises(ConfigError):
        StarFlow(spec, walsh_kernel_labeler(), noise, DELTA, channels=channels)


def test_half_case_kernel_follows_the_plain_walk() -> None:
    spec = StarGraphSpec(alpha=(Fraction(1, 4), Fraction(1, 4), Fraction(1, 2)), n_plus=2)
    noise = _noise(7)

    value = half_case_kernel(spec, noise, 0, StarPoint.center(), 1, delta=DELTA)

    walk = noise.walk_prefix("W", 6)
    assert value.mass == 1
    assert value.radius == abs(int(walk[64])) * DELTA
    with pytest.raises(ConfigError):
        half_case_kernel(walsh_spec(), noise, 0, StarPoint.center(), 1, delta=DELTA)
