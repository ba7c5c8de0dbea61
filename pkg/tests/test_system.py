import json

import numpy as np
import pytest

from singular_flow.errors import DimensionMismatch, ExprSyntaxError, SchemaError, TooFewSamples, UnknownIdentifier
from singular_flow.integrator import Trajectory
from singular_flow.mechanics import LagrangianSpec, SkinnerRuskSpec
from singular_flow.system import (ImplicitResiduals, LinSingSystem, SecondOrderSystem, check_solution_samples,
                                  load_system, residual, serialize)

OSC2 = {"kind": "second_order", "states": ["q"], "A": [["1"]], "c": ["q"]}


def test_load_pendulum(specs_dir):
    sys = load_system(specs_dir / "pendulum.json")
    assert isinstance(sys, LinSingSystem) and sys.time_dependent
    assert sys.chart.state_names == ("x", "y", "vx", "vy", "tau")
    assert sys.chart.parameters == {"g": 9.8}
    # with tau = 0 the only force is gravity
    r = residual(sys, [0.0, 1.0, 0.0, 0.0, 0.1, 0.0], [0.0, 0.1, 0.0, -9.8, 0.0])
    np.testing.assert_allclose(r, 0.0, atol=1e-15)


def test_load_other_kinds():
    assert isinstance(load_system(OSC2), SecondOrderSystem)
    lag = load_system({"kind": "lagrangian", "q": ["q"], "L": "0.5*v_q^2"})
    assert type(lag) is LagrangianSpec and lag.v_names == ("v_q",)
    assert isinstance(load_system({"kind": "skinner_rusk", "q": ["q"], "L": "0.5*v_q^2"}), SkinnerRuskSpec)
    imp = load_system({"kind": "implicit", "states": ["q"], "F": ["v_q - 1"]})
    assert isinstance(imp, ImplicitResiduals)
    text = json.dumps({"kind": "linearly_singular", "autonomous": True, "states": ["x"], "A": [["1"]], "b": ["x"]})
    sys = load_system(text)
    assert not sys.time_dependent
    np.testing.assert_allclose(sys.matrices_float([2.0])[1], [2.0])


@pytest.mark.parametrize("doc", [
    {},
    {"kind": "nonsense"},
    {"kind": "linearly_singular", "states": ["x"], "A": [["1"]]},
    {"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "c": ["x"], "parameters": {"g": "fast"}},
    {"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "b": ["x"]},
    {"kind": "linearly_singular", "states": ["x", "x"], "A": [["1", "0"]], "c": ["x"]},
])
def test_schema_errors(doc):
    with pytest.raises(SchemaError):
        load_system(doc)


def test_dimension_errors():
    with pytest.raises(DimensionMismatch):
        load_system({"kind": "linearly_singular", "states": ["x", "y"], "A": [["1"]], "c": ["x"]})
    with pytest.raises(DimensionMismatch):
        load_system({"kind": "linearly_singular", "states": ["x"], "A": [["1"], ["1"]], "c": ["x"]})


def test_expression_errors_carry_field_path():
    with pytest.raises(UnknownIdentifier) as info:
        load_system({"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "c": ["x + w"]})
    assert "c[0]" in str(info.value)
    with pytest.raises(ExprSyntaxError) as info:
        load_system({"kind": "linearly_singular", "states": ["x"], "A": [["x +"]], "c": ["x"]})
    assert "A[0][0]" in str(info.value)


@pytest.mark.parametrize("name", ["pendulum.json", "regular_oscillator.json", "inconsistent.json"])
def test_serialize_round_trip(specs_dir, name):
    sys = load_system(specs_dir / name)
    doc = serialize(sys)
    again = load_system(json.loads(json.dumps(doc)))
    assert serialize(again) == doc


def test_residual_signs():
    sys = load_system({"kind": "linearly_singular", "states": ["x"], "A": [["2"]], "c": ["-t"]})
    np.testing.assert_allclose(residual(sys, [3.0, 0.0], [1.5]), [0.0])
    np.testing.assert_allclose(residual(sys, [3.0, 0.0], [0.0]), [-3.0])
    with pytest.raises(DimensionMismatch):
        residual(sys, [0.0], [1.0])


def _traj(names, fn, t):
    return Trajectory(tuple(names), t, np.array([fn(s) for s in t]), np.zeros(len(t)))


def test_check_solution_samples_second_order():
    t = np.linspace(0, 1, 2001)
    sys = load_system(OSC2)
    good = check_solution_samples(sys, _traj(["q", "v_q"], lambda s: [np.cos(s), -np.sin(s)], t))
    assert len(good) == len(t) - 2 and all(r.ok for r in good)
    bad = check_solution_samples(sys, _traj(["q", "v_q"], lambda s: [np.cos(s), np.sin(s)], t))
    assert not any(r.ok for r in bad[10:])


def test_check_solution_samples_nonuniform_and_time_dependent():
    rng = np.random.default_rng(0)
    t = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, 3000)]))
    sys = load_system({"kind": "linearly_singular", "states": ["x"], "A": [["1"]], "c": ["-t"]})
    res = check_solution_samples(sys, _traj(["x"], lambda s: [0.5 * s * s], t), tol=1e-6)
    assert all(r.ok for r in res)


def test_check_lagrangian_and_too_few_samples():
    lag = load_system({"kind": "lagrangian", "q": ["q"], "L": "0.5*v_q^2 - 0.5*q^2"})
    t = np.linspace(0, 1, 1001)
    res = check_solution_samples(lag, _traj(["t", "q", "v_q"], lambda s: [s, np.cos(s), -np.sin(s)], t))
    assert all(r.ok for r in res)
    with pytest.raises(TooFewSamples):
        check_solution_samples(lag, _traj(["t", "q", "v_q"], lambda s: [s, 1.0, 0.0], t[:2]))
