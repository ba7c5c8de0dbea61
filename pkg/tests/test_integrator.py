import io

import numpy as np
import pytest

from singular_flow.autonomize import autonomize
from singular_flow.engine import run_constraint_algorithm
from singular_flow.errors import OffManifold, StepRejected
from singular_flow.integrator import integrate, read_csv, write_csv
from singular_flow.system import load_system

OSC = {"kind": "second_order", "states": ["q"], "A": [["1"]], "c": ["q"]}


@pytest.fixture(scope="module")
def oscillator():
    sys = autonomize(load_system(OSC), "vector_hull")
    return run_constraint_algorithm(sys, [[0.0, 1.0, 0.0]])


def endpoint_error(result, dt):
    traj = integrate(result, [0.0, 1.0, 0.0], (0.0, 2 * np.pi), dt)
    return np.max(np.abs(traj.states[-1, 1:] - [1.0, 0.0]))


def test_oscillator_one_period(oscillator):
    traj = integrate(oscillator, [0.0, 1.0, 0.0], (0.0, 2 * np.pi), 1e-3)
    t = traj.times
    np.testing.assert_allclose(traj.column("q"), np.cos(t), atol=1e-6)
    np.testing.assert_allclose(traj.column("v_q"), -np.sin(t), atol=1e-6)
    assert traj.column("t")[-1] == pytest.approx(2 * np.pi, abs=1e-15)
    assert np.all(np.diff(traj.times) > 0)


def test_rk4_convergence_order(oscillator):
    ratio = endpoint_error(oscillator, 0.1) / endpoint_error(oscillator, 0.05)
    assert 12 <= ratio <= 20


def test_zero_field_is_constant():
    sys = load_system({"kind": "linearly_singular", "autonomous": True, "states": ["x", "y"],
                       "A": [["1", "0"], ["0", "1"]], "b": ["0", "0"]})
    res = run_constraint_algorithm(sys, [[0.5, -2.0]])
    traj = integrate(res, [0.5, -2.0], (0.0, 1.0), 0.1)
    assert np.all(traj.states == [0.5, -2.0])


def test_constant_radius_equilibrium_at_bottom(specs_dir):
    sys = autonomize(load_system(specs_dir / "pendulum_constant_R.json"))
    bottom = [0.0, 0.0, -1.0, 0.0, 0.0, 9.8]
    res = run_constraint_algorithm(sys, [bottom])
    traj = integrate(res, bottom, (0.0, 10.0), 0.02)
    assert traj.max_drift <= 1e-10
    assert np.max(np.abs(traj.states[:, 1:] - bottom[1:])) <= 1e-10


def test_off_manifold_start(pendulum_result):
    with pytest.raises(OffManifold):
        integrate(pendulum_result, [0.0, 2.0, 0.0, 0.0, 0.0, 0.0], (0.0, 0.1), 1e-2)


def test_near_manifold_start_is_projected(pendulum_result):
    x0 = np.array([0.0, 1.0 + 2e-7, 0.0, 0.1, 0.0, 0.0])
    traj = integrate(pendulum_result, x0, (0.0, 0.02), 1e-2, project_every=1)
    assert np.max(np.abs(pendulum_result.constraint_values(traj.states[0]))) <= pendulum_result.tol
    assert traj.states[0, 0] == 0.0
    assert len(traj.events) == 2


def test_step_rejected_on_blow_up():
    sys = load_system({"kind": "linearly_singular", "autonomous": True, "states": ["x"], "A": [["1"]],
                       "b": ["exp(x)"]})
    res = run_constraint_algorithm(sys, [[0.0]])
    with pytest.raises(StepRejected):
        integrate(res, [0.0], (0.0, 5.0), 0.5)


def test_argument_checks(oscillator):
    with pytest.raises(ValueError):
        integrate(oscillator, [0.0, 1.0, 0.0], (0.0, 1.0), 0.0)
    with pytest.raises(ValueError):
        integrate(oscillator, [0.0, 1.0, 0.0], (1.0, 0.0), 0.1)


def test_csv_round_trip(oscillator, tmp_path):
    traj = integrate(oscillator, [0.0, 1.0, 0.0], (0.0, 0.5), 0.1)
    path = tmp_path / "traj.csv"
    write_csv(traj, path, time_state="t")
    header = path.read_text().splitlines()[0]
    assert header == "t,q,v_q,drift"
    back = read_csv(path, "t")
    np.testing.assert_array_equal(back.states, traj.states)
    np.testing.assert_array_equal(back.times, traj.times)
    buf = io.StringIO()
    write_csv(traj, buf)
    assert buf.getvalue().startswith("time,t,q,v_q,drift\n")
