import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from opeval.mdp import MdpSpec, RewardNoise, TabularPolicy, make_chain2, make_random_mdp  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def chain2():
    return make_chain2()


@pytest.fixture
def matching():
    return TabularPolicy(np.eye(2), "matching")


@pytest.fixture
def uniform2():
    return TabularPolicy.uniform(2, 2)


def chain2_mixed(horizon=2, discount=1.0):
    """chain2 with a stationary uniform start, so dynamics ignore history."""
    base = make_chain2(horizon, discount)
    return MdpSpec(base.transition, base.reward_mean, [0.5, 0.5], horizon, discount)


def coin_mdp(horizon=3, discount=0.9):
    """Two states, next state uniform regardless of action; reward 1 iff a == s.

    Transitions do not depend on the action and the initial distribution is
    stationary, so every marginal ratio rho_t is the same at every step.
    """
    P = np.full((2, 2, 2), 0.5)
    return MdpSpec(P, np.eye(2), [0.5, 0.5], horizon, discount)


def noiseless(mdp):
    return MdpSpec(mdp.transition, mdp.reward_mean, mdp.initial_dist, mdp.horizon,
                   mdp.discount, RewardNoise(), mdp.reward_range, mdp.seed)


def random_policy(rng, S, A, name="pi", floor=0.05):
    p = rng.dirichlet(np.ones(A), size=S) + floor
    return TabularPolicy(p / p.sum(axis=1, keepdims=True), name)


@pytest.fixture
def small_random():
    return noiseless(make_random_mdp(3, 2, 4, 0.9, seed=11))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            crit = getattr(rep, "criterion", None)
            if crit is not None and rep.when == "call" or (crit is not None and outcome == "error"):
                lines.append((crit[0], "PASS" if outcome == "passed" else "FAIL", crit[1]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, status, text in sorted(lines):
            terminalreporter.write_line(f"criterion {number:2d}: {status}  {text}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)
