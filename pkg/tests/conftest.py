import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simisac.channels import Scenario, build_channels
from simisac.propagation import SimGeometry

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def default_scenario():
    return Scenario()


@pytest.fixture(scope="session", params=[1, 2, 3], ids=lambda l: f"L{l}")
def layered(request, default_scenario):
    geom = SimGeometry.default(request.param)
    return default_scenario, geom, build_channels(default_scenario, geom, 0)


@pytest.fixture(scope="session", autouse=True)
def certify_every_solve():
    """Run the independent KKT oracle on every optimal conic solve made by any test."""
    import helpers
    from simisac import conic, mao
    from simisac.oracles import kkt_check

    original = conic.solve_conic

    def checked(problem, **kw):
        sol = original(problem, **kw)
        if sol.optimal:
            rep = kkt_check(problem, sol)
            label = ",".join(v.name for v in problem.variables)
            helpers.KKT_LOG.append((label, rep.passed, max(rep.primal, rep.dual, rep.complementarity)))
        return sol

    mp = pytest.MonkeyPatch()
    mp.setattr(conic, "solve_conic", checked)
    mp.setattr(mao, "solve_conic", checked)
    yield
    mp.undo()


def pytest_terminal_summary(terminalreporter):
    import helpers
    if helpers.KKT_LOG:
        bad = sum(1 for _, ok, _ in helpers.KKT_LOG if not ok)
        worst = max(r for _, _, r in helpers.KKT_LOG)
        terminalreporter.write_line(f"kkt oracle: {len(helpers.KKT_LOG)} optimal solves, {bad} failed, "
                                    f"worst residual {worst:.2e}")
    if helpers.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in helpers.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
