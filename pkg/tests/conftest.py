import warnings

import numpy as np
import pytest

from inverse_soc.dynamics import ControlSet, DynamicsSpec, Gaussian, flow_from_batch, simulate
from inverse_soc.forward_solver import (GridForward, GridSpec, RiccatiForward, lq_policy,
                                        solve_riccati)

SIGMA = 0.1
U_BOX = ControlSet(-10.0, 10.0)
SMALL_GRID = GridSpec(L=5.0, n_x=100, n_u=41)


@pytest.fixture(scope="session")
def lq_spec():
    return DynamicsSpec.affine(0.0, 1.0, 0.0, SIGMA)


@pytest.fixture(scope="session")
def lq_batch(lq_spec):
    """Optimal theta = 1 paths with U = R: N = 1e4, M = 200, seed 2024."""
    pol = lq_policy(solve_riccati(1.0, 10.0, SIGMA, 1.0))
    return simulate(lq_spec, pol, Gaussian(0.0, 1.0), M=200, N=10_000, seed=2024)


@pytest.fixture(scope="session")
def lq_flow(lq_batch):
    return flow_from_batch(lq_batch)


@pytest.fixture(scope="session")
def riccati_forward():
    return RiccatiForward(SIGMA, 1.0)


@pytest.fixture(scope="session")
def clamped_flow(lq_spec):
    """The same Riccati feedback clamped into U = [-10, 10] (seed 5)."""
    pol = lq_policy(solve_riccati(1.0, 10.0, SIGMA, 1.0), U_BOX)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        batch = simulate(lq_spec, pol, Gaussian(0.0, 1.0), M=200, N=10_000, seed=5)
    return flow_from_batch(batch)


@pytest.fixture(scope="session")
def small_grid_forward(lq_spec):
    return GridForward(lq_spec, U_BOX, SMALL_GRID)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_lq_grid(lq_spec):
    """HJB solution of the theta = 1 instance on the default grid (about 6 s)."""
    from inverse_soc.cost_model import lq_pair
    from inverse_soc.forward_solver import solve_hjb_grid
    return solve_hjb_grid(lq_spec, lq_pair(1.0), U_BOX, GridSpec())


def bundled_configs():
    from importlib.resources import files
    return sorted(p for p in files("inverse_soc").joinpath("configs").iterdir()
                  if p.name.endswith(".json"))


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory):
    """Every bundled config run twice through the CLI: ``{name: (dir_a, dir_b)}``."""
    from inverse_soc.cli import main
    root = tmp_path_factory.mktemp("runs")
    out = {}
    for cfg in bundled_configs():
        name = cfg.name[:-5]
        dirs = []
        for rep in ("a", "b"):
            d = root / rep / name
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                code = main(["run", str(cfg), "--output-dir", str(d)])
            assert code == 0, f"{name} exited with {code}"
            dirs.append(d)
        out[name] = tuple(dirs)
    return out


# acceptance criteria record their verdicts here; printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
