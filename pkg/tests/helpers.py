"""Small builders shared by the test modules."""
import numpy as np

from simisac.channels import Scenario


def single_user(m=2, gamma=10.0):
    return Scenario(cu_positions=((0.0, 10.0, 0.0),), bs_antennas=m, sinr_thresholds=(gamma,))


def random_hermitian(rng, n, psd=False):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return a @ a.conj().T if psd else a + a.conj().T


# filled by the acceptance module, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []
# every optimal conic solve in the session: (label, passed, worst residual)
KKT_LOG: list[tuple[str, bool, float]] = []
