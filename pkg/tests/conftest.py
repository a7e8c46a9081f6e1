import time

import pytest

from ssolab.experiment import kauai_mini, mitigation_compare, run_event_study


@pytest.fixture(scope="session")
def kauai_study():
    """The benchmark plant trip with point-on-wave synthesis, run once per session."""
    t0 = time.perf_counter()
    result, bundle = run_event_study(kauai_mini())
    return result, bundle, time.perf_counter() - t0


@pytest.fixture(scope="session")
def mitigation_runs():
    """Both mitigations against the benchmark (four runs, no point-on-wave)."""
    base = kauai_mini(pow_synthesis=False)
    t0 = time.perf_counter()
    out = {m: mitigation_compare(m, base) for m in ("method1_droop", "method2_pll")}
    return out, time.perf_counter() - t0
