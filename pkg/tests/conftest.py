import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "convrec", deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("convrec")


@pytest.fixture(autouse=True)
def _single_thread_torch():
    # keeps tiny-tensor tests from fighting over cores
    import torch
    torch.set_num_threads(1)
    yield
