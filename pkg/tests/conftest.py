import pytest

from cddp.instance import generate_tiny_instance, illustrative_instance


@pytest.fixture(scope="session")
def illustrative():
    inst = illustrative_instance()
    return inst, inst.metric_matrix()


@pytest.fixture(scope="session")
def tiny():
    inst = generate_tiny_instance(3, n_customers=2, n_drones=1)
    return inst, inst.metric_matrix()
