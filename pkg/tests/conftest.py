import pytest

from quantfilt import LinearSSM, Quantizer


@pytest.fixture(scope="session")
def scalar_model() -> LinearSSM:
    """The scalar benchmark-study model."""
    return LinearSSM(A=0.9, B=1.2, C=2.2, D=0.75, Q=1.0, R=0.5, mu1=1.0, P1=0.01)


@pytest.fixture(scope="session")
def step8() -> Quantizer:
    return Quantizer.uniform(8.0)


@pytest.fixture(scope="session")
def model_2d() -> LinearSSM:
    """A stable two-state model for general-dimension paths."""
    return LinearSSM(
        A=[[0.8, 0.2], [-0.1, 0.7]],
        B=[[1.0], [0.5]],
        C=[1.0, -0.4],
        D=[0.3],
        Q=[[0.6, 0.1], [0.1, 0.4]],
        R=0.5,
        mu1=[0.5, -0.2],
        P1=[[0.2, 0.0], [0.0, 0.3]],
    )
