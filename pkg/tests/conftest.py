import pytest

from tandem_overflow.model import NetworkParams

PAPER_LAM = "1/18"
PAPER_MU = ["3/18", "7/18", "2/18", "5/18"]


@pytest.fixture
def paper4():
    """The 4-node example: lambda = 1/18, mu = (3, 7, 2, 5)/18."""
    return NetworkParams.from_rates(PAPER_LAM, PAPER_MU)


@pytest.fixture
def paper4f(paper4):
    return paper4.as_float()


@pytest.fixture
def d3():
    return NetworkParams.from_rates("1/10", ["35/100", "3/10", "25/100"])
