import numpy as np
import pytest

from wmdistill.dataset import generate_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small mixture-policy dataset shared by unit tests."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    generate_dataset(root, num_episodes=6, policy="mixture", seed=7)
    return load_dataset(root)


def rel_close(actual: np.ndarray, expected: np.ndarray, tol: float) -> bool:
    """|actual - expected| <= tol * max(1, |expected|), elementwise."""
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    bound = tol * np.maximum(1.0, np.abs(expected))
    return bool(np.all(np.abs(actual - expected) <= bound))
