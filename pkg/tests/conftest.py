"""Shared fixtures: a small trajectory dataset reused across test modules."""
import pytest

from embodied_forge import trajgen
from embodied_forge.errors import GiveUp


def generate_some(n: int, start_seed: int, max_subgoals: int = 3) -> list:
    """Generate n trajectories, skipping seeds whose scenes are unsatisfiable."""
    trajs, seed = [], start_seed
    while len(trajs) < n:
        config = trajgen.GenConfig(max_subgoals=max_subgoals, seed=seed)
        try:
            trajs.append(trajgen.generate_trajectory(config))
        except GiveUp:
            pass
        seed += 1
    return trajs


@pytest.fixture(scope="session")
def small_trajs():
    return generate_some(3, start_seed=11)


@pytest.fixture(scope="session")
def small_dataset(small_trajs, tmp_path_factory):
    out = tmp_path_factory.mktemp("trajs")
    trajgen.export_dataset(small_trajs, out)
    return out
