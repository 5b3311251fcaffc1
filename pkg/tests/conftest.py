import numpy as np
import pytest

from actor_observer.sampling import EGO, THIRD, Video, VideoPair
from actor_observer.synthetic import SyntheticConfig, synthesize


def make_pair(pair_id="p", n3=30, ne=30, d3=29.0, de=29.0, dim=4, seed=0, scenario=None,
              labels=()):
    rng = np.random.default_rng(seed)
    t3 = np.linspace(0.0, d3, n3)
    te = np.linspace(0.0, de, ne)
    third = Video.from_arrays(f"{pair_id}_third", pair_id, THIRD, t3, rng.normal(size=(n3, dim)))
    ego = Video.from_arrays(f"{pair_id}_ego", pair_id, EGO, te, rng.normal(size=(ne, dim)))
    return VideoPair(pair_id, third, ego, scenario, tuple(labels))


@pytest.fixture
def pair():
    return make_pair()


@pytest.fixture(scope="session")
def small_dataset():
    return synthesize(SyntheticConfig(n_pairs=8, frames_per_video=40, feature_dim=8,
                                      latent_dim=4, seed=3))


def toy_gradient_instance(seed, n_frames=5, feature_dim=8, embed_dim=8, n_triplets=6,
                          share_ego_selector=True):
    """Three videos of five frames (one third-person, two first-person) and a
    model with tanh-scale selector heads; returns (model, triplets, normalizers)."""
    from actor_observer.model import ModelParameters
    from actor_observer.sampling import TripletSample

    rng = np.random.default_rng(seed)
    vids = {
        "a": Video.from_arrays("a", "toy", THIRD, np.arange(n_frames) * 1.0,
                               rng.normal(size=(n_frames, feature_dim))),
        "b": Video.from_arrays("b", "toy", EGO, np.arange(n_frames) * 1.0,
                               rng.normal(size=(n_frames, feature_dim))),
        "c": Video.from_arrays("c", "toy2", EGO, np.arange(n_frames) * 1.0,
                               rng.normal(size=(n_frames, feature_dim))),
    }
    model = ModelParameters.initialize(feature_dim, embed_dim, embed_dim, rng,
                                       share_ego_selector=share_ego_selector,
                                       selector_weight_sigma=0.5, scale_init_sigma=2.0)
    for g in model.groups.values():  # non-trivial biases exercise every path
        for name, arr in g.items():
            if name.startswith("b"):
                arr[...] = rng.normal(0.0, 0.3, arr.shape)
    triplets = []
    for _ in range(n_triplets):
        ego = [vids["b"], vids["c"]][rng.integers(2)]
        triplets.append(TripletSample(vids["a"].frames[rng.integers(n_frames)],
                                      ego.frames[rng.integers(n_frames)],
                                      ego.frames[rng.integers(n_frames)]))
    normalizers = {v.frames[0].key: float(rng.uniform(0.5, 3.0)) for v in vids.values()}
    return model, triplets, normalizers


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
