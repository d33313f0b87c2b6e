import numpy as np
import pytest

from crossnav.config import config_from_dict
from crossnav.pipeline import Pipeline

# Cached under the repo so repeated pytest runs resume instead of retraining.
CACHE = "/root/pkg/.cache"

SMALL_CONFIG = {
    "master_seed": 0,
    "out_dir": f"{CACHE}/small",
    "sim": {"demo_episodes": 16, "demo_tiers": [1, 2], "train_tiers": [1]},
    "wm": {"epochs": 3},
    "il": {"epochs": 3},
    "ppo": {
        "episodes": 8, "episodes_wheeled": 4, "n_envs": 2, "horizon": 32,
        "eval_every": 8, "eval_trials": 2,
    },
    "distill": {"n_traj": 4, "traj_len": 32, "epochs": 2, "batch": 64},
    "bench": {"n_trials": 4, "tiers": [1]},
}

# Full-scale run backing the performance acceptance gates: defaults plus a
# larger configured PPO budget (the gates allow up to 30 min CPU per
# embodiment; the 1000-episode default leaves the slower embodiments short
# of convergence)
ACCEPT_CONFIG = {
    "master_seed": 0,
    "out_dir": f"{CACHE}/accept",
    "ppo": {"episodes": 4000},
}


def fd_grad(f, x, eps=1e-6):
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


@pytest.fixture(scope="session")
def small_pipeline():
    """Fully trained micro-scale pipeline (seconds, cached between runs)."""
    pipe = Pipeline(config_from_dict(dict(SMALL_CONFIG)))
    pipe.run_demos()
    pipe.run_wm()
    pipe.run_il()
    for p in pipe.profiles:
        pipe.run_specialist(p.name)
    for p in pipe.profiles:
        pipe.run_record(p.name)
    pipe.run_distill()
    return pipe


@pytest.fixture(scope="session")
def small_demos(small_pipeline):
    return small_pipeline.load_demos()


@pytest.fixture(scope="session")
def accept_pipeline():
    """Full-scale pipeline used by the acceptance suite (resumes from cache)."""
    pipe = Pipeline(config_from_dict(dict(ACCEPT_CONFIG)))
    pipe.run_demos()
    pipe.run_wm()
    pipe.run_il()
    for p in pipe.profiles:
        pipe.run_specialist(p.name)
    for p in pipe.profiles:
        pipe.run_record(p.name)
    pipe.run_distill()
    return pipe
