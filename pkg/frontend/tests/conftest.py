import subprocess
import sys

import pytest

SEC4_CONFIG = """
[system]
name = "duffing"
tau = 0.01
delta = -1.0
zeta = 0.05
gamma = 0.05
sigma_w = 1.0

[steer]
N = 100
mu0 = [0.0, 0.0]
sigma0 = [[6.25, 0.0], [0.0, 4.0]]
mu_f = [0.0, 0.0]
sigma_f = [[1.5625, 0.0], [0.0, 1.0]]
alpha = 0.05
beta = 2.0

[montecarlo]
samples = 2000
seed = 42
"""


@pytest.fixture(scope="session")
def sec4_dir(tmp_path_factory):
    """A completed benchmark run directory, produced through the public CLI."""
    base = tmp_path_factory.mktemp("sec4")
    cfg = base / "sec4.toml"
    cfg.write_text(SEC4_CONFIG)
    out = base / "run"
    subprocess.run(
        [sys.executable, "-m", "covsteer.cli", "steer", "--config", str(cfg), "--out", str(out)],
        check=True,
        capture_output=True,
    )
    subprocess.run(
        [
            sys.executable, "-m", "covsteer.cli", "validate",
            "--config", str(cfg), "--policy", str(out / "policy.json"), "--out", str(out),
        ],
        check=True,
        capture_output=True,
    )
    return out
