import json
import subprocess
import sys
from pathlib import Path

import pytest

ENGINE_CONFIG = {
    "width": 8,
    "height": 8,
    "dt_rates": [4],
    "trajectory": {"speed_max": 2.5, "rot_rate_max": 0.9},
    "thresholds": [0.02, 0.035, 0.05, 0.07, 0.1, 0.14, 0.19, 0.26, 0.36, 0.5],
}


def generate_dataset(root: Path, samples: int, seed: int, config: dict | None = None) -> Path:
    """Produce engine output by invoking the data-engine CLI."""
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(config or ENGINE_CONFIG))
    out = root / "dataset"
    result = subprocess.run(
        [sys.executable, "-m", "evflow.cli", "generate", "--config", str(cfg_path),
         "--out", str(out), "--samples", str(samples), "--seed", str(seed), "--jobs", "2"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    return out


@pytest.fixture(scope="session")
def engine_dataset(tmp_path_factory) -> Path:
    """The multi-density toy dataset shared by the data/training tests."""
    return generate_dataset(tmp_path_factory.mktemp("engine"), samples=60, seed=42)
