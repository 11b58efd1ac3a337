import hashlib
import json
import time
from pathlib import Path

import pytest

import seedgnn
from seedgnn import bench
from seedgnn.model import ModelDims, SeedGnnModel, TrainConfig, load_checkpoint, save_checkpoint, train

SRC = Path(seedgnn.__file__).parent

# every model used by the acceptance suite: variant and training-set keyword arguments
RECIPES = {
    "full": ("full", {}),
    "x": ("x", {}),
    "van": ("van", {}),
    "per": ("per", {}),
    "hun": ("hun", {}),
    "p01": ("full", {"ps": [0.1]}),
}

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line; it is printed now and again in the terminal summary."""
    lines = request.config.stash[_LINES_KEY]

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def _source_digest() -> str:
    h = hashlib.sha256()
    for f in sorted(SRC.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


class ModelStore:
    """Trains the acceptance models on demand and caches checkpoints keyed by source and recipe."""

    def __init__(self, root: Path):
        self.root = root
        self.digest = _source_digest()
        self.models = {}
        self.paths = {}
        self._data = {}
        self.seconds = {}

    def dataset(self, kw):
        key = json.dumps(kw, sort_keys=True)
        if key not in self._data:
            self._data[key] = bench.training_set(**kw)
        return self._data[key]

    def path(self, name: str) -> Path:
        self.get(name)
        return self.paths[name]

    def loss_log(self, name: str) -> Path:
        return self.path(name).with_suffix(".loss.csv")

    def get(self, name: str) -> SeedGnnModel:
        if name in self.models:
            return self.models[name]
        variant, kw = RECIPES[name]
        dims = ModelDims()
        tag = json.dumps([self.digest, variant, kw, repr(dims), repr(TrainConfig())], sort_keys=True)
        path = self.root / f"{name}-{hashlib.sha256(tag.encode()).hexdigest()[:16]}.ckpt"
        cfg = TrainConfig(loss_log=path.with_suffix(".loss.csv"))
        if path.exists() and cfg.loss_log.exists():
            model = load_checkpoint(path)
        else:
            model = SeedGnnModel.init(dims, variant, seed=0)
            t0 = time.perf_counter()
            train(model, self.dataset(kw), cfg)
            self.seconds[name] = time.perf_counter() - t0
            save_checkpoint(model, path)
        self.models[name] = model
        self.paths[name] = path
        return model


@pytest.fixture(scope="session")
def models(request) -> ModelStore:
    return ModelStore(Path(request.config.cache.mkdir("seedgnn-models")))
