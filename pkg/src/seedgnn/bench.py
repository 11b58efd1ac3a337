"""Experiment harness: datasets on disk, sweeps, ablations and layer dumps."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import Matching, matching_accuracy
from .baselines import DHopConfig, d_hop_match, pgm_match, sgm_match
from .graphs import (CorrelatedPairSpec, Graph, GraphPairInstance, chung_lu_graph, generate_correlated_er,
                     induced_subgraph, make_rng, read_edge_list, read_seeds, read_truth, subsample_real_pair,
                     write_edge_list, write_pairs, write_truth)
from .model import (ModelDims, SeedGnnModel, TrainConfig, forward, load_checkpoint, predict,
                    save_checkpoint, train)

log = logging.getLogger(__name__)

SCHEMA_TAG = "# seedgnn-results v1"
RESULT_FIELDS = ["algo", "n", "p", "s", "theta", "trial", "accuracy_all", "accuracy_non_seed", "wall_time_ms"]
MANIFEST = "manifest.csv"
MANIFEST_FIELDS = ["id", "kind", "n", "p", "s", "theta", "rng_seed", "dir"]

# training recipe: 100 correlated ER pairs on 100 nodes
TRAIN_PS = (0.1, 0.3, 0.5)
TRAIN_SS = (0.6, 0.8, 1.0)
TRAIN_THETA = 0.1
TRAIN_N = 100
TRAIN_SIZE = 100
TRAIN_SEED = 1000


def training_specs(ps: Sequence[float] = TRAIN_PS, ss: Sequence[float] = TRAIN_SS,
                   theta: float = TRAIN_THETA, n: int = TRAIN_N, size: int = TRAIN_SIZE,
                   base_seed: int = TRAIN_SEED) -> List[CorrelatedPairSpec]:
    """Instance ``k`` cycles through ``ps`` fastest, then ``ss``."""
    return [CorrelatedPairSpec(n, ps[k % len(ps)], ss[(k // len(ps)) % len(ss)], theta, base_seed + k)
            for k in range(size)]


# Stand-ins for the real social networks of the training set: heavy-tailed
# parents with p(d) ~ 1/d and mean degree about 100, thinned to a quarter of
# the nodes and then sampled like the real-graph protocol.
SOCIAL_COUNT = 10
SOCIAL_NODES = 1200
SOCIAL_DEGREE_RANGE = (1.0, 650.0)
SOCIAL_NODE_SAMPLE = 0.25
SOCIAL_EDGE_S = 0.8
SOCIAL_NODE_KEEP = 0.9
SOCIAL_SEED = 5000


def social_parent(k: int, n0: int = SOCIAL_NODES) -> Graph:
    lo, hi = SOCIAL_DEGREE_RANGE
    rng = make_rng(SOCIAL_SEED + k, 0)
    weights = lo * (hi / lo) ** rng.random(n0)  # inverse CDF of p(d) ~ 1/d on [lo, hi]
    g = chung_lu_graph(weights, SOCIAL_SEED + k, stream=1)
    return induced_subgraph(g, make_rng(SOCIAL_SEED + k, 2).random(n0) < SOCIAL_NODE_SAMPLE)


def social_surrogates(count: int = SOCIAL_COUNT, theta: float = TRAIN_THETA,
                      n0: int = SOCIAL_NODES) -> List[GraphPairInstance]:
    return [subsample_real_pair(social_parent(k, n0), SOCIAL_EDGE_S, SOCIAL_NODE_KEEP, theta,
                                SOCIAL_SEED + 1000 + k) for k in range(count)]


def training_set(surrogates: int = SOCIAL_COUNT, **kw) -> List[GraphPairInstance]:
    """The ER recipe followed by ``surrogates`` heavy-tailed pairs."""
    data = [generate_correlated_er(s) for s in training_specs(**kw)]
    return data + social_surrogates(surrogates)


# ---------------------------------------------------------------------------
# datasets on disk


def write_instance(inst: GraphPairInstance, folder: Path) -> None:
    folder.mkdir(parents=True, exist_ok=True)
    write_edge_list(inst.g1, folder / "g1.txt")
    write_edge_list(inst.g2, folder / "g2.txt")
    write_pairs(inst.seeds.pairs, folder / "seeds.txt")
    if inst.truth is not None:
        write_truth(inst.truth, folder / "truth.txt")
    if "parent_degrees" in inst.meta:
        (folder / "parent_degrees.txt").write_text(
            "\n".join(str(int(v)) for v in inst.meta["parent_degrees"]) + "\n", encoding="utf-8")


def read_instance(folder: Path, need_truth: bool = True) -> GraphPairInstance:
    folder = Path(folder)
    g1 = read_edge_list(folder / "g1.txt")
    g2 = read_edge_list(folder / "g2.txt")
    truth = None
    if (folder / "truth.txt").exists():
        truth = read_truth(folder / "truth.txt", g1.n)
    elif need_truth:
        raise FileNotFoundError(f"{folder / 'truth.txt'}: missing ground-truth file")
    meta = {}
    if (folder / "parent_degrees.txt").exists():
        meta["parent_degrees"] = np.loadtxt(folder / "parent_degrees.txt", dtype=np.int64, ndmin=1)
    return GraphPairInstance(g1, g2, read_seeds(folder / "seeds.txt"), truth, meta)


def generate_dataset(specs: Sequence[CorrelatedPairSpec], out_dir, surrogates: int = 0) -> Path:
    """Write each instance to ``out_dir/inst_XXXX`` plus a manifest; returns the manifest path.

    ``surrogates`` appends that many heavy-tailed pairs after the ER instances.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, spec in enumerate(specs):
        name = f"inst_{k:04d}"
        write_instance(generate_correlated_er(spec), out / name)
        rows.append([k, "er", spec.n, repr(spec.p), repr(spec.s), repr(spec.theta), spec.rng_seed, name])
    for j, inst in enumerate(social_surrogates(surrogates) if surrogates else []):
        k = len(rows)
        name = f"inst_{k:04d}"
        write_instance(inst, out / name)
        rows.append([k, "social", inst.n1, repr(inst.g1.density), repr(SOCIAL_EDGE_S), repr(inst.meta["theta"]),
                     inst.meta["rng_seed"], name])
    with open(out / MANIFEST, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    return out / MANIFEST


def load_dataset(folder) -> List[GraphPairInstance]:
    folder = Path(folder)
    if not (folder / MANIFEST).exists():
        raise FileNotFoundError(f"{folder / MANIFEST}: no dataset manifest")
    with open(folder / MANIFEST, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [read_instance(folder / r["dir"]) for r in rows]


# ---------------------------------------------------------------------------
# algorithms


def _dhop(D: int, T: int) -> Callable:
    return lambda inst, model=None: d_hop_match(inst, DHopConfig(D=D, T=T))


BASELINES: Dict[str, Callable] = {
    "1hop": _dhop(1, 6),
    "2hop": _dhop(2, 3),
    "3hop": _dhop(3, 2),
    "pgm": lambda inst, model=None: pgm_match(inst),
    "sgm": lambda inst, model=None: sgm_match(inst),
}
ALGORITHMS = ("seedgnn",) + tuple(BASELINES)


def run_algorithm(name: str, inst: GraphPairInstance, model: Optional[SeedGnnModel] = None) -> Matching:
    if name == "seedgnn":
        if model is None:
            raise ValueError("the seedgnn algorithm needs a checkpoint")
        return predict(model, inst)
    if name not in BASELINES:
        raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
    return BASELINES[name](inst)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class ExperimentSpec:
    algos: Tuple[str, ...]
    ns: Tuple[int, ...] = (500,)
    ps: Tuple[float, ...] = (0.2,)
    ss: Tuple[float, ...] = (0.8,)
    thetas: Tuple[float, ...] = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
    trials: int = 10
    base_seed: int = 0
    graph_file: Optional[str] = None
    node_keep: float = 1.0

    def __post_init__(self):
        if not self.algos:
            raise ValueError("select at least one algorithm")
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}; expected one of {ALGORITHMS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not (self.ss and self.thetas and (self.graph_file or (self.ns and self.ps))):
            raise ValueError("empty parameter grid")

    def cells(self) -> List[Tuple[int, float, float, float]]:
        """Grid cells ``(n, p, s, theta)``; for edge-list input ``n`` and ``p`` are 0."""
        if self.graph_file:
            return [(0, 0.0, s, t) for s, t in itertools.product(self.ss, self.thetas)]
        return list(itertools.product(self.ns, self.ps, self.ss, self.thetas))


def trial_seed(base_seed: int, cell: int, trial: int) -> int:
    """Instance seed fixed by the (base seed, cell, trial) coordinates alone."""
    ss = np.random.SeedSequence(base_seed, spawn_key=(cell, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_instance(spec: ExperimentSpec, cell: int, trial: int, g0: Optional[Graph] = None) -> GraphPairInstance:
    n, p, s, theta = spec.cells()[cell]
    seed = trial_seed(spec.base_seed, cell, trial)
    if spec.graph_file:
        g0 = read_edge_list(spec.graph_file) if g0 is None else g0
        return subsample_real_pair(g0, s, spec.node_keep, theta, seed)
    return generate_correlated_er(CorrelatedPairSpec(n, p, s, theta, seed))


# per-process caches for pool workers
_WORKER: dict = {}


def _worker_init(checkpoint: Optional[str], graph_file: Optional[str]) -> None:
    _WORKER.clear()
    _WORKER["model"] = load_checkpoint(checkpoint) if checkpoint else None
    _WORKER["g0"] = read_edge_list(graph_file) if graph_file else None


def _run_task(args) -> List[list]:
    spec, cell, trial = args
    inst = make_instance(spec, cell, trial, _WORKER.get("g0"))
    return evaluate_instance(spec, cell, trial, inst, _WORKER.get("model"))


def evaluate_instance(spec: ExperimentSpec, cell: int, trial: int, inst: GraphPairInstance,
                      model: Optional[SeedGnnModel], label: Optional[str] = None) -> List[list]:
    n, p, s, theta = spec.cells()[cell]
    if spec.graph_file:
        n, p = inst.n1, inst.g1.density
    rows = []
    for algo in spec.algos:
        t0 = time.perf_counter()
        m = run_algorithm(algo, inst, model)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append([label or algo, n, p, s, theta, trial,
                     matching_accuracy(m, inst.truth, inst.seeds, "all"),
                     matching_accuracy(m, inst.truth, inst.seeds, "non_seed"), round(ms, 3)])
    return rows


class ResultWriter:
    """Single owner of the results CSV."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w", newline="", encoding="utf-8")
        self.fh.write(SCHEMA_TAG + "\n")
        self.w = csv.writer(self.fh, lineterminator="\n")
        self.w.writerow(RESULT_FIELDS)
        self.rows = 0

    def write(self, rows: Iterable[list]) -> None:
        for r in rows:
            self.w.writerow([repr(v) if isinstance(v, float) else v for v in r])
            self.rows += 1
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_results(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        head = fh.readline().rstrip("\n")
        if head != SCHEMA_TAG:
            raise ValueError(f"{path}: expected schema tag {SCHEMA_TAG!r}, found {head!r}")
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("n", "trial"):
            r[k] = int(r[k])
        for k in ("p", "s", "theta", "accuracy_all", "accuracy_non_seed", "wall_time_ms"):
            r[k] = float(r[k])
    return rows


def run_sweep(spec: ExperimentSpec, out_csv, checkpoint=None, workers: int = 1) -> int:
    """Evaluate every cell x trial; returns the number of rows written.

    Tasks run in a process pool when ``workers > 1``; rows are written by the
    parent in task order so the file does not depend on scheduling.
    """
    if "seedgnn" in spec.algos and checkpoint is None:
        raise ValueError("a checkpoint is required when seedgnn is selected")
    ckpt = str(checkpoint) if checkpoint is not None else None
    tasks = [(spec, c, t) for c in range(len(spec.cells())) for t in range(spec.trials)]
    with ResultWriter(out_csv) as writer:
        if workers > 1:
            with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(ckpt, spec.graph_file)) as ex:
                for rows in ex.map(_run_task, tasks):
                    writer.write(rows)
        else:
            _worker_init(ckpt, spec.graph_file)
            for task in tasks:
                writer.write(_run_task(task))
        return writer.rows


def summarize(rows: Sequence[dict], key: str = "accuracy_all") -> Dict[tuple, float]:
    """Mean accuracy per ``(algo, n, p, s, theta)``."""
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["algo"], r["n"], r["p"], r["s"], r["theta"]), []).append(r[key])
    return {k: float(np.nanmean(v)) for k, v in groups.items()}


# ---------------------------------------------------------------------------
# ablations


def train_variants(dataset: Sequence[GraphPairInstance], variants: Sequence[str], out_dir,
                   dims: ModelDims = ModelDims(), cfg: TrainConfig = TrainConfig(),
                   seed: int = 0) -> Dict[str, Path]:
    """Train one model per variant on the same data; returns checkpoint paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for v in variants:
        model = SeedGnnModel.init(dims, v, seed=seed)
        vcfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, shuffle_seed=cfg.shuffle_seed,
                           loss_log=out / f"loss_{v}.csv")
        train(model, dataset, vcfg)
        paths[v] = out / f"seedgnn_{v}.ckpt"
        save_checkpoint(model, paths[v])
    return paths


def run_ablation(checkpoints: Dict[str, Path], spec: ExperimentSpec, out_csv) -> int:
    """Evaluate each variant checkpoint on the same instances; algo column is ``seedgnn-<variant>``."""
    models = {v: load_checkpoint(p) for v, p in checkpoints.items()}
    spec = ExperimentSpec(("seedgnn",), spec.ns, spec.ps, spec.ss, spec.thetas, spec.trials,
                          spec.base_seed, spec.graph_file, spec.node_keep)
    g0 = read_edge_list(spec.graph_file) if spec.graph_file else None
    with ResultWriter(out_csv) as writer:
        for c in range(len(spec.cells())):
            for t in range(spec.trials):
                inst = make_instance(spec, c, t, g0)
                for v, model in models.items():
                    writer.write(evaluate_instance(spec, c, t, inst, model, f"seedgnn-{v}"))
        return writer.rows


# ---------------------------------------------------------------------------
# layer dumps


def degree_order(inst: GraphPairInstance) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column orders: G1 nodes by descending parent degree, G2 nodes by their true partner."""
    deg = inst.meta.get("parent_degrees")
    if deg is None:
        deg = inst.g1.degrees
    rows = np.argsort(-np.asarray(deg), kind="stable")
    cols = []
    if inst.truth is not None:
        cols = [int(inst.truth.map[i]) for i in rows if inst.truth.map[i] >= 0]
    rest = np.setdiff1d(np.arange(inst.n2), cols)
    return rows, np.concatenate([np.asarray(cols, dtype=np.int64), rest])


def write_matrix_csv(M: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def svg_heatmap(M: np.ndarray, title: str = "", cell: int = 6) -> str:
    """Grey-scale rect grid; darker is larger, scaled to the matrix maximum."""
    n1, n2 = M.shape
    top = 18 if title else 0
    hi = float(M.max()) if M.size and M.max() > 0 else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{n2 * cell}" height="{n1 * cell + top}">']
    if title:
        parts.append(f'<text x="2" y="13" font-family="monospace" font-size="12">{title}</text>')
    parts.append(f'<rect x="0" y="{top}" width="{n2 * cell}" height="{n1 * cell}" fill="#ffffff"/>')
    for i, j in zip(*np.nonzero(M > 0)):
        g = int(round(255 * (1.0 - min(M[i, j] / hi, 1.0))))
        parts.append(f'<rect x="{j * cell}" y="{i * cell + top}" width="{cell}" height="{cell}" '
                     f'fill="rgb({g},{g},{g})"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def dump_layers(model: SeedGnnModel, inst: GraphPairInstance, out_dir, svg: bool = False) -> List[int]:
    """Write ``Y_l`` and ``R_l`` per layer in degree order; returns true pairs matched per layer."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, cols = degree_order(inst)
    trace = forward(model, inst, keep_cache=False)
    counts = []
    for l, rec in enumerate(trace.layers, start=1):
        Y = rec.Y[np.ix_(rows, cols)]
        R = rec.R[np.ix_(rows, cols)]
        write_matrix_csv(Y, out / f"Y_{l}.csv")
        write_matrix_csv(R, out / f"R_{l}.csv")
        if svg:
            (out / f"Y_{l}.svg").write_text(svg_heatmap(Y, f"Y{l}"), encoding="utf-8")
            (out / f"R_{l}.svg").write_text(svg_heatmap(R, f"R{l}"), encoding="utf-8")
        if inst.truth is not None:
            ok = inst.truth.present & (rec.matching.cols == inst.truth.map)
            counts.append(int(ok.sum()))
    return counts
