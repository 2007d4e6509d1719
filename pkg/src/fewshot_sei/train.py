"""Training loop (hybrid augmentation + triplet-regularized CE), ablation
baselines, and the Monte Carlo few-shot benchmark harness.

One training iteration makes a full shuffled pass over the preprocessed
pool in batches of `batch_size` (the last batch may be short). Rotation
expansion happens once at preprocessing time; CutMix is applied per batch;
the triplet term is computed over batch-hard mined triplets of the batch
embeddings, using each mixed sample's dominant label.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import ndgrad
from .augment import apply_cutmix, expand_rotations, sample_cutmix_plan
from .cvnn import CvcnnModel, ModelConfig
from .data import FewShotEpisode, minmax_normalize, sample_episode, stack_records
from .errors import BenchmarkRunError, EmptyEpisode, ShapeMismatch
from .losses import SoftLabel, joint_loss, mine_triplets, soft_cross_entropy, triplet_loss
from .metrics import EmbeddingSet, accuracy, embed_records, silhouette
from .ndgrad import AdamState, Tensor, adam_step, zero_grads

# method name -> (enable_rotation, enable_cutmix, enable_triplet)
METHOD_FLAGS = {
    "hda_dml": (True, True, True),
    "ce_only": (False, False, False),
    "da_only": (True, True, False),
    "triplet_only": (False, False, True),
}


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults are the published settings."""

    iterations: int = 300
    batch_size: int = 16
    lr: float = 0.01
    triplet_weight: float = 0.01
    margin: float = 5.0
    seed: int = 0
    enable_rotation: bool = True
    enable_cutmix: bool = True
    enable_triplet: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.triplet_weight < 0 or self.margin < 0:
            raise ValueError("triplet_weight and margin must be >= 0")

    def with_method(self, method: str) -> "TrainConfig":
        rot, cut, tri = METHOD_FLAGS[method]
        return replace(
            self, enable_rotation=rot, enable_cutmix=cut, enable_triplet=tri
        )


@dataclass
class TrainReport:
    """Per-iteration loss means plus final evaluation on the test split."""

    ce_per_iteration: list = field(default_factory=list)
    triplet_per_iteration: list = field(default_factory=list)
    joint_per_iteration: list = field(default_factory=list)
    final_accuracy: float = 0.0
    final_silhouette: float = 0.0
    wall_seconds: float = 0.0
    config: dict = field(default_factory=dict)
    model_config: dict = field(default_factory=dict)
    seed: int = 0


def train_hda_dml(episode: FewShotEpisode, model_cfg: ModelConfig, cfg: TrainConfig):
    """Full method: rotation preprocessing, per-batch CutMix, CE + triplet."""
    return _train(episode, model_cfg, cfg)


def train_baseline(episode: FewShotEpisode, model_cfg: ModelConfig, cfg: TrainConfig):
    """Same loop with components toggled via cfg's enable_* flags."""
    return _train(episode, model_cfg, cfg)


def _train(episode: FewShotEpisode, model_cfg: ModelConfig, cfg: TrainConfig):
    start = time.perf_counter()
    if not episode.train:
        raise EmptyEpisode("episode has no training records")
    if episode.C != model_cfg.num_classes:
        raise ShapeMismatch(
            f"episode has {episode.C} classes, model expects {model_cfg.num_classes}"
        )
    if episode.train[0].length != model_cfg.input_len:
        raise ShapeMismatch(
            f"records have length {episode.train[0].length}, "
            f"model expects {model_cfg.input_len}"
        )

    pool = expand_rotations(episode.train) if cfg.enable_rotation else list(episode.train)
    pool = [minmax_normalize(r) for r in pool]
    pool_iq = stack_records(pool)
    pool_labels = np.array([r.label for r in pool], dtype=np.intp)

    rng = np.random.default_rng(cfg.seed)
    model = CvcnnModel.init(model_cfg, rng)
    params = model.parameters()
    state = AdamState.for_params(params)

    n_pool = len(pool)
    n_classes = model_cfg.num_classes
    length = model_cfg.input_len
    report = TrainReport(
        config=asdict(cfg),
        model_config=model_cfg.to_dict(),
        seed=cfg.seed,
    )

    for _ in range(cfg.iterations):
        perm = rng.permutation(n_pool)
        ce_vals, tri_vals, joint_vals = [], [], []
        for lo in range(0, n_pool, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            bsz = idx.size
            ys = pool_labels[idx]
            targets = np.zeros((bsz, n_classes))
            hard = ys.copy()
            if cfg.enable_cutmix and bsz >= 2:
                xs = np.empty((bsz, 2, length))
                for i in range(bsz):
                    j = int(rng.integers(0, bsz - 1))
                    if j >= i:
                        j += 1
                    plan = sample_cutmix_plan(rng, length)
                    mixed, soft = apply_cutmix(
                        pool[idx[i]], pool[idx[j]], int(ys[i]), int(ys[j]), plan, n_classes
                    )
                    xs[i] = mixed
                    targets[i] = soft.weights
                    hard[i] = ys[i] if plan.lambda_cm >= 0.5 else ys[j]
            else:
                xs = pool_iq[idx]
                targets[np.arange(bsz), ys] = 1.0

            feats = model.embed_stacked(Tensor(xs))
            probs = model.classify_feats(feats)
            ce = soft_cross_entropy(probs, targets)
            if cfg.enable_triplet:
                trips = mine_triplets(feats.data, hard)
                if len(trips) > 0:
                    tri = triplet_loss(
                        ndgrad.take_rows(feats, trips.anchors),
                        ndgrad.take_rows(feats, trips.positives),
                        ndgrad.take_rows(feats, trips.negatives),
                        cfg.margin,
                    )
                else:
                    tri = Tensor(0.0)
                weight = cfg.triplet_weight
            else:
                tri = Tensor(0.0)
                weight = 0.0
            loss = joint_loss(ce, tri, weight)

            zero_grads(params)
            loss.backward()
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adam_step(params, grads, state, cfg.lr)

            ce_vals.append(ce.item())
            tri_vals.append(tri.item())
            joint_vals.append(loss.item())
        report.ce_per_iteration.append(float(np.mean(ce_vals)))
        report.triplet_per_iteration.append(float(np.mean(tri_vals)))
        report.joint_per_iteration.append(float(np.mean(joint_vals)))

    report.final_accuracy, report.final_silhouette = evaluate(model, episode.test)
    report.wall_seconds = time.perf_counter() - start
    return model, report


def evaluate(model: CvcnnModel, records):
    """(accuracy, mean silhouette) of the model's features on `records`."""
    feats = embed_records(model, records)
    probs = model.classify_feats(Tensor(feats)).data
    preds = probs.argmax(axis=1)
    labels = np.array([r.label for r in records])
    acc = accuracy(preds, labels)
    sil = silhouette(EmbeddingSet(features=feats, labels=labels))
    return acc, sil


# -- Monte Carlo benchmark ---------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    shots: int
    runs: int
    acc_mean: float
    acc_std: float
    sil_mean: float
    sil_std: float
    seconds_mean: float


@dataclass
class BenchmarkTable:
    """Aggregated benchmark results.

    Rows are a pure function of (dataset, configs, master seed); measured
    wall-clock per cell is kept separately in `measured_seconds` so the
    serialized table stays byte-reproducible (the seconds_mean column of
    the CSV is a fixed 0.000000 placeholder).
    """

    rows: list
    measured_seconds: dict = field(default_factory=dict)

    CSV_HEADER = "method,shots,runs,acc_mean,acc_std,sil_mean,sil_std,seconds_mean"

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.method},{r.shots},{r.runs},"
                f"{r.acc_mean:.6f},{r.acc_std:.6f},"
                f"{r.sil_mean:.6f},{r.sil_std:.6f},{r.seconds_mean:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())


# Worker context for process-parallel runs; populated by the pool initializer
# (fork shares it copy-on-write, so the dataset is not re-pickled per task).
_WORKER = {}


def _init_worker(dataset, model_cfg, cfg, methods, test_per_class):
    _WORKER["args"] = (dataset, model_cfg, cfg, methods, test_per_class)


def _run_cell_worker(task):
    return _run_cell(*_WORKER["args"], *task)


def _run_cell(dataset, model_cfg, cfg, methods, test_per_class, shots, run_index):
    run_seed = cfg.seed + run_index
    try:
        episode = sample_episode(
            dataset,
            model_cfg.num_classes,
            shots,
            test_per_class,
            np.random.default_rng(run_seed),
        )
        out = {}
        for method in methods:
            mcfg = replace(cfg.with_method(method), seed=run_seed)
            _, rep = _train(episode, model_cfg, mcfg)
            out[method] = (rep.final_accuracy, rep.final_silhouette, rep.wall_seconds)
        return (shots, run_index), out
    except Exception as exc:
        raise BenchmarkRunError(
            f"benchmark run failed (shots={shots}, run={run_index}, seed={run_seed}): {exc}"
        ) from exc


def monte_carlo_benchmark(
    dataset,
    shots,
    runs: int,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    methods,
    test_per_class: int = 50,
    jobs: int = 1,
) -> BenchmarkTable:
    """Per (method, K): `runs` independently sampled episodes, trained and
    evaluated; run r uses seed cfg.seed + r for both the episode draw and
    training, so methods see identical episodes (paired comparison).
    """
    shots = list(shots)
    methods = list(methods)
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if not shots:
        raise ValueError("shots list must be non-empty")
    unknown = [m for m in methods if m not in METHOD_FLAGS]
    if unknown:
        raise ValueError(f"unknown methods: {unknown}; valid: {sorted(METHOD_FLAGS)}")

    tasks = [(k, r) for k in shots for r in range(runs)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(dataset, model_cfg, cfg, methods, test_per_class),
        ) as pool:
            results = dict(pool.map(_run_cell_worker, tasks))
    else:
        results = dict(
            _run_cell(dataset, model_cfg, cfg, methods, test_per_class, k, r)
            for k, r in tasks
        )

    rows = []
    measured = {}
    for method in methods:
        for k in shots:
            accs = np.array([results[(k, r)][method][0] for r in range(runs)])
            sils = np.array([results[(k, r)][method][1] for r in range(runs)])
            secs = np.array([results[(k, r)][method][2] for r in range(runs)])
            rows.append(
                BenchmarkRow(
                    method=method,
                    shots=k,
                    runs=runs,
                    acc_mean=float(accs.mean()),
                    acc_std=float(accs.std()),
                    sil_mean=float(sils.mean()),
                    sil_std=float(sils.std()),
                    seconds_mean=0.0,
                )
            )
            measured[(method, k)] = float(secs.mean())
    return BenchmarkTable(rows=rows, measured_seconds=measured)
