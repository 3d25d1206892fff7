"""The acceptance criteria as runnable checks.

Each ``criterion_N`` returns a :class:`CriterionResult`.  Criteria 6-11
share trained models through a :class:`Lab`, which trains each
(variant, mode, seed) model once.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import numpy as np
import torch

from .. import substrate as S
from ..models import (
    ModelConfig,
    TaskData,
    TrainConfig,
    build_corpus,
    init_model,
    load_checkpoint,
    make_batch,
    pooled_embeddings,
    predict_n,
    predict_t,
    save_checkpoint,
)
from ..models.training import aux_losses, main_loss_t
from ..regularizers import (
    BalanceConfig,
    ContrastiveConfig,
    balance_coefficients,
    contrastive_loss,
    lipschitz_loss,
)
from ..search import (
    BOConfig,
    SearchBudget,
    bo_categorical_search,
    bo_qei_search,
    cmaes_search,
    ea_search,
)
from ..tasks import OfflineDataset, default_suite_entries, gen_offline_dataset, make_dataset, probe_range
from ..textcodec import DEFAULT_VOCAB, DesignSpace, Metadata, p10_decode, p10_encode
from . import oracles
from .config import RunConfig
from .metrics import embedding_structure, evaluate_candidates, ratio_exceedance, spearman_ood
from .pipeline import ModelScorer, encode_inputs, few_shot, generate_datasets, run_pipeline, search_task, train_model

log = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} criterion {self.number:>2} {self.name}: {self.detail} [{self.seconds:.1f}s]"


def _timed(number: int, name: str, limit: float | None = None):
    """Wrap a check returning (passed, detail); ``limit`` is a wall-clock bound in seconds."""

    def wrap(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            passed, detail = fn(*args, **kw)
            seconds = time.perf_counter() - t0
            if limit is not None and seconds >= limit:
                passed, detail = False, f"{detail}; over the {limit:g}s limit"
            return CriterionResult(number, name, bool(passed), detail, seconds)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


# --- 1: codec ---------------------------------------------------------------


@_timed(1, "codec exactness", limit=1.0)
def criterion_1(n: int = 10_000, seed: int = 0):
    v = DEFAULT_VOCAB
    want = [v.sign_plus, v.digit(1), v.digit(3), v.digit(1), v.exponent(-2)]
    example_ok = p10_encode(1.31, 3) == want
    rng = np.random.default_rng(seed)
    values = rng.choice([-1.0, 1.0], n) * 10 ** rng.uniform(-12, 15, n)
    worst = 0.0
    for y in values:
        toks = p10_encode(float(y), 3)
        exponent = toks[-1] - v.exp0 - v.e_max
        mantissa = int("".join(str(t - v.digit0) for t in toks[1:-1]))
        exact = Decimal(mantissa).scaleb(exponent) * (-1 if toks[0] == v.sign_minus else 1)
        err = abs(exact - Decimal(repr(float(y)))) / Decimal(1).scaleb(exponent)
        worst = max(worst, float(err))
        if p10_decode(toks) != float(exact):
            return False, f"decode of {y!r} is not exact"
    ok = example_ok and worst <= 0.5
    return ok, f"1.31 example {'exact' if example_ok else 'WRONG'}; worst round-trip error {worst:.4f} mantissa ULP over {n}"


# --- 2: gradients -------------------------------------------------------------

TINY = dict(n_layers=1, d_model=8, n_heads=2, head_dim=4, d_ff=16, max_len=64,
            regressor_hidden=8, regressor_layers=1, proj_hidden=8, proj_dim=8)


def _tiny_corpus(rng: np.random.Generator, per_task: int = 4) -> tuple:
    tasks = []
    for t in range(2):
        toks = [[DEFAULT_VOCAB.bos] + rng.integers(32, 127, rng.integers(4, 10)).tolist() + [DEFAULT_VOCAB.eos]
                for _ in range(per_task)]
        raw = rng.normal(0, 3, per_task)
        tasks.append(TaskData(f"t{t}", Metadata(f"task {t}", f"tiny {t * 'x'}", "max"), toks, raw, rng.random(per_task)))
    corpus = build_corpus(tasks)
    return corpus, list(range(len(corpus)))


def _params(net):
    return dict(net.named_parameters())


def composed_loss_fns(seed: int) -> dict[str, tuple]:
    """Full training objectives on tiny float64 models, coefficients frozen at the start point."""
    rng = np.random.default_rng(seed)
    corpus, rows = _tiny_corpus(rng)
    cfg = BalanceConfig()
    out = {}

    st = init_model(ModelConfig(variant="T", **TINY), seed)
    st.net.double()
    batch = make_batch(corpus, rows, DEFAULT_VOCAB.pad)
    st.net.train()
    l_main, pooled = main_loss_t(st, corpus, batch)
    l_con, l_lip = aux_losses(st, corpus, batch, batch, TrainConfig())
    c_con, c_lip = balance_coefficients(l_main.item(), l_con.item(), l_lip.item(), cfg)

    def t_loss(st=st, batch=batch, c_con=c_con, c_lip=c_lip):
        m, _ = main_loss_t(st, corpus, batch)
        a, b = aux_losses(st, corpus, batch, batch, TrainConfig())
        return m + c_con * a + c_lip * b

    out["uniso-t balanced"] = (t_loss, _params(st.net))

    sn = init_model(ModelConfig(variant="N", **TINY), seed)
    sn.net.double()
    sn.net.train()
    a, b = aux_losses(sn, corpus, batch, batch, TrainConfig())
    _, c = balance_coefficients(a.item(), None, b.item(), cfg)

    def n_stage1(sn=sn, c=c):
        x, y = aux_losses(sn, corpus, batch, batch, TrainConfig())
        return x + c * y

    out["uniso-n embedder"] = (n_stage1, {k: v for k, v in _params(sn.net).items() if k in sn.net.encoder_parameter_names()})

    def n_stage2(sn=sn):
        with torch.no_grad():
            hidden, _ = sn.net.encode(batch.tokens, batch.mask)
            pooled = sn.net.pool(hidden, batch.mask)
        pred = sn.net.regressor(sn.net.bn(pooled))
        return S.squared_error(pred, corpus.norm_y.double())

    out["uniso-n regressor"] = (n_stage2, {k: v for k, v in _params(sn.net).items() if k in sn.net.head_parameter_names()})
    return out


def primitive_loss_fns(seed: int) -> dict[str, tuple]:
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    zx = torch.randn(n, 5, generator=g, dtype=torch.float64, requires_grad=True)
    zm = torch.randn(n, 5, generator=g, dtype=torch.float64, requires_grad=True)
    z = torch.randn(n, 4, generator=g, dtype=torch.float64, requires_grad=True)
    y = torch.randn(n, generator=g, dtype=torch.float64)
    logits = torch.randn(n, 7, generator=g, dtype=torch.float64, requires_grad=True)
    targets = torch.randint(0, 7, (n,), generator=g)
    pred = torch.randn(n, generator=g, dtype=torch.float64, requires_grad=True)
    cfg = ContrastiveConfig(temperature=0.5)
    return {
        "contrastive": (lambda: contrastive_loss(zx, zm, cfg), {"zx": zx, "zm": zm}),
        "lipschitz": (lambda: lipschitz_loss({"a": (z, y)}, {"a": 10, "b": 30}), {"z": z}),
        "cross-entropy": (lambda: S.cross_entropy(logits, targets), {"logits": logits}),
        "squared error": (lambda: S.squared_error(pred, y), {"pred": pred}),
    }


@_timed(2, "gradient fidelity", limit=120.0)
def criterion_2(instances: int = 20, tol: float = 1e-4):
    worst: dict[str, float] = {}
    for seed in range(instances):
        fns = {**primitive_loss_fns(seed), **composed_loss_fns(seed)}
        for name, (fn, params) in fns.items():
            err = S.grad_check(fn, params, eps=1e-6, max_entries=6, seed=seed)
            worst[name] = max(worst.get(name, 0.0), err)
    ok = all(v <= tol for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


# --- 3: loss oracles ------------------------------------------------------------


@_timed(3, "loss oracles")
def criterion_3(seeds: int = 20, tol: float = 1e-10):
    worst_c = worst_l = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 17))
        zx, zm = rng.normal(size=(n, 6)), rng.normal(size=(n, 6))
        tau = float(rng.uniform(0.05, 1.0))
        got = contrastive_loss(torch.tensor(zx), torch.tensor(zm), ContrastiveConfig(tau)).item()
        ref = oracles.contrastive_direct(zx.tolist(), zm.tolist(), tau)
        worst_c = max(worst_c, abs(got - ref) / max(abs(ref), 1e-300))
        groups, sizes = {}, {}
        for t in range(int(rng.integers(1, 4))):
            m = int(rng.integers(2, 17))
            groups[f"t{t}"] = (rng.normal(size=(m, 5)), rng.normal(size=m))
            sizes[f"t{t}"] = int(rng.integers(50, 500))
        got = lipschitz_loss({k: (torch.tensor(z), torch.tensor(y)) for k, (z, y) in groups.items()}, sizes).item()
        ref = oracles.lipschitz_direct({k: (z.tolist(), y.tolist()) for k, (z, y) in groups.items()}, sizes)
        worst_l = max(worst_l, abs(got - ref) / max(abs(ref), 1e-300))
    rng = np.random.default_rng(0)
    two = contrastive_loss(torch.tensor(rng.normal(size=(2, 4))), torch.tensor(rng.normal(size=(2, 4)))).item()
    ok = worst_c <= tol and worst_l <= tol and two == 0.0
    return ok, f"contrastive rel err {worst_c:.1e}, lipschitz rel err {worst_l:.1e}, N=2 value {two!r}"


# --- 4: balancing ---------------------------------------------------------------


@_timed(4, "balancing arithmetic")
def criterion_4():
    c_con, c_lip = balance_coefficients(2.0, 1.0, 4.0)
    hand = abs(c_con - 2.0) <= 1e-9 and abs(c_lip - 0.5) <= 1e-9
    finite = True
    for losses in [(0.0, 0.0, 0.0), (2.0, 0.0, 4.0), (2.0, 1.0, 0.0), (0.0, 1.0, 1.0)]:
        with np.errstate(all="raise"):
            try:
                cs = balance_coefficients(*losses)
            except (ZeroDivisionError, FloatingPointError):
                finite = False
                continue
        finite &= all(math.isfinite(c) for c in cs)
    return hand and finite, f"coefficients ({c_con:.12f}, {c_lip:.12f}); zero losses finite: {finite}"


# --- 5: searchers ---------------------------------------------------------------


class _Counting:
    def __init__(self, fn):
        self.fn, self.rows = fn, 0

    def __call__(self, x):
        self.rows += len(x)
        return self.fn(x)


def _sphere(x):
    return -np.sum(x**2, axis=1)


@_timed(5, "searcher soundness", limit=600.0)
def criterion_5(seed: int = 0):
    notes, ok = [], True
    space = DesignSpace.continuous(5, -5.0, 5.0)
    rng = np.random.default_rng(seed)
    designs = space.sample(100, rng)
    data = make_dataset("sphere5", designs, _sphere(designs))

    def account(name, fn, result, budget):
        nonlocal ok
        exact = fn.rows == result.n_evals <= budget
        ok &= exact
        return exact

    f = _Counting(_sphere)
    r = ea_search(f, space, data, SearchBudget(1000, 128, seed))
    ea_ok = -r.best <= 1e-2 and account("ea", f, r, 1000)
    f = _Counting(_sphere)
    r2 = cmaes_search(f, space, data, SearchBudget(1000, 128, seed))
    cma_ok = -r2.best <= 1e-3 and account("cmaes", f, r2, 1000)
    notes.append(f"EA gap {-r.best:.1e}, CMA-ES gap {-r2.best:.1e}")

    space3 = DesignSpace.continuous(3, -1.0, 1.0)
    centre = np.array([0.3, -0.2, 0.5])

    def quad(x):
        return 1.0 - np.sum((x - centre) ** 2, axis=1)

    designs = space3.sample(50, rng)
    f = _Counting(quad)
    r3 = bo_qei_search(f, space3, make_dataset("quad3", designs, quad(designs)), SearchBudget(200, 10, seed),
                       BOConfig(initial=50))
    bo_ok = 1.0 - r3.best <= 1e-2 and account("bo", f, r3, 200)
    notes.append(f"qEI gap {1.0 - r3.best:.1e}")

    cat = DesignSpace.categorical(8, 4)
    planted = np.array([2, 0, 3, 1, 1, 3, 0, 2])

    def signal(x):
        return (np.asarray(x) == planted).sum(1).astype(float)

    found = 0
    for s in range(5):
        rs = np.random.default_rng(100 + s)
        pool = cat.sample(2000, rs)
        pool = pool[signal(pool) <= 3][:100]
        f = _Counting(signal)
        rc = bo_categorical_search(f, cat, make_dataset("planted", pool, signal(pool)), SearchBudget(1000, 10, s))
        account("categorical", f, rc, 1000)
        found += bool(np.any(np.all(rc.designs == planted, axis=1)))
    cat_ok = found >= 4
    notes.append(f"planted optimum found on {found}/5 seeds")
    ok &= ea_ok and cma_ok and bo_ok and cat_ok
    return ok, "; ".join(notes) + ("" if ok else " (accounting or optimum check failed)")


# --- shared trained models --------------------------------------------------------


@dataclass(frozen=True)
class DeskScale:
    dataset_size: int = 300
    epochs: int = 10
    regressor_epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    budget: int = 1000
    final_count: int = 128
    seeds: tuple[int, ...] = (0, 1, 2)
    heldout_batch: int = 64
    heldout_task: str = "ackley6_s100"
    smoothness_factor: float = 2.0

    @classmethod
    def quick(cls) -> "DeskScale":
        return cls(dataset_size=100, epochs=1, regressor_epochs=5, budget=100, final_count=16, seeds=(0,), heldout_batch=16)


@dataclass
class Lab:
    scale: DeskScale = field(default_factory=DeskScale)

    def __post_init__(self):
        entries = default_suite_entries(self.scale.dataset_size)
        self.train_entries = [e for e in entries if not e.heldout]
        self.heldout_entries = [e for e in entries if e.heldout]
        for e in entries:
            e.y_range = probe_range(e.task)
        self.tasks = [e.task for e in self.train_entries]
        self.datasets = generate_datasets(self.train_entries)
        self.models: dict[tuple, object] = {}
        self.train_seconds: dict[tuple, float] = {}
        self._heldout_batches: dict[str, OfflineDataset] = {}

    def config(self, variant: str, mode: str) -> RunConfig:
        s = self.scale
        return RunConfig(variant=variant, mode=mode, epochs=s.epochs, batch_size=s.batch_size, lr=s.lr,
                         dataset_size=s.dataset_size, regressor_epochs=s.regressor_epochs, budget=s.budget,
                         final_count=s.final_count)

    def model(self, variant: str, mode: str, seed: int):
        key = (variant, mode, seed)
        if key not in self.models:
            t0 = time.process_time()
            state, _ = train_model(self.config(variant, mode), seed, self.tasks, self.datasets)
            self.train_seconds[key] = time.process_time() - t0
            self.models[key] = state
            log.info("trained %s in %.0fs CPU", key, self.train_seconds[key])
        return self.models[key]

    def heldout_batch(self, task_id: str) -> OfflineDataset:
        """Fresh designs from the training tasks, never seen in training."""
        if task_id not in self._heldout_batches:
            task = next(t for t in self.tasks if t.id == task_id)
            fresh = gen_offline_dataset(task, max(100, self.scale.heldout_batch), seed=10_007)
            k = self.scale.heldout_batch
            self._heldout_batches[task_id] = OfflineDataset(
                task_id, fresh.designs[:k], fresh.scores[:k], self.datasets[task_id].stats, {"heldout": True}
            )
        return self._heldout_batches[task_id]

    def embeddings(self, state):
        zs, labels, ys = [], [], []
        for task in self.tasks:
            batch = self.heldout_batch(task.id)
            _, z = pooled_embeddings(state, encode_inputs(task, batch.designs))
            zs.append(z)
            labels += [task.id] * len(z)
            ys.append(batch.normalized)
        return zs, labels, ys


# --- 6-10: desk-scale trends ---------------------------------------------------------


@_timed(6, "desk-scale trend (improved UniSO-T beats D(best))")
def criterion_6(lab: Lab):
    s = lab.scale
    counts, cpu = [], 0.0
    for seed in s.seeds:
        state = lab.model("T", "improved", seed)
        cpu += lab.train_seconds[("T", "improved", seed)]
        t0 = time.process_time()
        n = 0
        for e in lab.train_entries:
            ds = lab.datasets[e.task.id]
            res = search_task(state, e.task, ds, "ea", SearchBudget(s.budget, s.final_count, seed))
            n += evaluate_candidates(e.task, res.designs, *e.y_range, ds.best).exceeds
        cpu += time.process_time() - t0
        counts.append(n)
    med = float(np.median(counts))
    ok = med >= 4 and cpu < 45 * 60
    return ok, f"tasks exceeding D(best) per seed {counts} (median {med:g}/6); CPU {cpu / 60:.1f} min"


@_timed(7, "embedding structure")
def criterion_7(lab: Lab):
    wins, notes = 0, []
    for seed in lab.scale.seeds:
        zi, labels, _ = lab.embeddings(lab.model("T", "improved", seed))
        zv, _, _ = lab.embeddings(lab.model("T", "vanilla", seed))
        si = embedding_structure(np.concatenate(zi), labels)
        sv = embedding_structure(np.concatenate(zv), labels)
        good = si["inter_centroid"] > si["intra_pairwise"] and si["silhouette"] > sv["silhouette"]
        wins += good
        notes.append(
            f"seed {seed}: inter {si['inter_centroid']:.3f} vs intra {si['intra_pairwise']:.3f}, "
            f"silhouette {si['silhouette']:.3f} vs vanilla {sv['silhouette']:.3f}"
        )
    return wins >= 2, f"{wins}/{len(lab.scale.seeds)} seeds; " + "; ".join(notes)


@_timed(8, "smoothness effect")
def criterion_8(lab: Lab):
    wins, notes = 0, []
    k = lab.scale.smoothness_factor
    for seed in lab.scale.seeds:
        zi, _, ys = lab.embeddings(lab.model("T", "improved", seed))
        zv, _, _ = lab.embeddings(lab.model("T", "vanilla", seed))
        fi = float(np.mean([ratio_exceedance(z, y, k) for z, y in zip(zi, ys)]))
        fv = float(np.mean([ratio_exceedance(z, y, k) for z, y in zip(zv, ys)]))
        wins += fi < fv
        notes.append(f"seed {seed}: {fi:.3f} vs vanilla {fv:.3f}")
    return wins >= 2, f"fraction of ratios above {k:g}x median, {wins}/{len(lab.scale.seeds)} seeds; " + "; ".join(notes)


@_timed(9, "transfer trend")
def criterion_9(lab: Lab):
    s = lab.scale
    entry = next(e for e in lab.heldout_entries if e.task.id == s.heldout_task)
    full = gen_offline_dataset(entry.task, entry.dataset_size, entry.protocol, entry.seed)
    pairs = full.poorest(100)
    zero, few = [], []
    for seed in s.seeds:
        state = lab.model("T", "improved", seed)
        budget = SearchBudget(s.budget, s.final_count, seed)
        res = search_task(state, entry.task, pairs, "ea", budget)
        zero.append(float(entry.task.evaluate(res.designs).max()))
        tuned, _ = few_shot(state, entry.task, pairs, seed)
        res = search_task(tuned, entry.task, pairs, "ea", budget)
        few.append(float(entry.task.evaluate(res.designs).max()))
    mz, mf = float(np.median(zero)), float(np.median(few))
    ok = mf >= mz and mz > pairs.best
    return ok, f"{entry.task.id}: few-shot {mf:.4f} vs zero-shot {mz:.4f} vs poorest-100 D(best) {pairs.best:.4f}"


@_timed(10, "OOD diagnostic (UniSO-N Spearman)")
def criterion_10(lab: Lab):
    s = lab.scale
    trained = {t.id: [] for t in lab.tasks}
    untrained = {t.id: [] for t in lab.tasks}
    for seed in s.seeds:
        state = lab.model("N", "improved", seed)
        fresh = init_model(ModelConfig(variant="N"), seed)
        for task in lab.tasks:
            ds = lab.datasets[task.id]
            trained[task.id].append(spearman_ood(ModelScorer(state, task, ds), task, ds, seed=seed))
            untrained[task.id].append(spearman_ood(ModelScorer(fresh, task, ds), task, ds, seed=seed))
    med_t = {k: float(np.median(v)) for k, v in trained.items()}
    med_u = {k: float(np.median(v)) for k, v in untrained.items()}
    above = sum(v > 0.3 for v in med_t.values())
    beats = all(med_t[k] > med_u[k] for k in med_t)
    ok = above >= 4 and beats
    detail = ", ".join(f"{k} {med_t[k]:+.2f}/{med_u[k]:+.2f}" for k in med_t)
    return ok, f"rho > 0.3 on {above}/6, beats untrained on all: {beats} (trained/untrained: {detail})"


# --- 11: determinism ----------------------------------------------------------------


@_timed(11, "determinism and persistence")
def criterion_11(lab: Lab | None = None):
    with tempfile.TemporaryDirectory() as tmp:
        reports = []
        for run in ("a", "b"):
            cfg = RunConfig(variant="T", mode="improved", epochs=1, dataset_size=100, budget=40, final_count=8,
                            seeds=(3,), out=str(Path(tmp) / run))
            run_pipeline(cfg)
            reports.append((Path(tmp) / run / "seed3" / "report.jsonl").read_bytes()
                           + (Path(tmp) / run / "seed3" / "report.txt").read_bytes())
        same_report = reports[0] == reports[1]
        exact = True
        probe = [
            [DEFAULT_VOCAB.bos] + list(b'name: p; x: {"x0":0.5}') + [DEFAULT_VOCAB.eos],
            [DEFAULT_VOCAB.bos] + list(b'name: q; x: {"x0":1.25}') + [DEFAULT_VOCAB.eos],
        ]
        t_state = load_checkpoint(Path(tmp) / "a" / "seed3" / "model.uniso")
        n_state = lab.model("N", "improved", lab.scale.seeds[0]) if lab is not None else init_model(ModelConfig(variant="N"), 3)
        for state, predict in ((t_state, predict_t), (n_state, predict_n)):
            path = Path(tmp) / f"rt_{state.config.variant}.uniso"
            save_checkpoint(state, path)
            again = load_checkpoint(path)
            exact &= np.array_equal(predict(state, probe), predict(again, probe), equal_nan=True)
    return same_report and exact, f"reports byte-identical: {same_report}; reload predictions bit-exact: {exact}"


CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
    10: criterion_10,
    11: criterion_11,
}
NEEDS_LAB = {6, 7, 8, 9, 10, 11}


def run_acceptance(numbers=None, scale: str = "desk", echo=print) -> list[CriterionResult]:
    numbers = sorted(numbers or CRITERIA)
    lab = Lab(DeskScale.quick() if scale == "quick" else DeskScale()) if NEEDS_LAB & set(numbers) else None
    results = []
    for n in numbers:
        res = CRITERIA[n](lab) if n in NEEDS_LAB else CRITERIA[n]()
        echo(res.line())
        results.append(res)
    return results
