import numpy as np
import pytest

from uniso.tasks import (
    SEQMATCH_TARGET,
    builtin_suite,
    default_suite_entries,
    gen_offline_dataset,
    heldout_suite,
    middle50_indices,
    oracle_eval,
    read_datasets,
    read_suite,
    transform_task,
    write_datasets,
    write_suite,
)

SUITE = {t.id: t for t in builtin_suite()}


def test_suite_shape():
    assert len(SUITE) == 6
    kinds = [t.space.is_categorical for t in SUITE.values()]
    assert sum(kinds) == 2
    for t in SUITE.values():
        assert t.metadata.name and t.metadata.description and t.metadata.objective


def test_analytic_optima():
    assert oracle_eval(SUITE["sphere8"], [0.0] * 8) == 0.0
    assert oracle_eval(SUITE["rastrigin5"], [0.0] * 5) == pytest.approx(0.0, abs=1e-12)
    assert oracle_eval(SUITE["levy10"], [1.0] * 10) == pytest.approx(0.0, abs=1e-12)
    assert oracle_eval(SUITE["onemax12"], [1] * 12) == 12
    assert oracle_eval(SUITE["seqmatch8"], list(SEQMATCH_TARGET)) == 8
    assert oracle_eval(SUITE["sphereshift8"], [0.3] * 8) == pytest.approx(0.0, abs=1e-12)


def test_oracle_pure_and_validating():
    x = np.random.default_rng(0).uniform(-5, 5, size=8)
    assert oracle_eval(SUITE["sphere8"], x) == oracle_eval(SUITE["sphere8"], x)
    with pytest.raises(ValueError):
        oracle_eval(SUITE["sphere8"], [10.0] * 8)
    with pytest.raises(ValueError):
        oracle_eval(SUITE["onemax12"], [2] * 12)


def test_transform_properties():
    base = SUITE["sphere8"]
    rng = np.random.default_rng(1)
    xs = base.space.sample(50, rng)
    ident = transform_task(base, 1.0, [0.0] * 8, seed=0)
    assert np.array_equal(ident.evaluate(xs), base.evaluate(xs))
    doubled = transform_task(base, 2.0, [0.0] * 8, seed=0)
    assert np.array_equal(doubled.evaluate(xs), 2 * base.evaluate(xs))
    shift = [0.5, -1.0, 0.25, 0, 0, 0, 0, 2.0]
    moved = transform_task(base, 1.0, shift, seed=3)
    assert oracle_eval(moved, shift) == 0.0
    assert moved.id != base.id and moved.metadata != base.metadata
    with pytest.raises(ValueError):
        transform_task(base, 1.0, [6.0] * 8, seed=0)
    with pytest.raises(ValueError):
        transform_task(base, 0.0, [0.0] * 8, seed=0)


def test_heldout_suite_distinct_seeds():
    held = heldout_suite()
    assert len(held) == 3
    assert {t.function for t in held}.isdisjoint({t.function for t in SUITE.values()})
    assert len({t.id for t in held}) == 3


def test_middle50_band():
    scores = np.arange(1, 101, dtype=float)
    kept = scores[middle50_indices(scores)]
    assert kept.min() > np.percentile(scores, 25) - 1 and kept.max() <= np.percentile(scores, 75) + 1
    assert len(kept) == 50


@pytest.mark.parametrize("task_id", sorted(SUITE))
def test_dataset_size_and_best_below_optimum(task_id):
    task = SUITE[task_id]
    ds = gen_offline_dataset(task, n=200, seed=1)
    assert len(ds) == 200
    assert all(task.space.contains(x) for x in ds.designs)
    assert ds.best < task.optimum
    assert ds.best == ds.scores.max()


def test_dataset_rejects_small_n():
    with pytest.raises(ValueError):
        gen_offline_dataset(SUITE["sphere8"], n=50)


def test_dataset_and_suite_roundtrip(tmp_path):
    datasets = [gen_offline_dataset(t, n=100, seed=2) for t in list(SUITE.values())[:2]]
    write_datasets(tmp_path / "d.jsonl", datasets)
    back = read_datasets(tmp_path / "d.jsonl")
    for ds in datasets:
        other = back[ds.task_id]
        assert np.array_equal(other.designs, ds.designs)
        assert np.array_equal(other.scores, ds.scores)
        assert np.allclose(other.normalized, ds.normalized)
    entries = default_suite_entries(100)
    write_suite(tmp_path / "s.json", entries)
    again = read_suite(tmp_path / "s.json")
    assert [e.to_dict() for e in again] == [e.to_dict() for e in entries]
    xs = entries[4].task.space.sample(20, np.random.default_rng(0))
    assert np.array_equal(again[4].task.evaluate(xs), entries[4].task.evaluate(xs))
