import json

import numpy as np
import pytest

from uniso.harness.cli import main
from uniso.harness.config import RunConfig
from uniso.harness.export import read_table
from uniso.harness.metrics import (
    EvalReport,
    TaskEval,
    embedding_structure,
    evaluate_candidates,
    ood_region,
    ratio_exceedance,
    report_ranks,
    spearman_ood,
)
from uniso.tasks import builtin_suite, gen_offline_dataset

SPHERE = builtin_suite()[0]


def row(task_id, best):
    return TaskEval(task_id, 0.0, best, best, 0.0, 0.0, best > 0, 1)


def test_evaluate_candidates_normalization_endpoints():
    ev = evaluate_candidates(SPHERE, np.zeros((1, 8)), -100.0, 0.0, -5.0)
    assert ev.normalized_best == 1.0 and ev.best == 0.0 and ev.exceeds
    worst = np.full((1, 8), 5.12)
    ev = evaluate_candidates(SPHERE, worst, float(-(5.12**2) * 8), 0.0, -5.0)
    assert ev.normalized_best == pytest.approx(0.0, abs=1e-12) and not ev.exceeds
    with pytest.raises(ValueError):
        evaluate_candidates(SPHERE, np.zeros((0, 8)), -1.0, 0.0, 0.0)


def test_exceed_is_strict():
    assert not evaluate_candidates(SPHERE, np.zeros((1, 8)), -1.0, 1.0, 0.0).exceeds


def test_ranks():
    a = EvalReport("a", [row("t1", 1.0), row("t2", 2.0)])
    b = EvalReport("b", [row("t1", 0.5), row("t2", 1.0)])
    assert report_ranks({"a": a})["a"]["mean"] == 1.0
    ranks = report_ranks({"a": a, "b": b})
    assert ranks["a"]["mean"] == 1.0 and ranks["b"]["mean"] == 2.0
    tie = report_ranks({"a": a, "c": EvalReport("c", [row("t1", 1.0), row("t2", 2.0)])})
    assert tie["a"]["ranks"]["t1"] == 1.5
    with pytest.raises(ValueError):
        report_ranks({"a": a, "d": EvalReport("d", [row("t1", 1.0)])})


def test_report_roundtrip(tmp_path):
    rep = EvalReport("m", [row("t1", 1.0)])
    rep.write(tmp_path)
    assert EvalReport.read(tmp_path / "report.jsonl").to_records() == rep.to_records()
    assert "exceeds D(best) on 1/1" in (tmp_path / "report.txt").read_text()


def test_spearman_extremes():
    ds = gen_offline_dataset(SPHERE, n=200, seed=0)
    region = ood_region(SPHERE, ds, 50, 0)
    assert np.all(SPHERE.evaluate(region) > np.percentile(ds.scores, 75))
    assert spearman_ood(SPHERE.evaluate, SPHERE, ds, 50, 0) == pytest.approx(1.0)
    assert spearman_ood(lambda x: -SPHERE.evaluate(x), SPHERE, ds, 50, 0) == pytest.approx(-1.0)


def test_embedding_structure_separated_clusters():
    rng = np.random.default_rng(0)
    z = np.concatenate([rng.normal(size=(20, 4)) * 0.05 + c for c in np.eye(4)[:3]])
    s = embedding_structure(z, ["a"] * 20 + ["b"] * 20 + ["c"] * 20)
    assert s["inter_centroid"] > s["intra_pairwise"] and s["silhouette"] > 0.8


def test_ratio_exceedance():
    z = np.arange(10.0)[:, None]
    assert ratio_exceedance(z, 2 * np.arange(10.0)) == 0.0
    y = np.arange(10.0)
    y[0] = 50
    assert 0 < ratio_exceedance(z, y) < 1


def test_config_validation(tmp_path, monkeypatch):
    with pytest.raises(ValueError):
        RunConfig(variant="Q")
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        RunConfig(budget=10, final_count=20)
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"variant": "n", "seeds": [3]}))
    cfg = RunConfig.load(path)
    assert cfg.variant == "N" and cfg.seeds == (3,)
    monkeypatch.setenv("UNISO_SEED", "7")
    assert cfg.with_overrides().seeds == (7,)


TINY_MODEL = dict(n_layers=1, d_model=16, n_heads=2, head_dim=8, d_ff=32, max_len=256,
                  regressor_hidden=16, regressor_layers=1, proj_hidden=16, proj_dim=8)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = dict(dataset_size=100, epochs=1, budget=20, final_count=5, model=TINY_MODEL)
    (out / "cfg.json").write_text(json.dumps(cfg))
    common = ["--config", str(out / "cfg.json"), "--out", str(out)]
    assert main(["gen-data", *common]) == 0
    assert main(["train", *common]) == 0
    return out, common


def test_cli_pipeline(run_dir, capsys):
    out, common = run_dir
    assert (out / "suite.json").exists() and (out / "model.uniso").exists()
    assert main(["search", *common, "--task", "sphere8"]) == 0
    assert main(["eval", *common, "--method", "tiny"]) == 0
    assert "sphere8" in capsys.readouterr().out
    assert main(["report", str(out / "report.jsonl")]) == 0
    assert "tiny" in capsys.readouterr().out


def test_cli_exports(run_dir):
    out, common = run_dir
    assert main(["export-embeddings", *common, "--task", "onemax12"]) == 0
    rows = read_table(out / "embeddings.tsv")
    assert len(rows) == 100 and all(len(r) == 2 + 16 + 8 for r in rows)
    assert main(["export-attention", *common, "--max-inputs", "3"]) == 0
    rows = read_table(out / "attention.tsv")
    assert len(rows) == 6
    for r in rows:
        assert sum(float(v) for v in r[2:7]) == pytest.approx(1.0, abs=1e-6)


def test_cli_finetune(run_dir):
    out, common = run_dir
    assert main(["finetune", *common, "--task", "ackley6_s100", "--epochs", "1"]) == 0
    assert (out / "model_ackley6_s100_fewshot.uniso").exists()
