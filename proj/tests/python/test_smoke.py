import itertools
import json

import numpy as np
import pytest

import stkd


def test_published_parameter_counts():
    assert stkd.parameter_count("teacher", 228) == 333604
    assert stkd.parameter_count("base", 228) == 48628
    assert stkd.parameter_count("student", 170) == 7766
    with pytest.raises(ValueError):
        stkd.parameter_count("giant", 10)


def test_flops_scale_with_batch():
    assert stkd.count_flops("student", 10, 4) == 4 * stkd.count_flops("student", 10, 1)


def brute_temporal(f):
    b, t, n, c = f.shape
    out = np.zeros((b, n, t, t))
    for bb, nn, i, j in itertools.product(range(b), range(n), range(t), range(t)):
        out[bb, nn, i, j] = np.abs(f[bb, i, nn] - f[bb, j, nn]).mean()
    return out


def test_correlation_tensors_match_numpy():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(2, 3, 4, 5))
    np.testing.assert_allclose(stkd.correlation_temporal(f), brute_temporal(f), atol=1e-12)
    spatial = np.abs(f[:, :, :, None, :] - f[:, :, None, :, :]).mean(axis=-1)
    np.testing.assert_allclose(stkd.correlation_spatial(f), spatial, atol=1e-12)
    assert stkd.tcd_loss(f, f) == 0.0
    assert stkd.scd_loss(f, f) == 0.0


def test_routing_example():
    r = stkd.ord_loss(np.full((1, 3), 5.0), np.array([[0.0, 1.0, 2.0]]), np.zeros((1, 3)), 0.4)
    assert r["routed"] == 2
    assert r["teacher_ratio"] == pytest.approx(2 / 3)


def test_pipeline_commands(tmp_path):
    common = dict(
        out=str(tmp_path),
        seed=1,
        set=[
            "dataset.synthetic.nodes=4",
            "dataset.synthetic.timesteps=200",
            "models.teacher=[[1,4,8],[8,4,8]]",
            "train.teacher.epochs=1",
            "train.student.epochs=1",
        ],
    )
    rc, _, err = stkd.run("train-teacher", **common)
    assert rc == stkd.EXIT_MISSING_ARTIFACT, err
    for cmd in ("prepare", "train-teacher", "distill", "eval"):
        rc, log, err = stkd.run(cmd, **common)
        assert rc == stkd.EXIT_OK, err
    ckpts = list(tmp_path.glob("*/teacher/checkpoint.json"))
    assert len(ckpts) == 1
    info = stkd.checkpoint_info(str(ckpts[0]))
    assert info["role"] == "teacher"
    assert json.loads(info["metadata"])["loss"] == "target"
    rc, _, _ = stkd.run("eval", preset="nonexistent", out=str(tmp_path))
    assert rc == stkd.EXIT_CONFIG
    with pytest.raises(FileNotFoundError):
        stkd.checkpoint_info(str(tmp_path / "missing.json"))
