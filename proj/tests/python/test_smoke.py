import json

import numpy as np
import pytest

import geotopo


def test_version():
    assert geotopo.__version__


def test_one_hot_softmax_roundtrip():
    labels = np.zeros((4, 4, 4), dtype=np.uint8)
    labels[1:3, 1:3, 1:3] = 1
    onehot = geotopo.one_hot(labels, 2)
    assert onehot.shape == (2, 4, 4, 4)
    assert np.array_equal(geotopo.argmax(onehot), labels)

    probs = geotopo.softmax_channels(np.random.default_rng(0).normal(size=(3, 2, 2, 2)), 2.0)
    assert np.allclose(probs.sum(axis=0), 1.0)


def test_moments_against_numpy():
    rng = np.random.default_rng(1)
    values = rng.uniform(size=(6, 5, 4))
    m = geotopo.moments(values, np.eye(3), np.ones(3), np.zeros(3))

    # Dense brute-force oracle in numpy over local coordinates, shifted to the
    # identity domain's world frame.
    idx = np.stack(np.meshgrid(np.arange(6), np.arange(5), np.arange(4), indexing="ij"), -1)
    r = (idx + 0.5) / np.array([6, 5, 4]) - 0.5
    w = values[..., None]
    mass = values.sum() / values.size
    centroid = (w * r).sum(axis=(0, 1, 2)) / values.sum()
    assert m["defined"]
    assert np.isclose(m["mass"], mass, atol=1e-12)
    assert np.allclose(m["centroid"], centroid, atol=1e-12)


def test_trilinear_matches_center_values():
    rng = np.random.default_rng(2)
    grid = rng.uniform(size=(4, 4, 4))
    centers = np.array(
        [[(i + 0.5) / 4 - 0.5, (j + 0.5) / 4 - 0.5, (k + 0.5) / 4 - 0.5]
         for i in range(4) for j in range(4) for k in range(4)])
    vals = geotopo.trilinear_sample(grid, centers)
    assert np.array_equal(vals, grid.reshape(-1))


def test_persistent_homology_torus():
    n = 20
    ax = (np.arange(n) + 0.5) / n - 0.5
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    rho = np.hypot(x, y)
    torus = ((rho - 0.28) ** 2 + z**2 <= 0.1**2).astype(np.float64)

    diagram = geotopo.persistent_homology(torus)
    essential = diagram["essential"]
    counts = [int(((diagram["dim"] == d) & essential).sum()) for d in range(3)]
    assert counts == [1, 1, 0]
    assert geotopo.betti_numbers(torus.astype(np.uint8)) == (1, 1, 0)


def test_schedule_values():
    s = geotopo.noise_schedule(100, 80.0, 0.01, 1.0)
    assert s[0] == 80.0
    assert s[-1] == 0.01
    assert np.all(np.diff(s) < 0)


def test_decode_recovers_argmax():
    labels = geotopo.generate_phantom("blobs", seed=3, index=0)
    onehot = geotopo.one_hot(labels, 2)
    logits = geotopo.encode(onehot, 1)
    n = labels.shape[0]
    ax = (np.arange(n) + 0.5) / n - 0.5
    pts = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    probs = geotopo.decode_field(logits, pts, 1.0)
    assert np.array_equal(probs.argmax(axis=1).reshape(labels.shape), labels)


def test_guided_task_runs_and_is_deterministic(tmp_path):
    # Tiny end-to-end run through the bound task runner.
    labels = [geotopo.generate_phantom("blobs", seed=5, index=i) for i in range(6)]
    ds = tmp_path / "ds"
    ds.mkdir()
    manifest = {"schema_version": 1, "spec_hash": "", "count": len(labels), "samples": []}
    # Reuse the family spec so the manifest parses.
    import subprocess  # noqa: F401  (manifest written through the library below)

    for i, lab in enumerate(labels):
        geotopo.gvox_write_labels(str(ds / f"sample_{i:05d}.gvox"), lab, 2)
        manifest["samples"].append({"file": f"sample_{i:05d}.gvox", "variant": 0, "parts": []})
    manifest["spec"] = {
        "channels": 2,
        "dims": [32, 32, 32],
        "seed": 5,
        "parts": [{"shape": "ellipsoid", "channel": 1, "center": [0, 0, 0],
                   "radii": [0.17, 0.14, 0.12]}],
    }
    (ds / "manifest.json").write_text(json.dumps(manifest))

    config = {
        "schema_version": 1,
        "dataset": str(ds),
        "latent_factor": 2,
        "sampler": {"steps": 10},
        "seeds": {"count": 1, "base": 7},
        "constraints": [
            {
                "selection": [False, True],
                "domain": {"type": "global"},
                "grid": [16, 16, 16],
                "mode": "l_coarse",
                "topological": {"betti": [1, 0, 0]},
                "weight_topo": 1.0,
            }
        ],
    }
    a = geotopo.run_task(json.dumps(config))
    b = geotopo.run_task(json.dumps(config))
    assert len(a) == 1
    assert np.array_equal(a[0]["labels"], b[0]["labels"])
    assert np.all(np.isfinite(a[0]["losses"]))


def test_gvox_roundtrip(tmp_path):
    labels = geotopo.generate_phantom("tori", seed=1, index=2)
    path = str(tmp_path / "t.gvox")
    geotopo.gvox_write_labels(path, labels, 2)
    back = geotopo.gvox_read(path)
    assert np.array_equal(back, labels)


def test_emd_identity_and_shift():
    rng = np.random.default_rng(4)
    a = rng.uniform(size=(12, 3))
    assert geotopo.emd(a, np.random.default_rng(5).permutation(a)) == pytest.approx(0.0, abs=1e-12)
    b = a + np.array([0.5, 0, 0])
    assert geotopo.emd(a, b) == pytest.approx(0.5, abs=1e-9)


def test_fmd_identical_sets():
    rng = np.random.default_rng(6)
    feats = [list(rng.normal(size=5)) for _ in range(32)]
    assert geotopo.fmd(feats, feats) < 1e-6
