"""Smoke test for the deepbow_py extension module.

Build and run from the repository root:

    cargo build --release -p deepbow-py --features extension-module
    cp target/release/libdeepbow_py.so python/deepbow_py.so
    python3 python/smoke_test.py
"""

import json
import random
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import deepbow_py as db


def blobs(n, centers, seed):
    rng = random.Random(seed)
    x, y = [], []
    for i in range(n):
        label = i % len(centers)
        cx, cy = centers[label]
        x.append([cx + rng.gauss(0, 0.3), cy + rng.gauss(0, 0.3)])
        y.append(label)
    return x, y


def check_vocabularies():
    x, _ = blobs(90, [(0, 0), (4, 0), (0, 4)], seed=1)
    cb = db.kmeans_fit(x, 3, seed=7)
    assert len(cb.centroids) == 3
    trace = cb.inertia_trace
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
    again = db.Codebook.from_bytes(cb.to_bytes())
    assert again.centroids == cb.centroids

    bow = db.encode_bow(x[:10], cb)
    assert len(bow) == 3 and abs(sum(bow) - 1.0) < 1e-12

    gmm = db.gmm_fit(x, 3, seed=7)
    ll = gmm.log_likelihood_trace
    assert all(b >= a - 1e-9 for a, b in zip(ll, ll[1:]))
    assert abs(sum(gmm.weights) - 1.0) < 1e-9
    fv = db.encode_fv(x[:10], gmm)
    assert len(fv) == 2 * 3 * 2
    assert abs(sum(v * v for v in fv) - 1.0) < 1e-9


def check_classifiers():
    x, y = blobs(60, [(0, 0), (3, 3), (0, 3)], seed=2)
    svm = db.train_svm(x, y, kernel="rbf", c=10.0, gamma=0.5)
    assert svm.predict(x) == y
    assert svm.classes == [0, 1, 2]
    restored = db.Classifier.from_bytes(svm.to_bytes())
    assert restored.decision_values(x) == svm.decision_values(x)

    rf = db.train_rf(x, y, n_trees=15, seed=3)
    assert sum(p == t for p, t in zip(rf.predict(x), y)) >= 57

    try:
        db.train_svm(x, [0] * len(x))
    except db.DeepBowError as e:
        assert "single class" in str(e)
    else:
        raise AssertionError("single-class training should fail")


def check_pipeline():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        manifest = db.synth_corpus(tmp / "corpus", species=["CA", "CL"], scans_per_preparation=3, size=256, seed=5)
        config = tmp / "run.toml"
        config.write_text(
            f'manifest = "{manifest}"\n'
            f'output_dir = "{tmp / "out"}"\n'
            "[preprocess.patch]\npatch_size = 32\nstride = 32\n"
            "[encoding]\nk = 2\n"
            "[classifier]\ninner_folds = 2\n"
            '[grid]\nfv_k = [2]\nkernels = ["linear"]\nc = [10.0]\ngamma = [0.001]\n'
        )
        db.preprocess(config)
        report = json.loads(db.evaluate(config))
        print(f"  patch total {report['patch']['total']['mean']:.1f}, scan total {report['scan']['total']['mean']:.1f}")
        verdict = json.loads(db.predict(tmp / "corpus" / "CL_p2_01.png", config))
        assert verdict["winner"] == "CL", verdict["winner"]


def main():
    for check in (check_vocabularies, check_classifiers, check_pipeline):
        check()
        print(f"ok  {check.__name__}")


if __name__ == "__main__":
    main()
