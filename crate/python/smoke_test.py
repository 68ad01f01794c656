"""End-to-end smoke test for the graffl_py extension module."""

import json
import tempfile

import numpy as np

import graffl_py as g


def main():
    truth = g.GmmParams(
        [1 / 3, 1 / 3, 1 / 3],
        [[-9.0, 3.0], [0.0, -9.0], [8.0, 3.0]],
        [np.eye(2).tolist()] * 3,
    )
    rows, comps = truth.sample(300, seed=1)
    x = np.asarray(rows)
    assert x.shape == (300, 2)
    assert abs(np.bincount(comps, minlength=3) / 300 - 1 / 3).max() < 0.1

    prior_draw = g.sample_prior(3, 2, seed=4)
    assert abs(sum(prior_draw.weights) - 1) < 1e-12

    central = g.rejection_sample(x.tolist(), 3000, 30, 3, seed=2026)
    sites = [x[:100].tolist(), x[100:180].tolist(), x[180:].tolist()]
    fed = g.federated_run(sites, 3000, 30, 3, seed=2026)
    fed_tcp = g.federated_run(sites, 3000, 30, 3, seed=2026, transport="socket")
    assert fed == central == fed_tcp, "federated and centralized posteriors differ"
    est = fed.estimate()
    print(f"posterior: {len(fed)} draws, epsilon {fed.epsilon:.4f}, estimate weights {np.round(est.weights, 3)}")

    rng = np.random.default_rng(0)
    labels = (rng.random(400) < 0.3).astype(int)
    feats = rng.normal(size=(400, 6)) + labels[:, None] * 1.5
    ae = g.SuffiAE.train(feats.tolist(), labels.tolist(), d=2, epochs=20, seed=5)
    z = np.asarray(ae.encode(feats.tolist()))
    assert z.shape == (400, 2)
    scores = ae.classify(z.tolist())
    a = g.auc(scores, labels.tolist())
    cut = g.select_cutoff(scores, labels.tolist())
    f1 = g.f1_at_cutoff(scores, labels.tolist(), cut)
    print(f"SuffiAE head: AUC {a:.3f}, F1 {f1:.3f} at cut-off {cut:.3f}")
    assert a > 0.8
    assert g.SuffiAE.from_json(ae.to_json()).encode(feats[:3].tolist()) == z[:3].tolist()

    cfg = {
        "scenario": "trimodal",
        "seed": 7,
        "sites": [{"n": 40}] * 3,
        "abc": {"n_proposals": 4000, "n_accept": 20, "k": 3},
    }
    with tempfile.TemporaryDirectory() as out:
        doc = json.loads(g.run_experiment(json.dumps(cfg), out))
    assert len(doc["accepted"]) == 20

    try:
        g.auc([0.1, 0.2], [1, 1])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class AUC should raise")
    print("smoke test passed")


if __name__ == "__main__":
    main()
