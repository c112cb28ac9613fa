"""Scripted score trajectories exercising the plateau schedulers."""

import numpy as np


def _walk(seed, epochs, n, step=0.05, start=0.3):
    rng = np.random.default_rng(seed)
    s = np.clip(start + np.cumsum(rng.normal(0, step, size=(epochs, n)), axis=0), 0, 1)
    return s.round(4).tolist()


def _rise_then_drop(epochs, n, peak_epoch, drop):
    rows = []
    for t in range(1, epochs + 1):
        base = [min(1.0, 0.1 * (k + 1) + 0.02 * min(t, peak_epoch)) for k in range(n)]
        if t > peak_epoch:
            base = [v - drop for v in base]
        rows.append([round(max(0.0, v), 6) for v in base])
    return rows


def scripted_cases():
    """List of (name, trajectory, delta, eps, zeta)."""
    cases = [
        ("single class plateau", [[0.5], [0.7], [0.90], [0.85], [0.84], [0.82]], 2, 0.01, 0.01),
        ("single class long window", [[0.5], [0.7], [0.90], [0.85], [0.84], [0.82]], 4, 0.01, 0.01),
        ("monotone rise never triggers", [[0.04 * t + 0.01 * k for k in range(4)] for t in range(1, 21)], 3, 0.01, 0.01),
        ("constant scores", [[0.6, 0.6, 0.6]] * 15, 2, 0.01, 0.01),
        ("ties go to lowest class", [[0.8, 0.8, 0.2]] * 3 + [[0.7, 0.7, 0.2]] * 6, 2, 0.01, 0.01),
        ("extreme scores", [[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]] * 4, 1, 0.01, 0.01),
        ("freeze every class", [[0.9, 0.8], [0.5, 0.4], [0.5, 0.4], [0.1, 0.1], [0.1, 0.1], [0.0, 0.0]], 1, 0.01, 0.01),
        ("drop just inside tolerance", [[0.5], [0.6], [0.595], [0.592], [0.591]], 1, 0.01, 0.01),
        ("drop just beyond tolerance", [[0.5], [0.6], [0.589], [0.58], [0.57]], 1, 0.01, 0.01),
        ("rise then drop, 13 classes", _rise_then_drop(30, 13, 12, 0.05), 5, 0.01, 0.01),
        ("rise then drop, wide eps", _rise_then_drop(30, 13, 12, 0.05), 5, 0.1, 0.01),
        ("large stabiliser", _rise_then_drop(25, 5, 8, 0.2), 2, 0.01, 0.5),
    ]
    for i, (n, d, e) in enumerate([(13, 5, 0.01), (13, 2, 0.005), (3, 1, 0.02), (8, 10, 0.01),
                                   (13, 5, 0.05), (2, 3, 0.001), (13, 1, 0.0001), (5, 4, 0.03)]):
        cases.append((f"random walk {i}", _walk(100 + i, 50, n), d, e, 0.01 * (i + 1)))
    assert len(cases) == 20
    return cases
