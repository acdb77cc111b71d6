"""Shared test helpers: finite-difference gradient checks and small fixtures."""
import numpy as np

from termnet import autodiff as ad

FD_H = 1e-5


def finite_diff_check(build_loss, params, rng, n_probe=6, h=FD_H, tol=1e-4):
    """Compare analytic grads of a scalar loss against central differences.

    build_loss() must re-run the forward pass from the current parameter
    values. Probes n_probe random entries per parameter. Returns the worst
    relative error seen.
    """
    loss = build_loss()
    for p in params:
        p.zero_grad()

    def clear(t, seen):
        if id(t) in seen:
            return
        seen.add(id(t))
        t.grad = None
        for par in t._parents:
            clear(par, seen)

    clear(loss, set())
    loss.backward()
    grads = [None if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.ravel()
        k = min(n_probe, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(build_loss().data)
            flat[i] = orig - h
            lm = float(build_loss().data)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            an = 0.0 if g is None else float(g.ravel()[i])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, rel)
    assert worst <= tol, f"gradient mismatch: worst relative error {worst:.3e}"
    return worst


def rank_then_pearson(x, y):
    """Brute-force Spearman oracle: average ranks, then Pearson correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def ranks(v):
        n = v.size
        r = np.zeros(n)
        for i in range(n):
            less = np.sum(v < v[i])
            equal = np.sum(v == v[i])
            r[i] = less + (equal + 1) / 2.0
        return r

    rx, ry = ranks(x), ranks(y)
    rxc = rx - rx.mean()
    ryc = ry - ry.mean()
    denom = np.sqrt(np.sum(rxc ** 2) * np.sum(ryc ** 2))
    if denom == 0.0:
        return None
    return float(np.sum(rxc * ryc) / denom)
