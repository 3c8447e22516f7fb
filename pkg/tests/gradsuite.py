"""Finite-difference gradient checks for every loss, shared with acceptance.

Each checker builds one seeded random instance, runs float32 autodiff, and
compares against central finite differences (h = 1e-3) over the float64
reference evaluators in ``oracles``.  It returns the worst relative error
seen; callers assert against the 1e-4 budget.
"""

from __future__ import annotations

import numpy as np

import oracles
from stylespace import losses
from stylespace import tensor as T
from stylespace.nets import LatentCode, PerceptualNet

REL_TOL = 1e-4
_H = 1e-3


def _compare(got: np.ndarray, fd: dict, label: str) -> float:
    # max-norm relative error of the sampled gradient against finite differences
    have = np.array([float(got[idx]) for idx in fd])
    want = np.array(list(fd.values()))
    scale = max(np.abs(want).max(initial=0.0), np.abs(have).max(initial=0.0), 1e-6)
    rel = float(np.abs(have - want).max(initial=0.0)) / scale
    assert rel <= REL_TOL, f"{label}: max |autodiff - fd| = {rel:.2e} relative (scale {scale:.2e})"
    return rel


def check_kl(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, 6)), int(rng.integers(1, 7))
    mu = rng.standard_normal((n, d)).astype(np.float32)
    lv = (rng.standard_normal((n, d)) * 0.7).astype(np.float32)

    mu_t, lv_t = T.parameter(mu), T.parameter(lv)
    losses.kl_loss(LatentCode(mu_t, lv_t)).backward()

    worst = _compare(mu_t.grad, oracles.fd_gradient(lambda v: oracles.kl_ref(v, lv), mu, _H), "kl/mu")
    worst = max(worst, _compare(lv_t.grad, oracles.fd_gradient(lambda v: oracles.kl_ref(mu, v), lv, _H), "kl/logvar"))
    return worst


def check_recon(seed: int) -> float:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    a = rng.random((n, 2, 3, 3)).astype(np.float32)
    b = rng.random((n, 2, 3, 3)).astype(np.float32)

    a_t, b_t = T.parameter(a), T.parameter(b)
    losses.recon_loss(a_t, b_t).backward()

    worst = _compare(a_t.grad, oracles.fd_gradient(lambda v: oracles.recon_ref(v, b), a, _H), "recon/input")
    worst = max(worst, _compare(b_t.grad, oracles.fd_gradient(lambda v: oracles.recon_ref(a, v), b, _H), "recon/recon"))
    return worst


def _triplet_instance(rng: np.random.Generator):
    n, d = int(rng.integers(1, 17)), int(rng.integers(1, 9))
    a = rng.standard_normal((n, d)).astype(np.float32)
    p = rng.standard_normal((n, d)).astype(np.float32)
    q = rng.standard_normal((n, d)).astype(np.float32)
    margin = float(rng.uniform(0.1, 0.6))
    # keep hinge arguments away from the kink so central differences are valid
    for _ in range(50):
        args = (
            np.sum((a - p) ** 2, axis=1) - np.sum((a - q) ** 2, axis=1) + margin
        )
        if np.all(np.abs(args) > 10 * _H):
            break
        margin += 0.031
    return a, p, q, margin


def check_triplet(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a, p, q, margin = _triplet_instance(rng)
    weight = float(rng.uniform(0.5, 2.0))

    at, pt, qt = T.parameter(a), T.parameter(p), T.parameter(q)
    loss, _ = losses.triplet_loss(losses.TripletBatch(at, pt, qt), margin, weight)
    loss.backward()

    worst = 0.0
    for name, leaf, arr, f in (
        ("anchor", at, a, lambda v: oracles.triplet_ref(v, p, q, margin, weight)[0]),
        ("positive", pt, p, lambda v: oracles.triplet_ref(a, v, q, margin, weight)[0]),
        ("negative", qt, q, lambda v: oracles.triplet_ref(a, p, v, margin, weight)[0]),
    ):
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        worst = max(worst, _compare(grad, oracles.fd_gradient(f, arr, _H), f"triplet/{name}"))
    return worst


_PNET = PerceptualNet()
_PNET_W = {k: v.data for k, v in _PNET.parameters().items()}


def check_percep(seed: int, n_coords: int = 3) -> float:
    rng = np.random.default_rng(seed)
    x = rng.random((1, 3, 64, 64)).astype(np.float32)
    r = np.clip(x + rng.standard_normal(x.shape).astype(np.float32) * 0.1, 0.0, 1.0)

    r_t = T.parameter(r)
    losses.perceptual_loss(_PNET, x, r_t).backward()

    taps_in = oracles.percep_taps_ref(_PNET_W, x)

    def eval_with_masks(v):
        blocks = oracles.percep_blocks_ref(_PNET_W, v)
        loss = sum(
            float(np.mean((blocks[i - 1] - taps_in[k]) ** 2))
            for k, i in enumerate(_PNET.tap_layers)
        )
        return loss, [b > 0 for b in blocks]

    # Central differences are only a valid derivative oracle where the net is
    # C1 over the +/-h interval, i.e. where no relu flips; resample otherwise.
    fd: dict[tuple, float] = {}
    attempts = 0
    while len(fd) < n_coords and attempts < 50 * n_coords:
        attempts += 1
        idx = tuple(int(rng.integers(0, s)) for s in r.shape)
        rp, rm = r.astype(np.float64), r.astype(np.float64)
        rp[idx] += _H
        rm[idx] -= _H
        lp, masks_p = eval_with_masks(rp)
        lm, masks_m = eval_with_masks(rm)
        if all(np.array_equal(mp, mm) for mp, mm in zip(masks_p, masks_m)):
            fd[idx] = (lp - lm) / (2.0 * _H)
    assert fd, "no kink-free coordinates found"
    return _compare(r_t.grad, fd, "percep/recon")


def check_total(seed: int) -> float:
    rng = np.random.default_rng(seed)
    weights = losses.LossWeights(
        lambda_kl=float(rng.uniform(0.1, 2.0)),
        lambda_recon=float(rng.uniform(0.1, 2.0)),
        lambda_triplet=float(rng.uniform(0.1, 2.0)),
        lambda_percep=float(rng.uniform(0.1, 2.0)),
    )
    a, p, q, margin = _triplet_instance(rng)
    n, d = a.shape
    lv = (rng.standard_normal((n, d)) * 0.5).astype(np.float32)
    img = rng.random((n, 2, 2, 2)).astype(np.float32)
    rec = rng.random((n, 2, 2, 2)).astype(np.float32)
    percep_const = float(rng.uniform(0.0, 1.0))

    at, pt, qt = T.parameter(a), T.parameter(p), T.parameter(q)
    lv_t, rec_t = T.parameter(lv), T.parameter(rec)
    tri, _ = losses.triplet_loss(losses.TripletBatch(at, pt, qt), margin, 1.0)
    total = losses.total_loss(
        weights,
        {
            "kl": losses.kl_loss(LatentCode(at, lv_t)),
            "recon": losses.recon_loss(img, rec_t),
            "triplet": tri,
            "percep": percep_const,
        },
    )
    total.backward()

    def ref(a_v=None, lv_v=None, rec_v=None):
        av = a if a_v is None else a_v
        lvv = lv if lv_v is None else lv_v
        recv = rec if rec_v is None else rec_v
        return (
            weights.lambda_kl * oracles.kl_ref(av, lvv)
            + weights.lambda_recon * oracles.recon_ref(img, recv)
            + weights.lambda_triplet * oracles.triplet_ref(av, p, q, margin, 1.0)[0]
            + weights.lambda_percep * percep_const
        )

    worst = _compare(at.grad, oracles.fd_gradient(lambda v: ref(a_v=v), a, _H), "total/anchor")
    worst = max(worst, _compare(lv_t.grad, oracles.fd_gradient(lambda v: ref(lv_v=v), lv, _H), "total/logvar"))
    worst = max(worst, _compare(rec_t.grad, oracles.fd_gradient(lambda v: ref(rec_v=v), rec, _H), "total/recon"))
    return worst


CHECKERS = {
    "kl_loss": check_kl,
    "recon_loss": check_recon,
    "triplet_loss": check_triplet,
    "perceptual_loss": check_percep,
    "total_loss": check_total,
}


def run_suite(n_seeds: int = 100) -> dict[str, float]:
    """Run every checker on ``n_seeds`` seeded instances; returns worst errors."""
    out = {}
    for name, fn in CHECKERS.items():
        worst = 0.0
        for seed in range(n_seeds):
            worst = max(worst, fn(seed))
        out[name] = worst
    return out
