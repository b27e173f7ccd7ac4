"""Numerical checks of the product-alignment theory.

* the Marchenko-Pastur law for the spectrum of ``B^T B``,
* the asymptotic path-alignment angle ``arccos(1 / sqrt(1 + lambda))``,
* exact error equivalence with BP once ``R B = W^T`` for semi-orthogonal B,
* a synthetic estimate of forward/backward weight correlation in cortex.
"""

import copy
import math
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy import integrate, stats

from .errors import ContractError
from .feedback import (
    BP,
    FeedbackAlgorithm,
    ProductFeedback,
    backward,
    compute_updates,
    init_feedback,
    intermediate_width,
    semi_orthogonal,
)
from .metrics import alignment_angle, weight_correlation
from .netcore import forward, glorot_uniform, loss_and_output_error
from .optim import SgdState, step
from .rng import make_rng


def mp_edges(lam):
    root = math.sqrt(lam)
    return (1.0 - root) ** 2, (1.0 + root) ** 2


def _check_lambda(lam):
    if not 0.0 < lam <= 1.0:
        raise ContractError(f"lambda must lie in (0, 1], got {lam}")


def mp_density(v, lam):
    """Marchenko-Pastur density of ``B^T B`` eigenvalues for aspect ratio ``lam``."""
    _check_lambda(lam)
    lo, hi = mp_edges(lam)
    v = np.asarray(v, dtype=np.float64)
    inside = (v > lo) & (v < hi) & (v > 0)
    safe = np.where(inside, v, 1.0)
    dens = np.sqrt(np.clip((hi - safe) * (safe - lo), 0.0, None)) / (2.0 * math.pi * lam * safe)
    out = np.where(inside, dens, 0.0)
    return float(out) if out.ndim == 0 else out


def _cdf_scalar(v, lam, lo, hi):
    if v <= lo:
        return 0.0
    if v >= hi:
        return 1.0
    width = hi - lo

    # v = lo + width * sin^2(t) removes both square-root edges
    def integrand(t):
        s2 = math.sin(t) ** 2
        val = lo + width * s2
        return width**2 * 2.0 * s2 * math.cos(t) ** 2 / (2.0 * math.pi * lam * val)

    t_end = math.asin(math.sqrt((v - lo) / width))
    value, _ = integrate.quad(integrand, 0.0, t_end, epsabs=1e-13, epsrel=1e-12, limit=200)
    return value


def mp_cdf(v, lam):
    _check_lambda(lam)
    lo, hi = mp_edges(lam)
    v = np.asarray(v, dtype=np.float64)
    out = np.vectorize(lambda t: _cdf_scalar(float(t), lam, lo, hi), otypes=[float])(v)
    return float(out) if out.ndim == 0 else out


@dataclass
class SpectrumReport:
    lam: float
    n_next: int
    n_bar: int
    eigenvalues: np.ndarray
    lower: float
    upper: float
    hist_edges: np.ndarray
    hist_density: np.ndarray
    theory_density: np.ndarray
    ks_distance: float

    @property
    def effective_lam(self):
        return self.n_next / self.n_bar


def draw_feedback_matrix(n_next, lam, rng, orthogonal=False):
    """``B`` of shape (round(n_next / lam), n_next) as the product rules draw it."""
    n_bar = intermediate_width(n_next, 1.0 / lam)
    if orthogonal:
        return semi_orthogonal(n_bar, n_next, rng)
    eff = n_next / n_bar
    return glorot_uniform((n_bar, n_next), rng, gain=math.sqrt((1.0 + eff) / 2.0))


def empirical_spectrum(n_next, lam, seed, orthogonal=False, bins=40):
    """Eigenvalues of ``B^T B`` and their fit to the Marchenko-Pastur law.

    Theoretical quantities use the realised ratio ``n_next / n_bar``.
    """
    _check_lambda(lam)
    B = draw_feedback_matrix(n_next, lam, make_rng(seed, "spectrum", n_next, lam), orthogonal)
    eig = np.clip(np.linalg.eigvalsh(B.T @ B), 0.0, None)
    n_bar = B.shape[0]
    eff = n_next / n_bar
    lo, hi = mp_edges(eff)
    top = max(hi, float(eig.max())) * 1.02
    hist, edges = np.histogram(eig, bins=bins, range=(0.0, top), density=True)
    theory = np.diff(mp_cdf(edges, eff)) / np.diff(edges)
    ks = float(stats.kstest(eig, lambda t: mp_cdf(t, eff)).statistic)
    return SpectrumReport(
        lam=lam,
        n_next=n_next,
        n_bar=n_bar,
        eigenvalues=np.sort(eig),
        lower=lo,
        upper=hi,
        hist_edges=edges,
        hist_density=hist,
        theory_density=theory,
        ks_distance=ks,
    )


def predicted_angle(lam):
    return math.degrees(math.acos(1.0 / math.sqrt(1.0 + lam)))


@dataclass
class AngleSweep:
    lambdas: List[float]
    simulated: List[float]
    simulated_std: List[float]
    predicted: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.predicted:
            self.predicted = [predicted_angle(lam) for lam in self.lambdas]

    def rows(self):
        return [
            {"lambda": lam, "predicted_deg": p, "simulated_deg": s, "simulated_std": sd}
            for lam, p, s, sd in zip(
                self.lambdas, self.predicted, self.simulated, self.simulated_std
            )
        ]


def path_angle_after_decay(n_l, n_next, lam, rng):
    """Path angle once initial values have decayed: ``R^T = B W`` for Gaussian W."""
    W = rng.standard_normal((n_next, n_l))
    B = draw_feedback_matrix(n_next, lam, rng)
    path = W.T @ (B.T @ B)  # = R B with R = (B W)^T
    return alignment_angle(W.T, path)


def prop3_sweep(n_l, n_next, lambdas, trials, seed):
    """Simulated vs. predicted path alignment angle for each ``lambda``.

    Every (lambda, trial) pair owns the random stream
    ``(seed, "prop3", lambda, trial)``.
    """
    sims, stds = [], []
    for lam in lambdas:
        _check_lambda(lam)
        angles = [
            path_angle_after_decay(n_l, n_next, lam, make_rng(seed, "prop3", lam, t))
            for t in range(trials)
        ]
        sims.append(float(np.mean(angles)))
        stds.append(float(np.std(angles)))
    return AngleSweep(lambdas=list(lambdas), simulated=sims, simulated_std=stds)


def align_product_feedback(net, state):
    """Set ``R := (B W)^T`` on every product-rule layer, in place."""
    for layer, fb in zip(net.layers, state.layers):
        if not isinstance(fb, ProductFeedback):
            raise ContractError("alignment needs product-rule feedback on every layer")
        if layer.kind == "conv":
            fb.R[...] = np.einsum("ijhw,ki->jkhw", layer.W, fb.B[:, :, 0, 0])
        else:
            fb.R[...] = (fb.B @ layer.W).T
    return state


@dataclass
class Prop2Report:
    max_abs_diff: List[float]
    loss_before: float
    loss_after: float

    @property
    def decreased(self):
        return self.loss_after < self.loss_before


def prop2_check(net, state, x, targets, lr=1e-4):
    """Compare product-rule errors with BP errors and take one small step.

    ``state`` is used as given; call :func:`align_product_feedback` first to
    test the aligned case.  The step is plain SGD (no momentum or decay) on
    a copy of ``net``.
    """
    cache = forward(net, x)
    loss, e_out = loss_and_output_error(cache.logits, targets)
    e_pfa = backward(state, net, cache, e_out)
    bp_state = init_feedback(net, FeedbackAlgorithm(BP), 0)
    e_bp = backward(bp_state, net, cache, e_out)
    diffs = [
        float(np.max(np.abs(a - b))) for a, b in zip(e_pfa[1:], e_bp[1:]) if a is not None
    ]
    stepped = copy.deepcopy(net)
    updates = compute_updates(state, stepped, cache, e_pfa, lr)
    step(stepped.parameters(), updates, SgdState(lr=lr, momentum=0.0))
    after, _ = loss_and_output_error(forward(stepped, x).logits, targets)
    return Prop2Report(max_abs_diff=diffs, loss_before=loss, loss_after=after)


def brain_connectivity_sim(n_pairs, p_bidirectional=0.31, r_bidirectional=0.36, seed=0):
    """Overall forward/backward weight correlation under sparse reciprocity.

    Forward weights are standard normal.  A fraction ``p_bidirectional`` of
    pairs gets a feedback weight correlated at ``r_bidirectional``; the rest
    get none (weight 0).  Returns ``(pearson_r, alignment_angle_deg)``; with
    no feedback synapses at all the result is ``(0.0, 90.0)``.
    """
    if not (0.0 <= p_bidirectional <= 1.0 and -1.0 <= r_bidirectional <= 1.0):
        raise ContractError("probability must lie in [0, 1] and correlation in [-1, 1]")
    rng = make_rng(seed, "brain")
    fwd = rng.standard_normal(n_pairs)
    noise = rng.standard_normal(n_pairs)
    linked = rng.random(n_pairs) < p_bidirectional
    fb = np.where(
        linked, r_bidirectional * fwd + math.sqrt(1.0 - r_bidirectional**2) * noise, 0.0
    )
    if not np.any(fb):
        return 0.0, 90.0
    return weight_correlation(fwd, fb), alignment_angle(fwd, fb)

