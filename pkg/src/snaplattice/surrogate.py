"""Gaussian-process surrogate with expected-improvement acquisition.

Minimal, deterministic GP for low-dimensional box-constrained minimization:
squared-exponential ARD kernel, hyperparameters by marginal-likelihood
maximization (multistart L-BFGS), EI maximized over quasi-random candidates
with a local polish.  All randomness flows from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize as _scipy_minimize
from scipy.stats import qmc

_JITTER = 1e-10


def _sq_dists(A, B, ell):
    a = A / ell
    b = B / ell
    return (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )


@dataclass
class GaussianProcess:
    """Zero-mean GP on standardized targets over the unit box."""

    X: np.ndarray
    y: np.ndarray
    ell: np.ndarray
    sf2: float
    noise: float
    _chol: tuple | None = None
    _alpha: np.ndarray | None = None

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, seed: int = 0) -> "GaussianProcess":
        """Maximize the log marginal likelihood over (ell, sf2, noise)."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        d = X.shape[1]

        def nll(log_theta):
            ell = np.exp(log_theta[:d])
            sf2 = math.exp(2.0 * log_theta[d])
            noise = math.exp(2.0 * log_theta[d + 1]) + _JITTER
            K = sf2 * np.exp(-0.5 * np.clip(_sq_dists(X, X, ell), 0.0, None))
            K[np.diag_indices_from(K)] += noise
            try:
                c = cho_factor(K, lower=True)
            except np.linalg.LinAlgError:
                return 1e12
            alpha = cho_solve(c, y)
            return float(
                0.5 * y @ alpha + np.sum(np.log(np.diag(c[0]))) + 0.5 * len(y) * math.log(2 * math.pi)
            )

        starts = [
            np.concatenate([np.full(d, math.log(s)), [0.0, math.log(1e-3)]])
            for s in (0.3, 1.0)
        ]
        rng = np.random.default_rng(seed)
        starts.append(np.concatenate([rng.uniform(-1.5, 0.5, d), [0.0, math.log(1e-2)]]))
        best = None
        for s0 in starts:
            res = _scipy_minimize(nll, s0, method="L-BFGS-B",
                                  bounds=[(-4.0, 3.0)] * d + [(-4.0, 4.0), (-12.0, 1.0)],
                                  options={"maxiter": 120})
            if best is None or res.fun < best.fun:
                best = res
        th = best.x
        gp = cls(X=X, y=y, ell=np.exp(th[:d]), sf2=math.exp(2 * th[d]),
                 noise=math.exp(2 * th[d + 1]) + _JITTER)
        gp._factorize()
        return gp

    def _factorize(self):
        K = self.sf2 * np.exp(-0.5 * np.clip(_sq_dists(self.X, self.X, self.ell), 0.0, None))
        K[np.diag_indices_from(K)] += self.noise
        self._chol = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._chol, self.y)

    def predict(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at query points."""
        Ks = self.sf2 * np.exp(-0.5 * np.clip(_sq_dists(np.asarray(Xs, dtype=float), self.X, self.ell), 0.0, None))
        mu = Ks @ self._alpha
        v = cho_solve(self._chol, Ks.T)
        var = np.maximum(self.sf2 - np.sum(Ks * v.T, axis=1), 1e-16)
        return mu, np.sqrt(var)


def expected_improvement(gp: GaussianProcess, Xs: np.ndarray, best_y: float, xi: float = 1e-4) -> np.ndarray:
    """EI for minimization of the standardized target."""
    mu, sd = gp.predict(Xs)
    z = (best_y - xi - mu) / sd
    # standard normal pdf/cdf
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    return (best_y - xi - mu) * cdf + sd * pdf


def propose(gp: GaussianProcess, best_y: float, rng: np.random.Generator,
            n_candidates: int = 1024, n_polish: int = 2) -> np.ndarray:
    """Maximize EI over the unit box: quasi-random candidates plus local polish."""
    d = gp.X.shape[1]
    sob = qmc.Sobol(d, scramble=True, seed=int(rng.integers(2**31)))
    cand = sob.random(n_candidates)
    ei = expected_improvement(gp, cand, best_y)
    order = np.argsort(ei)[::-1]
    best_x, best_ei = cand[order[0]], ei[order[0]]
    for idx in order[:n_polish]:
        res = _scipy_minimize(
            lambda x: -float(expected_improvement(gp, x.reshape(1, -1), best_y)[0]),
            cand[idx], method="Nelder-Mead",
            options={"maxiter": 40 * d, "xatol": 1e-4, "fatol": 1e-12})
        x = np.clip(res.x, 0.0, 1.0)
        v = float(expected_improvement(gp, x.reshape(1, -1), best_y)[0])
        if v > best_ei:
            best_x, best_ei = x, v
    return best_x
