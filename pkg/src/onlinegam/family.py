"""Quasilikelihood families with canonical links.

Each family supplies the link, its inverse, the variance function and the
first three derivatives of ``beta -> Q(g^{-1}(beta), y)``, which is all the
online estimator consumes.
"""
from __future__ import annotations

import numpy as np


class FamilyError(ValueError):
    """Invalid input for a family (non-finite values, bad responses)."""


class UnsupportedFamilyError(FamilyError):
    pass


class Family:
    """Base class. Subclasses implement the canonical-link pieces."""

    name: str = ""
    #: True when the dispersion is not fixed by the mean (needs estimating).
    free_dispersion: bool = False

    def link(self, mu):
        raise NotImplementedError

    def inverse_link(self, eta):
        raise NotImplementedError

    def dlink(self, mu):
        """Derivative g'(mu) of the link."""
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def quasi_loglik(self, eta, y):
        """Q(g^{-1}(eta), y) up to an additive constant in y."""
        raise NotImplementedError

    def derivatives(self, eta, y):
        """Return (q1, q2, q3) evaluated elementwise (no validation)."""
        raise NotImplementedError

    def validate_response(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise FamilyError(f"{self.name}: non-finite response")
        return y

    def mean_domain(self) -> tuple[float, float]:
        raise NotImplementedError

    def __repr__(self):
        return f"<Family {self.name}>"


class GaussianIdentity(Family):
    name = "gaussian-identity"
    free_dispersion = True

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse_link(self, eta):
        return np.asarray(eta, dtype=float)

    def dlink(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def quasi_loglik(self, eta, y):
        return -0.5 * (np.asarray(y) - np.asarray(eta)) ** 2

    def derivatives(self, eta, y):
        eta = np.asarray(eta, dtype=float)
        q1 = y - eta
        q2 = np.full(np.broadcast(eta, y).shape, -1.0)
        q3 = np.zeros_like(q2)
        return q1, q2, q3

    def mean_domain(self):
        return (-np.inf, np.inf)


class PoissonLog(Family):
    name = "poisson-log"

    def link(self, mu):
        return np.log(mu)

    def inverse_link(self, eta):
        return np.exp(eta)

    def dlink(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def variance(self, mu):
        return np.asarray(mu, dtype=float)

    def quasi_loglik(self, eta, y):
        return y * eta - np.exp(eta)

    def derivatives(self, eta, y):
        mu = np.exp(eta)
        return y - mu, -mu, -mu

    def validate_response(self, y):
        y = super().validate_response(y)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise FamilyError("poisson-log: responses must be non-negative integers")
        return y

    def mean_domain(self):
        return (0.0, np.inf)


class BernoulliLogit(Family):
    name = "bernoulli-logit"

    def link(self, mu):
        mu = np.asarray(mu, dtype=float)
        return np.log(mu) - np.log1p(-mu)

    def inverse_link(self, eta):
        eta = np.asarray(eta, dtype=float)
        # stable logistic
        out = np.empty_like(eta)
        pos = eta >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
        ez = np.exp(eta[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out

    def dlink(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 1.0 / (mu * (1.0 - mu))

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    def quasi_loglik(self, eta, y):
        eta = np.asarray(eta, dtype=float)
        return y * eta - np.logaddexp(0.0, eta)

    def derivatives(self, eta, y):
        mu = self.inverse_link(np.asarray(eta, dtype=float))
        v = mu * (1.0 - mu)
        return y - mu, -v, -v * (1.0 - 2.0 * mu)

    def validate_response(self, y):
        y = super().validate_response(y)
        if not np.all((y == 0) | (y == 1)):
            raise FamilyError("bernoulli-logit: responses must be 0 or 1")
        return y

    def mean_domain(self):
        return (0.0, 1.0)


FAMILIES = {
    f.name: f for f in (GaussianIdentity(), PoissonLog(), BernoulliLogit())
}


def get_family(name: str | Family) -> Family:
    if isinstance(name, Family):
        return name
    try:
        return FAMILIES[name]
    except KeyError:
        raise UnsupportedFamilyError(
            f"unknown family {name!r}; choose from {sorted(FAMILIES)}"
        ) from None


def quasi_derivatives(family, eta, y):
    """First three derivatives of ``beta -> Q(g^{-1}(beta), y)`` at ``eta``.

    Scalar or array inputs; values are validated, unlike
    :meth:`Family.derivatives` which is the unchecked hot path.
    """
    family = get_family(family)
    eta_arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta_arr)):
        raise FamilyError("non-finite linear predictor")
    y_arr = family.validate_response(np.atleast_1d(y))
    y_arr = y_arr.reshape(np.shape(y))
    q1, q2, q3 = family.derivatives(eta_arr, y_arr)
    if np.ndim(q1) == 0:
        return float(q1), float(q2), float(q3)
    return q1, q2, q3
