"""Laws of the cascade generators and their size-biased companions.

All sampling is inverse-CDF from address-keyed uniforms (:mod:`cascata.rng`),
and everything is carried in log space: a zero weight is ``-inf``.

Batched samplers work on arrays shaped ``(R, ...)`` where ``R`` indexes
replicates, each replicate having its own seed.  The state array threaded
through the samplers is only meaningful for Markov laws (state index of a
vertex); the other laws pass ``None`` around.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special
from scipy.sparse.csgraph import connected_components

from . import rng
from .tree import TreeAddress, check_branching

MEAN_TOL = 1e-12

W_STREAM = "W"
VECTOR_STREAM = "V"
DIGIT_STREAM = "digit"
THETA_STREAM = "theta"


def _log(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(x)


def _check_mean_one(mean: float, what: str) -> None:
    if not abs(mean - 1.0) <= MEAN_TOL:
        raise ValueError(f"{what} must have mean one, got {mean!r}")


def _pick(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Index of the atom selected by ``u`` given cumulative probabilities."""
    idx = np.searchsorted(cum, u, side="right")
    return np.minimum(idx, len(cum) - 1)


# ---------------------------------------------------------------------------
# scalar laws


class ScalarLaw:
    """A law on ``[0, inf)`` sampled through its log-quantile function."""

    kind: str = "scalar"

    def mean(self) -> float:
        raise NotImplementedError

    def log_quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def size_biased(self) -> "ScalarLaw":
        raise NotImplementedError

    def entropy(self, b: int) -> float:
        """``E[W log_b W]`` (with ``0 log 0 = 0``)."""
        raise NotImplementedError

    def moment(self, h: float) -> float:
        """``E[W**h]``; may be ``inf``."""
        raise NotImplementedError

    @property
    def has_zero_atom(self) -> bool:
        return False

    @property
    def strictly_positive(self) -> bool:
        return not self.has_zero_atom

    def spec(self) -> dict:
        raise NotImplementedError

    def sample(self, u) -> np.ndarray:
        return np.exp(self.log_quantile(np.asarray(u, dtype=float)))


@dataclass(frozen=True)
class Discrete(ScalarLaw):
    values: tuple[float, ...]
    probs: tuple[float, ...]
    kind: str = "discrete"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1 or len(values) == 0:
            raise ValueError("values and probs must be equal-length nonempty sequences")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("values must be finite and nonnegative")
        if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"probs must be a probability vector, got {probs.tolist()}")
        keep = probs > 0
        order = np.argsort(values[keep], kind="stable")
        object.__setattr__(self, "values", tuple(values[keep][order].tolist()))
        object.__setattr__(self, "probs", tuple(probs[keep][order].tolist()))

    @property
    def _v(self) -> np.ndarray:
        return np.asarray(self.values)

    @property
    def _p(self) -> np.ndarray:
        return np.asarray(self.probs)

    @property
    def _cum(self) -> np.ndarray:
        cum = np.cumsum(self._p)
        cum[-1] = 1.0
        return cum

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def log_quantile(self, u):
        return _log(self._v)[_pick(self._cum, np.asarray(u))]

    def size_biased(self) -> "Discrete":
        m = self.mean()
        if m <= 0:
            raise ValueError("size-biased law undefined: E[W] = 0")
        return Discrete(self.values, tuple(v * p / m for v, p in zip(self.values, self.probs)))

    def entropy(self, b: int) -> float:
        return math.fsum(p * v * math.log(v, b) for v, p in zip(self.values, self.probs) if v > 0)

    def moment(self, h: float) -> float:
        return math.fsum(p * v**h for v, p in zip(self.values, self.probs) if v > 0)

    @property
    def has_zero_atom(self) -> bool:
        return self.values[0] == 0.0

    def spec(self) -> dict:
        if self.kind == "discrete":
            return {"kind": "discrete", "values": list(self.values), "probs": list(self.probs)}
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True)
class LogNormal(ScalarLaw):
    """``W = exp(mu + sigma Z)``; the generator default ``mu = -sigma2/2`` is mean one."""

    sigma2: float
    mu: float | None = None
    kind: str = "lognormal"

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if self.mu is None:
            object.__setattr__(self, "mu", -self.sigma2 / 2)

    def mean(self) -> float:
        return math.exp(self.mu + self.sigma2 / 2)

    def log_quantile(self, u):
        return self.mu + math.sqrt(self.sigma2) * special.ndtri(np.asarray(u))

    def size_biased(self) -> "LogNormal":
        return LogNormal(self.sigma2, self.mu + self.sigma2)

    def entropy(self, b: int) -> float:
        # E[W log W] = E[W] * E_sb[log W] and the size-biased log-mean is mu + sigma2
        return self.mean() * (self.mu + self.sigma2) / math.log(b)

    def moment(self, h: float) -> float:
        return math.exp(h * self.mu + h * h * self.sigma2 / 2)

    def spec(self) -> dict:
        out = {"kind": "lognormal", "sigma2": self.sigma2}
        if self.mu != -self.sigma2 / 2:
            out["mu"] = self.mu
        return out


def constant() -> Discrete:
    return Discrete((1.0,), (1.0,), kind="constant")


def _generator(law: ScalarLaw) -> ScalarLaw:
    _check_mean_one(law.mean(), f"{law.kind} generator law")
    return law


def two_point(w0: float, w1: float, p1: float) -> Discrete:
    return _generator(Discrete((w0, w1), (1 - p1, p1), kind="two_point", params={"w0": w0, "w1": w1, "p1": p1}))


def beta_model(beta: float, b: int) -> Discrete:
    """``b**beta`` with probability ``b**-beta``, else 0."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    p = float(b) ** -beta
    if p == 1.0:
        return Discrete((1.0,), (1.0,), kind="beta_model", params={"beta": beta})
    return Discrete((0.0, float(b) ** beta), (1 - p, p), kind="beta_model", params={"beta": beta})


def lognormal(sigma2: float) -> LogNormal:
    return LogNormal(sigma2)


def discrete(values: Sequence[float], probs: Sequence[float]) -> Discrete:
    return _generator(Discrete(tuple(values), tuple(probs)))


def size_biased_law(law: ScalarLaw) -> ScalarLaw:
    return law.size_biased()


# ---------------------------------------------------------------------------
# dependent and vector laws


@dataclass(frozen=True)
class VectorLaw:
    """Joint law of the sibling vector ``(W_0, ..., W_{b-1})``.

    Either a list of atoms (``atoms``, ``probs``) or a product of per-coordinate
    scalar laws (``components``).
    """

    atoms: tuple[tuple[float, ...], ...] | None = None
    probs: tuple[float, ...] | None = None
    components: tuple[ScalarLaw, ...] | None = None
    kind: str = "vector"

    def __post_init__(self):
        if (self.atoms is None) == (self.components is None):
            raise ValueError("give exactly one of atoms or components")
        if self.atoms is not None:
            a = np.asarray(self.atoms, dtype=float)
            p = np.asarray(self.probs, dtype=float)
            if a.ndim != 2 or len(a) != len(p):
                raise ValueError("atoms must be a 2-d table with one row per prob")
            if np.any(a < 0) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-12):
                raise ValueError("atoms must be nonnegative and probs a probability vector")
            object.__setattr__(self, "atoms", tuple(tuple(r) for r in a.tolist()))
            object.__setattr__(self, "probs", tuple(p.tolist()))
        else:
            object.__setattr__(self, "components", tuple(self.components))

    @property
    def width(self) -> int:
        return len(self.atoms[0]) if self.atoms is not None else len(self.components)

    def coordinate_means(self) -> np.ndarray:
        if self.atoms is not None:
            return np.asarray(self.probs) @ np.asarray(self.atoms)
        return np.array([c.mean() for c in self.components])

    def mean(self) -> float:
        return float(self.coordinate_means().mean())

    def entropy(self, b: int) -> float:
        if self.atoms is not None:
            a = np.asarray(self.atoms)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(a > 0, a * np.log(a) / math.log(b), 0.0)
            return float(np.asarray(self.probs) @ t.mean(axis=1))
        return float(np.mean([c.entropy(b) for c in self.components]))

    def spec(self) -> dict:
        if self.atoms is not None:
            return {"kind": "vector", "atoms": [list(r) for r in self.atoms], "probs": list(self.probs)}
        return {"kind": "vector", "components": [c.spec() for c in self.components]}


@dataclass(frozen=True)
class MarkovKernelLaw:
    """Finite-state Markov generators: children drawn independently given the parent state.

    ``states`` are the weight values (distinct), ``p0`` the law of the root
    state and ``Q`` the row-stochastic transition matrix.
    """

    states: tuple[float, ...]
    p0: tuple[float, ...]
    Q: tuple[tuple[float, ...], ...]
    kind: str = "markov"

    def __post_init__(self):
        w = np.asarray(self.states, dtype=float)
        p0 = np.asarray(self.p0, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        k = len(w)
        if Q.shape != (k, k) or p0.shape != (k,):
            raise ValueError("Q must be k x k and p0 length k for k states")
        if np.any(w < 0) or len(set(w.tolist())) != k:
            raise ValueError("states must be distinct nonnegative values")
        if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1) > MEAN_TOL):
            raise ValueError("rows of Q must be probability vectors")
        if np.any(p0 < 0) or abs(p0.sum() - 1) > MEAN_TOL:
            raise ValueError("p0 must be a probability vector")
        for i, m in enumerate(Q @ w):
            _check_mean_one(float(m), f"transition row {i}")
        _check_mean_one(float(p0 @ w), "initial distribution p0")
        object.__setattr__(self, "states", tuple(w.tolist()))
        object.__setattr__(self, "p0", tuple(p0.tolist()))
        object.__setattr__(self, "Q", tuple(tuple(r) for r in Q.tolist()))

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.states)

    @property
    def Qm(self) -> np.ndarray:
        return np.asarray(self.Q)

    def size_biased_matrix(self) -> np.ndarray:
        """Spine transitions ``Q_ij w_j``; rows sum to one by the mean-one rows."""
        return self.Qm * self.w[None, :]

    def size_biased_p0(self) -> np.ndarray:
        return np.asarray(self.p0) * self.w

    def state_of(self, logw: np.ndarray) -> np.ndarray:
        """Recover state indices from log weights (states are distinct values)."""
        logs = _log(self.w)
        order = np.argsort(logs)
        pos = np.searchsorted(logs[order], logw)
        return order[np.minimum(pos, len(order) - 1)]

    def closed_classes(self) -> list[list[int]]:
        """Closed communicating classes of the size-biased chain."""
        adj = self.size_biased_matrix() > 0
        n, labels = connected_components(adj, directed=True, connection="strong")
        out = []
        for c in range(n):
            members = np.flatnonzero(labels == c)
            leaves = adj[members][:, labels != c].any()
            if not leaves:
                out.append(members.tolist())
        return out

    def spine_limit(self, start: np.ndarray | None = None, tol: float = 1e-12, max_iter: int = 1_000_000):
        """Limiting law of the size-biased chain by power iteration on its lazy version."""
        P = 0.5 * (np.eye(len(self.states)) + self.size_biased_matrix())
        pi = np.asarray(self.p0, dtype=float) if start is None else np.asarray(start, dtype=float)
        for _ in range(max_iter):
            nxt = pi @ P
            if np.abs(nxt - pi).max() < tol:
                return nxt
            pi = nxt
        raise RuntimeError("power iteration did not converge")

    def row_entropies(self, b: int) -> np.ndarray:
        """``E[W log_b W | parent state i]`` for each state."""
        w = self.w
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(w > 0, w * np.log(w) / math.log(b), 0.0)
        return self.Qm @ wl

    def entropy(self, b: int) -> float:
        start = np.asarray(self.p0) @ self.size_biased_matrix()
        pi = self.spine_limit(start)
        return float(pi @ self.row_entropies(b))

    def class_entropies(self, b: int) -> list[float]:
        out = []
        for members in self.closed_classes():
            start = np.zeros(len(self.states))
            start[members] = 1.0 / len(members)
            out.append(float(self.spine_limit(start) @ self.row_entropies(b)))
        return out

    def mean(self) -> float:
        return float(np.asarray(self.p0) @ self.w)

    def spec(self) -> dict:
        return {"kind": "markov", "states": list(self.states), "p0": list(self.p0), "Q": [list(r) for r in self.Q]}


@dataclass(frozen=True)
class ExchangeableMixtureLaw:
    """Draw a component once per realization, then i.i.d. generators from it."""

    components: tuple[ScalarLaw, ...]
    prior: tuple[float, ...]
    kind: str = "mixture"

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        if len(prior) != len(self.components) or len(prior) == 0:
            raise ValueError("prior must have one entry per component")
        if np.any(prior < 0) or abs(prior.sum() - 1) > MEAN_TOL:
            raise ValueError("prior must be a probability vector")
        for i, c in enumerate(self.components):
            _check_mean_one(c.mean(), f"mixture component {i}")
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "prior", tuple(prior.tolist()))

    def mean(self) -> float:
        return math.fsum(p * c.mean() for p, c in zip(self.prior, self.components))

    def entropy(self, b: int) -> float:
        return math.fsum(p * c.entropy(b) for p, c in zip(self.prior, self.components))

    def spec(self) -> dict:
        return {"kind": "mixture", "components": [c.spec() for c in self.components], "prior": list(self.prior)}


Law = ScalarLaw | VectorLaw | MarkovKernelLaw | ExchangeableMixtureLaw


# ---------------------------------------------------------------------------
# the generator model


@dataclass(frozen=True)
class GeneratorModel:
    """A generator law bound to a branching number.

    ``include_root=False`` is the convention ``W_root = 1`` for masses.  For
    Markov laws the root *state* is still drawn from ``p0`` because it
    conditions the first generation.
    """

    law: Law
    b: int
    include_root: bool = False

    def __post_init__(self):
        check_branching(self.b)
        if isinstance(self.law, VectorLaw):
            if self.law.width != self.b:
                raise ValueError(f"vector law has width {self.law.width}, expected b={self.b}")
        _check_mean_one(self.law.mean(), f"{self.law.kind} generator law")

    # -- properties ---------------------------------------------------------

    @property
    def is_markov(self) -> bool:
        return isinstance(self.law, MarkovKernelLaw)

    @property
    def has_zero_atom(self) -> bool:
        law = self.law
        if isinstance(law, ScalarLaw):
            return law.has_zero_atom
        if isinstance(law, ExchangeableMixtureLaw):
            return any(c.has_zero_atom for c in law.components)
        if isinstance(law, MarkovKernelLaw):
            return min(law.states) == 0.0
        if law.atoms is not None:
            return bool(np.min(law.atoms) == 0.0)
        return any(c.has_zero_atom for c in law.components)

    def spec(self) -> dict:
        return {"b": self.b, "include_root": self.include_root, "law": self.law.spec()}

    # -- keys and context -----------------------------------------------------

    def _key(self, seeds: np.ndarray, tag: str, ndim: int) -> np.ndarray:
        k = rng.stream_key(seeds, tag, self.b)
        return k.reshape(k.shape + (1,) * ndim)

    def draw_context(self, seeds: np.ndarray) -> np.ndarray:
        """Per-replicate mixture component (zeros for other laws)."""
        seeds = np.asarray(seeds, dtype=np.uint64)
        if not isinstance(self.law, ExchangeableMixtureLaw):
            return np.zeros(seeds.shape, dtype=np.int64)
        u = rng.uniforms(self._key(seeds, THETA_STREAM, 0), 0, np.zeros(seeds.shape, dtype=np.int64))
        cum = np.cumsum(self.law.prior)
        cum[-1] = 1.0
        return _pick(cum, u)

    # -- scalar sampling helpers ---------------------------------------------

    def _scalar_logq(self, ctx: np.ndarray, u: np.ndarray, size_biased) -> np.ndarray:
        """Log-quantiles of the (possibly size-biased) scalar law; ``ctx`` has shape (R,)."""
        law = self.law
        sb = np.broadcast_to(np.asarray(size_biased, dtype=bool), u.shape)
        if isinstance(law, ScalarLaw):
            comps = [law]
            sel = np.zeros(u.shape, dtype=np.int64)
        else:
            comps = list(law.components)
            sel = np.broadcast_to(ctx.reshape(ctx.shape + (1,) * (u.ndim - ctx.ndim)), u.shape)
        out = np.empty(u.shape)
        for i, c in enumerate(comps):
            m = sel == i
            if not m.any():
                continue
            plain = m & ~sb
            if plain.any():
                out[plain] = c.log_quantile(u[plain])
            biased = m & sb
            if biased.any():
                out[biased] = c.size_biased().log_quantile(u[biased])
        return out

    # -- root ------------------------------------------------------------------

    def sample_root(self, seeds, ctx, size_biased: bool = False):
        """Root log-weight (R,) and state (R,) or None.

        Size biasing applies only when the root enters the masses.
        """
        seeds = np.asarray(seeds, dtype=np.uint64)
        zero = np.zeros(seeds.shape, dtype=np.int64)
        sb = size_biased and self.include_root
        law = self.law
        if isinstance(law, MarkovKernelLaw):
            u = rng.uniforms(self._key(seeds, W_STREAM, 0), 0, zero)
            p = law.size_biased_p0() if sb else np.asarray(law.p0)
            cum = np.cumsum(p)
            cum[-1] = 1.0
            state = _pick(cum, u)
            return _log(law.w)[state], state
        if not self.include_root:
            return np.zeros(seeds.shape), None
        if isinstance(law, VectorLaw):
            raise ValueError("vector laws have no root generator; use include_root=False")
        u = rng.uniforms(self._key(seeds, W_STREAM, 0), 0, zero)
        return self._scalar_logq(ctx, u, sb), None

    # -- generations -----------------------------------------------------------

    def sample_children(self, seeds, ctx, level: int, parent_index: np.ndarray, parent_state=None):
        """Log-weights ``(R, P, b)`` (and states) of the children of ``parent_index``.

        ``level`` is the children's level and ``parent_index`` has shape (R, P).
        """
        seeds = np.asarray(seeds, dtype=np.uint64)
        b = self.b
        parent_index = np.asarray(parent_index, dtype=np.int64)
        child_index = parent_index[..., None] * b + np.arange(b)
        law = self.law
        if isinstance(law, VectorLaw) and law.atoms is not None:
            u = rng.uniforms(self._key(seeds, VECTOR_STREAM, 1), level, parent_index)
            cum = np.cumsum(law.probs)
            cum[-1] = 1.0
            return _log(law.atoms)[_pick(cum, u)], None
        u = rng.uniforms(self._key(seeds, W_STREAM, 2), level, child_index)
        if isinstance(law, VectorLaw):
            out = np.empty(u.shape)
            for j, c in enumerate(law.components):
                out[..., j] = c.log_quantile(u[..., j])
            return out, None
        if isinstance(law, MarkovKernelLaw):
            state = self._markov_step(law.Qm, parent_state[..., None], u)
            return _log(law.w)[state], state
        return self._scalar_logq(ctx, u, False), None

    @staticmethod
    def _markov_step(Q: np.ndarray, parent_state: np.ndarray, u: np.ndarray) -> np.ndarray:
        cum = np.cumsum(Q, axis=1)[:, :-1]
        thresholds = cum[np.broadcast_to(parent_state, u.shape)]
        return (u[..., None] >= thresholds).sum(axis=-1)

    def spine_digit_probs(self) -> np.ndarray:
        """Law of the next spine digit; uniform unless vector coordinates have unequal means."""
        if isinstance(self.law, VectorLaw):
            return self.law.coordinate_means() / self.b
        return np.full(self.b, 1.0 / self.b)

    def sample_spine_digit(self, seeds, level: int, parent_index: np.ndarray) -> np.ndarray:
        u = rng.uniforms(self._key(seeds, DIGIT_STREAM, 0), level, parent_index)
        cum = np.cumsum(self.spine_digit_probs())
        cum[-1] = 1.0
        return _pick(cum, u)

    def sample_spine_children(self, seeds, ctx, level: int, parent_index, parent_state, digit):
        """Children of spine vertices: coordinate ``digit`` size-biased, siblings ordinary.

        ``parent_index``, ``parent_state`` and ``digit`` have shape (R,); returns (R, b).
        Siblings use exactly the uniforms a full expansion would use.
        """
        seeds = np.asarray(seeds, dtype=np.uint64)
        b = self.b
        parent_index = np.asarray(parent_index, dtype=np.int64)
        digit = np.asarray(digit, dtype=np.int64)
        on_spine = np.arange(b)[None, :] == digit[:, None]
        law = self.law
        if isinstance(law, VectorLaw) and law.atoms is not None:
            u = rng.uniforms(self._key(seeds, VECTOR_STREAM, 0), level, parent_index)
            atoms = np.asarray(law.atoms)
            # atom a is chosen with probability p_a * atoms[a, k] / E[W_k]
            weights = np.asarray(law.probs)[None, :] * atoms.T
            cum = np.cumsum(weights / weights.sum(axis=1, keepdims=True), axis=1)
            cum[:, -1] = 1.0
            pick = (u[:, None] >= cum[digit][:, :-1]).sum(axis=1)
            return _log(atoms)[pick], None
        child_index = parent_index[:, None] * b + np.arange(b)
        u = rng.uniforms(self._key(seeds, W_STREAM, 1), level, child_index)
        if isinstance(law, VectorLaw):
            out = np.empty(u.shape)
            for j, c in enumerate(law.components):
                col = on_spine[:, j]
                out[:, j] = c.log_quantile(u[:, j])
                if col.any():
                    out[col, j] = c.size_biased().log_quantile(u[col, j])
            return out, None
        if isinstance(law, MarkovKernelLaw):
            plain = self._markov_step(law.Qm, parent_state[:, None], u)
            biased = self._markov_step(law.size_biased_matrix(), parent_state[:, None], u)
            state = np.where(on_spine, biased, plain)
            return _log(law.w)[state], state
        return self._scalar_logq(ctx, u, on_spine), None

    # -- functionals -------------------------------------------------------------

    def entropy_index(self) -> float:
        return entropy_index(self)

    def class_indices(self) -> list[float]:
        """Entropy indices of the ergodic pieces: mixture components or closed Markov classes."""
        law = self.law
        if isinstance(law, ExchangeableMixtureLaw):
            return [c.entropy(self.b) for c in law.components]
        if isinstance(law, MarkovKernelLaw):
            return law.class_entropies(self.b)
        return [self.entropy_index()]



# ---------------------------------------------------------------------------
# presets and specs


def markov_two_state() -> MarkovKernelLaw:
    """Weights 0.5 / 1.5.  Mean-one rows force ``Q_i0 = 1/2`` for both states."""
    return MarkovKernelLaw((0.5, 1.5), (0.5, 0.5), ((0.5, 0.5), (0.5, 0.5)))


def markov_reducible() -> MarkovKernelLaw:
    """Four states with closed classes {0.5, 1.5} and {1.0}, entered from the transient 2.0."""
    return MarkovKernelLaw(
        (0.5, 1.0, 1.5, 2.0),
        (0.5, 0.2, 0.1, 0.2),
        ((0.5, 0.0, 0.5, 0.0),
         (0.0, 1.0, 0.0, 0.0),
         (0.5, 0.0, 0.5, 0.0),
         (0.5, 0.2, 0.1, 0.2)),
    )


def mixture_two_component() -> ExchangeableMixtureLaw:
    return ExchangeableMixtureLaw((two_point(0.5, 1.5, 0.5), lognormal(0.5 * math.log(2))), (0.5, 0.5))


PRESETS = {"markov2": markov_two_state, "markov4": markov_reducible, "mixture2": mixture_two_component}


def law_from_spec(spec: dict, b: int) -> Law:
    """Inverse of ``law.spec()``; also accepts ``{"kind": <preset name>}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind in PRESETS:
        return PRESETS[kind]()
    if kind == "constant":
        return constant()
    if kind == "two_point":
        return two_point(float(spec["w0"]), float(spec["w1"]), float(spec["p1"]))
    if kind == "beta_model":
        return beta_model(float(spec["beta"]), b)
    if kind == "lognormal":
        law = lognormal(float(spec["sigma2"]))
        return law if "mu" not in spec else LogNormal(float(spec["sigma2"]), float(spec["mu"]))
    if kind == "discrete":
        return discrete(spec["values"], spec["probs"])
    if kind == "vector":
        if "atoms" in spec:
            return VectorLaw(atoms=spec["atoms"], probs=spec["probs"])
        return VectorLaw(components=tuple(law_from_spec(c, b) for c in spec["components"]))
    if kind == "markov":
        return MarkovKernelLaw(tuple(spec["states"]), tuple(spec["p0"]), tuple(tuple(r) for r in spec["Q"]))
    if kind == "mixture":
        return ExchangeableMixtureLaw(tuple(law_from_spec(c, b) for c in spec["components"]), tuple(spec["prior"]))
    raise ValueError(f"unknown law kind {kind!r}")


def model_from_spec(spec: dict) -> GeneratorModel:
    b = int(spec["b"])
    return GeneratorModel(law_from_spec(spec["law"], b), b, bool(spec.get("include_root", False)))

# ---------------------------------------------------------------------------
# single-address API


def sample_W(model: GeneratorModel, gamma: TreeAddress, seed: int, parent_weight: float | None = None,
             component: int | None = None) -> float:
    """The generator at ``gamma`` for realization ``seed``.

    ``parent_weight`` conditions Markov laws (default: the root state drawn
    from ``seed``); ``component`` pins the mixture component (default: the
    one drawn from ``seed``).
    """
    seeds = np.array([seed], dtype=np.uint64)
    ctx = model.draw_context(seeds) if component is None else np.array([component])
    if gamma.level == 0:
        logw, state = model.sample_root(seeds, ctx)
        if model.is_markov or model.include_root:
            return float(np.exp(logw[0]))
        return 1.0
    state = None
    if model.is_markov:
        if parent_weight is None:
            if gamma.level != 1:
                raise ValueError("Markov generators below level 1 need the parent weight")
            _, state = model.sample_root(seeds, ctx)
        else:
            state = model.law.state_of(np.log(np.array([parent_weight])))
        state = state.reshape(1, 1)
    parent = gamma.parent()
    logw, _ = model.sample_children(seeds, ctx, gamma.level, np.array([[parent.index]]), state)
    return float(np.exp(logw[0, 0, gamma.digits[-1]]))


# ---------------------------------------------------------------------------
# moment functionals


def entropy_index(model: GeneratorModel | Law, b: int | None = None) -> float:
    """``E_P[W log_b W]``; for Markov laws the ergodic average along the size-biased spine."""
    if isinstance(model, GeneratorModel):
        law, b = model.law, model.b
    else:
        law = model
        if b is None:
            raise ValueError("b is required when passing a bare law")
    return law.entropy(b)


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    se: float
    n: int
    unstable: bool = False


def entropy_index_mc(model: GeneratorModel, samples: int, seed: int) -> MonteCarloEstimate:
    """Monte Carlo ``E[W log_b W]`` from first-generation draws.

    For Markov laws the estimate is the average of ``log_b W`` along
    size-biased spines started from ``p0``.  ``unstable`` flags a sample
    dominated by a few terms, which is how a diverging moment shows up.
    """
    b = model.b
    if model.is_markov:
        from .spine import spine_path

        steps = 200
        reps = max(1, samples // steps)
        path = spine_path(model, steps, rng.derive_seed(seed, "entropy-mc"), reps)
        per = path.logw[:, 1:].mean(axis=1) / math.log(b)
        terms = per
    else:
        seeds = np.array([rng.derive_seed(seed, "entropy-mc", i) for i in range(samples)], dtype=np.uint64)
        ctx = model.draw_context(seeds)
        root_state = model.sample_root(seeds, ctx)[1]
        st = None if root_state is None else root_state[:, None]
        logw, _ = model.sample_children(seeds, ctx, 1, np.zeros((samples, 1), dtype=np.int64), st)
        logw = logw[:, 0, :]
        w = np.exp(logw)
        with np.errstate(invalid="ignore"):
            t = np.where(w > 0, w * logw / math.log(b), 0.0)
        terms = t.mean(axis=1)
    n = len(terms)
    mean = math.fsum(np.sort(terms)) / n
    se = float(np.std(terms, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    abs_total = float(np.abs(terms).sum())
    unstable = abs_total > 0 and float(np.abs(terms).max()) > 0.1 * abs_total
    return MonteCarloEstimate(mean, se, n, unstable)


@dataclass(frozen=True)
class MomentIndex:
    h: float
    moment: float
    chi: float

    @property
    def finite(self) -> bool:
        return self.chi < 0

    @property
    def verdict(self) -> str:
        return "moment h finite (KP criterion)" if self.finite else "moment h divergent"


def moment_index(law: ScalarLaw, h: float, b: int) -> MomentIndex:
    """``chi_b(h) = log_b E[W^h] - (h - 1)``; negative means the h-th moment of the total mass is finite."""
    if h <= 1:
        raise ValueError("moment index is defined for h > 1")
    m = law.moment(h)
    chi = math.inf if not math.isfinite(m) else math.log(m, b) - (h - 1)
    return MomentIndex(h, m, chi)
