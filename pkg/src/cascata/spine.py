"""Size-biased spines and the submartingale bound.

A spine replicate is a boundary path ``t`` together with the generators
under the size-biased path law: the weights on ``t`` follow ``x q(dx)``
(the size-biased Markov chain for Markov laws) and everything off ``t``
follows the ordinary law, using exactly the address-keyed uniforms a full
expansion of the same seed would use.

Off-spine mass is kept per *hanging level*: ``O[j, n]`` is the level-``n``
mass of the subtrees rooted at the siblings of ``t|j+1``, renormalised
relative to ``t|j``:

    O[j, n] = b**-(n-j) * sum over those vertices gamma of prod W * F_gamma

where the product runs over generators strictly below ``t|j``.  Then

    lambda_{F,n}(T) = spine_n + sum_{j<n} a_j O[j, n],   a_j = prod_{i<=j} W_(t|i) / b
    M_n = sum_{j<n} c_j O[j, n]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cascade import NEG_INF, Pinning, log_sum, replicate_seeds
from .gen import GeneratorModel, ScalarLaw, VectorLaw
from .tree import DEFAULT_NODE_CAP, check_cap
from .weights import Ancestry, ConstantWeights, WeightSystem, unit

REL_TOL = 1e-12


class ZeroNormalization(ValueError):
    """``Z = E[W_root F_root]`` vanishes, so the size-biased law is undefined."""


@dataclass(frozen=True)
class SpinePath:
    """Spine digits and generators for a batch of replicates.

    ``logw[:, m]`` is the generator at ``t|m`` (column 0 the root);
    ``child_logw[:, j]`` are all ``b`` children of ``t|j``, the spine child
    included.
    """

    model: GeneratorModel
    seeds: np.ndarray
    ctx: np.ndarray
    digits: np.ndarray
    index: np.ndarray
    logw: np.ndarray
    state: np.ndarray | None
    child_logw: np.ndarray
    child_state: np.ndarray | None

    @property
    def depth(self) -> int:
        return self.digits.shape[1]

    def log_products(self) -> np.ndarray:
        """``log prod_{i<=n} W_(t|i)`` for n = 0..N on the mass root convention."""
        steps = self.logw.copy()
        if not self.model.include_root:
            steps[:, 0] = 0.0
        return np.cumsum(steps, axis=1)

    def pinning(self) -> Pinning:
        return Pinning(self.digits, self.child_logw, self.child_state, self.logw[:, 0],
                       None if self.state is None else self.state[:, 0])

    def ancestry(self, n: int) -> Ancestry:
        return Ancestry(self.model.b, n, self.index[:, n], self.logw[:, : n + 1], self.seeds,
                        self.model.include_root)


def spine_path(model: GeneratorModel, depth: int, seeds, replicates: int | None = None) -> SpinePath:
    """Sample spines; ``seeds`` is an array of replicate seeds, or a master seed with ``replicates``."""
    if replicates is not None:
        seeds = replicate_seeds(int(seeds), replicates, "spine")
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    R, b = len(seeds), model.b
    ctx = model.draw_context(seeds)
    root_logw, root_state = model.sample_root(seeds, ctx, size_biased=True)
    digits = np.empty((R, depth), dtype=np.int64)
    index = np.zeros((R, depth + 1), dtype=np.int64)
    logw = np.empty((R, depth + 1))
    logw[:, 0] = root_logw
    markov = root_state is not None
    state = np.empty((R, depth + 1), dtype=np.int64) if markov else None
    child_logw = np.empty((R, depth, b))
    child_state = np.empty((R, depth, b), dtype=np.int64) if markov else None
    cur_state = root_state
    for j in range(depth):
        if markov:
            state[:, j] = cur_state
        d = model.sample_spine_digit(seeds, j + 1, index[:, j])
        cw, cs = model.sample_spine_children(seeds, ctx, j + 1, index[:, j], cur_state, d)
        digits[:, j] = d
        index[:, j + 1] = index[:, j] * b + d
        child_logw[:, j] = cw
        logw[:, j + 1] = cw[np.arange(R), d]
        if markov:
            child_state[:, j] = cs
            cur_state = cs[np.arange(R), d]
    if markov:
        state[:, depth] = cur_state
    return SpinePath(model, seeds, ctx, digits, index, logw, state, child_logw, child_state)


@dataclass(frozen=True)
class SpineRealization:
    """Spines plus their off-spine forests, summarised by hanging level.

    ``log_O[:, j, n]`` is ``log O[j, n]`` (``-inf`` for ``n <= j``),
    ``log_spine[:, n]`` is ``log(b**-n prod W_(t|i) F_(t|n))`` and
    ``log_F[:, n]`` is ``log F_(t|n)``.  ``forest`` is kept only on request:
    a list over hanging level of per-depth ``(index, logw)`` arrays.
    """

    path: SpinePath
    weights: WeightSystem
    log_O: np.ndarray
    log_spine: np.ndarray
    log_F: np.ndarray
    forest: list | None = field(default=None, repr=False)

    @property
    def depth(self) -> int:
        return self.path.depth

    @property
    def b(self) -> int:
        return self.path.model.b

    def log_a(self) -> np.ndarray:
        """``log a_j = log prod_{i<=j} (W_(t|i) / b)``, shape (R, N + 1)."""
        return self.path.log_products() - np.arange(self.depth + 1) * math.log(self.b)

    def rn_derivative(self) -> np.ndarray:
        """``prod_{j<=n} W_(t|j) * F_(t|n)`` per level."""
        return np.exp(self.path.log_products() + self.log_F)


def _check_normalization(model: GeneratorModel, F: WeightSystem) -> None:
    try:
        z = F.root_expectation(model)
    except NotImplementedError:
        return
    if not z > 0:
        raise ZeroNormalization(f"E[W_root F_root] = {z}; the size-biased law needs it positive")


def sample_spines(model: GeneratorModel, F: WeightSystem, depth: int, seeds, keep_forest: bool = False,
                  cap: int = DEFAULT_NODE_CAP) -> SpineRealization:
    check_cap(model.b, depth, cap)
    _check_normalization(model, F)
    path = spine_path(model, depth, seeds)
    seeds = path.seeds
    R, b, N = len(seeds), model.b, depth
    logb = math.log(b)
    constant_F = isinstance(F, ConstantWeights)
    log_O = np.full((R, N, N + 1), NEG_INF)
    forest = [] if keep_forest else None
    rows = np.arange(R)
    for j in range(N):
        # siblings of t|j+1 at level j+1: children of t|j other than the spine digit
        offs = np.array([[k for k in range(b) if k != d] for d in path.digits[:, j]], dtype=np.int64).reshape(R, b - 1)
        idx = path.index[:, j][:, None] * b + offs
        lw = path.child_logw[:, j][rows[:, None], offs]
        st = None if path.child_state is None else path.child_state[:, j][rows[:, None], offs]
        rel = lw.copy()
        anc = None if constant_F else np.concatenate(
            [np.broadcast_to(path.logw[:, None, : j + 1], (R, b - 1, j + 1)), lw[..., None]], axis=-1)
        levels = []
        for n in range(j + 1, N + 1):
            if n > j + 1:
                child_lw, child_st = model.sample_children(seeds, path.ctx, n, idx, st)
                idx = (idx[..., None] * b + np.arange(b)).reshape(R, -1)
                rel = (rel[..., None] + child_lw).reshape(R, -1)
                st = None if child_st is None else child_st.reshape(R, -1)
                lw = child_lw.reshape(R, -1)
                if anc is not None:
                    anc = np.concatenate([np.repeat(anc, b, axis=1), lw[..., None]], axis=-1)
            if keep_forest:
                levels.append((idx.copy(), lw.copy()))
            if constant_F:
                logF = F.log_evaluate(Ancestry(b, n, idx, None, seeds[:, None]))
            else:
                logF = F.log_evaluate(Ancestry(b, n, idx, anc, seeds[:, None], model.include_root))
            log_O[:, j, n] = log_sum(rel - (n - j) * logb + logF, axis=1)
        if keep_forest:
            forest.append(levels)
    log_F = np.stack([F.log_evaluate(path.ancestry(n)) for n in range(N + 1)], axis=1)
    log_spine = path.log_products() - np.arange(N + 1) * logb + log_F
    return SpineRealization(path, F, log_O, log_spine, log_F, forest)


def sample_spine(model: GeneratorModel, F: WeightSystem | None, depth: int, seed: int,
                 cap: int = DEFAULT_NODE_CAP) -> SpineRealization:
    """One spine with its forest kept; coupled with ``expand(model, depth, seed, pinned=...)``."""
    return sample_spines(model, F or unit(), depth, [seed], keep_forest=True, cap=cap)


def log_total_mass_from_spine(s: SpineRealization, n: int) -> np.ndarray:
    if not 0 <= n <= s.depth:
        raise ValueError(f"level {n} outside [0, {s.depth}]")
    la = s.log_a()
    terms = [s.log_spine[:, n]] + [la[:, j] + s.log_O[:, j, n] for j in range(n)]
    return log_sum(np.stack(terms, axis=1), axis=1)


def total_mass_from_spine(s: SpineRealization, n: int) -> np.ndarray:
    """``lambda_{F,n}(T)`` per replicate, assembled from the spine decomposition."""
    return np.exp(log_total_mass_from_spine(s, n))


# ---------------------------------------------------------------------------
# submartingale bound


def sufficiency_constants(model: GeneratorModel, depth: int) -> np.ndarray:
    """``c_j = c**-j`` with ``log_b c`` halfway into ``(0, 1 - E[W log_b W])``; unit constants otherwise."""
    gap = 1.0 - model.entropy_index()
    log_c = gap / 2 if gap > 0 else 0.0
    return float(model.b) ** (-log_c * np.arange(depth + 1))


@dataclass(frozen=True)
class SubmartingaleTrajectory:
    c: np.ndarray
    M: np.ndarray
    A: np.ndarray
    lower: np.ndarray
    total: np.ndarray
    upper: np.ndarray
    sup_ratio: np.ndarray


def submartingale_trajectory(s: SpineRealization, c) -> SubmartingaleTrajectory:
    """``M_n``, its predictable part ``A_n`` and the two-sided bound on ``lambda_{F,n}(T)``."""
    N, b = s.depth, s.b
    c = np.asarray(c, dtype=float)
    if c.shape[0] < N:
        raise ValueError(f"need at least {N} constants, got {c.shape[0]}")
    if np.any(c < 0):
        raise ValueError("constants c_j must be nonnegative")
    if not np.any(c[:N] > 0):
        raise ValueError("all c_j are zero: the upper bound degenerates")
    with np.errstate(divide="ignore"):
        log_c = np.log(c[:N])
    la = s.log_a()
    R = s.log_O.shape[0]
    M = np.zeros((R, N + 1))
    sup_ratio = np.full((R, N + 1), NEG_INF)
    total = np.empty((R, N + 1))
    upper = np.empty((R, N + 1))
    for n in range(N + 1):
        total[:, n] = log_total_mass_from_spine(s, n)
        if n == 0:
            M[:, 0] = NEG_INF
            upper[:, 0] = s.log_spine[:, 0]
            continue
        M[:, n] = log_sum(log_c[None, :n] + s.log_O[:, :n, n], axis=1)
        with np.errstate(invalid="ignore"):
            ratio = la[:, :n] - log_c[None, :n]
        sup_ratio[:, n] = ratio.max(axis=1)
        with np.errstate(invalid="ignore"):
            bound = sup_ratio[:, n] + M[:, n]
        bound = np.where(np.isneginf(M[:, n]), NEG_INF, bound)
        upper[:, n] = log_sum(np.stack([s.log_spine[:, n], bound], axis=1), axis=1)
    A = (b - 1) / b * np.concatenate([[0.0], np.cumsum(c[:N])])
    return SubmartingaleTrajectory(c[: N + 1] if len(c) > N else c, np.exp(M), A, np.exp(s.log_spine),
                                   np.exp(total), np.exp(upper), np.exp(sup_ratio))


@dataclass(frozen=True)
class BoundReport:
    lower_ok: np.ndarray
    upper_ok: np.ndarray
    violations: int
    replicates: int

    @property
    def ok(self) -> bool:
        return self.violations == 0


def bound_check(s: SpineRealization, c) -> BoundReport:
    """Both inequalities at every level and replicate (relative slack 1e-12 for rounding)."""
    tr = submartingale_trajectory(s, c)
    lower_ok = tr.lower <= tr.total * (1 + REL_TOL)
    upper_ok = tr.total <= tr.upper * (1 + REL_TOL)
    violations = int((~lower_ok).sum() + (~upper_ok).sum())
    return BoundReport(lower_ok, upper_ok, violations, tr.total.shape[0])


@dataclass(frozen=True)
class DoobReport:
    mean_increment: np.ndarray
    se: np.ndarray
    expected: np.ndarray
    z: np.ndarray

    def ok(self, k: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.mean_increment - self.expected) <= k * self.se + 1e-15))


def doob_check(s: SpineRealization, c) -> DoobReport:
    """Replicate means of ``M_{n+1} - M_n`` against the predictable increments ``(b-1)/b c_n``.

    Valid for unit weights and laws whose off-spine siblings are ordinary
    draws (scalar, Markov and mixture laws).
    """
    if isinstance(s.path.model.law, VectorLaw):
        raise ValueError("siblings of a vector-law spine are size-biased jointly; the check does not apply")
    tr = submartingale_trajectory(s, c)
    inc = np.diff(tr.M, axis=1)
    R = inc.shape[0]
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / math.sqrt(R)
    expected = np.diff(tr.A)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - expected) / se, np.where(mean == expected, 0.0, np.inf))
    return DoobReport(mean, se, expected, z)


# ---------------------------------------------------------------------------
# nondegeneracy


BOUNDARY_TOL = 1e-12
NEAR_THRESHOLD = 0.1
GROWTH_MARGIN = 0.05


@dataclass(frozen=True)
class Diagnostic:
    name: str
    estimate: float
    se: float
    lean: str
    contradicts: bool

    def as_dict(self) -> dict:
        return {"name": self.name, "estimate": self.estimate, "se": self.se, "lean": self.lean,
                "contradicts": self.contradicts}


@dataclass(frozen=True)
class Verdict:
    verdict: str
    entropy_index: float
    class_indices: list[float]
    degenerate: bool
    diagnostics: list[Diagnostic]
    note: str = ""

    @property
    def consistent(self) -> bool:
        return not any(d.contradicts for d in self.diagnostics)

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "entropy_index": self.entropy_index,
                "class_indices": self.class_indices, "degenerate": self.degenerate,
                "consistent": self.consistent, "note": self.note,
                "diagnostics": [d.as_dict() for d in self.diagnostics]}


def classify_index(index: float) -> str:
    if abs(index - 1.0) <= BOUNDARY_TOL:
        return "boundary"
    return "nondegenerate" if index < 1.0 else "degenerate"


def _is_critical_branching(model: GeneratorModel) -> bool:
    law = model.law
    if not isinstance(law, ScalarLaw) or not law.has_zero_atom:
        return False
    vals = [v for v in getattr(law, "values", ()) if v > 0]
    return len(vals) == 1 and math.isclose(vals[0], model.b, rel_tol=1e-12)


def _contradicts(exact: str, lean: str) -> bool:
    if lean == "nondegenerate":
        return exact in ("degenerate", "boundary")
    if lean == "degenerate":
        return exact == "nondegenerate"
    return False


def drift_diagnostic(model: GeneratorModel, depth: int, seed: int, replicates: int, exact: str) -> Diagnostic:
    """Mean step of the spine walk ``log_b W_(t|i) - 1``: negative drift means mass survives."""
    path = spine_path(model, depth, seed, replicates)
    steps = path.logw[:, 1:] / math.log(model.b) - 1.0
    per = steps.mean(axis=1)
    mean = float(np.mean(per))
    se = float(np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else math.inf
    if se == 0.0:
        lean = "boundary" if mean == 0.0 else ("nondegenerate" if mean < 0 else "degenerate")
    elif mean + 4 * se < 0:
        lean = "nondegenerate"
    elif mean - 4 * se > 0:
        lean = "degenerate"
    else:
        lean = "inconclusive"
    return Diagnostic("spine_drift", mean, se, lean, exact != "mixed" and _contradicts(exact, lean))


def growth_diagnostic(model: GeneratorModel, F: WeightSystem, depth: int, seed: int, replicates: int,
                      exact: str, index: float) -> Diagnostic:
    """Slope of ``log_b lambda_{F,n}(T)`` under the spine law over the second half of the levels.

    Bounded total mass (slope near 0) is the nondegenerate signature;
    growth is the degenerate one.  Within ``NEAR_THRESHOLD`` of the
    critical index the finite depth cannot separate the two, and the lean
    is reported without counting as a contradiction.
    """
    seeds = replicate_seeds(seed, replicates, "growth")
    s = sample_spines(model, F, depth, seeds)
    logs = np.stack([log_total_mass_from_spine(s, n) for n in range(depth + 1)], axis=1) / math.log(model.b)
    lo = max(1, depth // 2)
    x = np.arange(lo, depth + 1, dtype=float)
    y = logs[:, lo:]
    xc = x - x.mean()
    slopes = (y - y.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    slopes = slopes[np.isfinite(slopes)]
    mean = float(np.mean(slopes)) if len(slopes) else math.nan
    se = float(np.std(slopes, ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else math.inf
    if mean - 4 * se > GROWTH_MARGIN:
        lean = "degenerate"
    elif mean + 4 * se < GROWTH_MARGIN:
        lean = "nondegenerate"
    else:
        lean = "inconclusive"
    near = abs(index - 1.0) < NEAR_THRESHOLD
    return Diagnostic("spine_growth", mean, se, lean, exact != "mixed" and not near and _contradicts(exact, lean))


def nondegeneracy_verdict(model: GeneratorModel, F: WeightSystem | None = None, depth: int = 10,
                          replicates: int = 200, seed: int = 0, walk_depth: int | None = None) -> Verdict:
    """Classify by the sign of ``E[W log_b W] - 1`` and cross-check with two spine diagnostics.

    The exact verdict comes from the closed-form index; Monte Carlo only
    reports whether it agrees.  Mixtures and reducible Markov laws are
    classified per component (``"mixed"`` when they disagree).
    """
    F = F or unit()
    index = model.entropy_index()
    per_class = model.class_indices()
    classes = {classify_index(i) for i in per_class}
    exact = classes.pop() if len(classes) == 1 else "mixed"
    note = ""
    if _is_critical_branching(model):
        note = "P(W=b)=1/b: surviving lines form a critical Galton-Watson tree, which dies out"
    diags = [
        drift_diagnostic(model, walk_depth or max(depth, 200), seed, replicates, exact),
        growth_diagnostic(model, F, depth, seed, replicates, exact, index),
    ]
    return Verdict(exact, index, per_class, exact in ("degenerate", "boundary"), diags, note)
