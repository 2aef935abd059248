"""Exact checks of divergence identities on finite categorical distributions.

Everything here is brute force over a handful of states: KL and JS with
compensated summation, push-forwards through index maps, mixtures, the
optimal discriminator, and residual/slack functions for the invariance and
mixture bounds.  Natural logarithms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
LOG4 = math.log(4.0)


class SimplexError(ValueError):
    pass


class NotBijective(ValueError):
    pass


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise SimplexError("probabilities must be finite and non-negative")
        if abs(math.fsum(p) - 1.0) > SIMPLEX_TOL:
            raise SimplexError(f"probabilities sum to {math.fsum(p)!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    @classmethod
    def normalized(cls, weights) -> "Categorical":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / math.fsum(w))


@dataclass(frozen=True)
class DiscreteMap:
    """Index map ``source i -> target[i]`` over ``n_target`` states."""

    target: tuple[int, ...]
    n_target: int

    def __post_init__(self):
        if any(t < 0 or t >= self.n_target for t in self.target):
            raise ValueError("map target out of range")

    @classmethod
    def permutation(cls, perm: Sequence[int]) -> "DiscreteMap":
        return cls(tuple(int(i) for i in perm), len(perm))

    @classmethod
    def identity(cls, n: int) -> "DiscreteMap":
        return cls(tuple(range(n)), n)

    @property
    def bijective(self) -> bool:
        return len(self.target) == self.n_target and len(set(self.target)) == self.n_target


@dataclass(frozen=True)
class MixtureSpec:
    weights: np.ndarray
    components: tuple[Categorical, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size != len(self.components) or w.size == 0:
            raise SimplexError("one weight per component required")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > SIMPLEX_TOL:
            raise SimplexError("mixture weights must lie on the simplex")
        if len({len(c) for c in self.components}) != 1:
            raise ValueError("components must have equal length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))


def _probs(p) -> np.ndarray:
    return p.probs if isinstance(p, Categorical) else np.asarray(p, dtype=np.float64)


def _same_length(p, q):
    if p.size != q.size:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")


def kl(p, q) -> float:
    """KL(p || q); +inf when p puts mass where q has none."""
    p, q = _probs(p), _probs(q)
    _same_length(p, q)
    on = p > 0.0
    if np.any(q[on] == 0.0):
        return math.inf
    return math.fsum(p[on] * np.log(p[on] / q[on]))


def js(p, q) -> float:
    p, q = _probs(p), _probs(q)
    _same_length(p, q)
    # KL against the midpoint, written with p+q so tiny masses never underflow to 0
    s = p + q
    on_p, on_q = p > 0.0, q > 0.0
    terms = np.concatenate(
        [p[on_p] * np.log(2.0 * p[on_p] / s[on_p]), q[on_q] * np.log(2.0 * q[on_q] / s[on_q])]
    )
    return 0.5 * math.fsum(terms)


def push_forward(p, f: DiscreteMap) -> Categorical:
    p = _probs(p)
    if p.size != len(f.target):
        raise ValueError("map domain does not match distribution length")
    if f.bijective:
        out = np.empty(f.n_target)
        out[list(f.target)] = p
        return Categorical(out)
    buckets: list[list[float]] = [[] for _ in range(f.n_target)]
    for i, j in enumerate(f.target):
        buckets[j].append(p[i])
    return Categorical(np.array([math.fsum(b) for b in buckets]))


def mixture(spec: MixtureSpec) -> Categorical:
    terms = spec.weights[:, None] * np.stack([c.probs for c in spec.components])
    out = np.array([math.fsum(col) for col in terms.T])
    # float drift stays inside the Categorical tolerance; no rescaling so that
    # single-component mixtures reproduce their component bit for bit
    return Categorical(out)


def empirical(samples: Sequence[int], n_states: int) -> Categorical:
    counts = np.bincount(np.asarray(samples, dtype=np.int64), minlength=n_states)
    return Categorical(counts / counts.sum())


def optimal_discriminator(p_d, p_g) -> np.ndarray:
    """Per-state p_d / (p_d + p_g); states with no mass on either side get 0.5."""
    p, q = _probs(p_d), _probs(p_g)
    _same_length(p, q)
    total = p + q
    out = np.full(p.shape, 0.5)
    np.divide(p, total, out=out, where=total > 0)
    return out


def value_function(p_d, p_g, D) -> float:
    """E_pd log D + E_pg log(1 - D)."""
    p, q, d = _probs(p_d), _probs(p_g), np.asarray(D, dtype=np.float64)
    _same_length(p, q)
    _same_length(p, d)
    terms = []
    for pi, qi, di in zip(p, q, d):
        if pi > 0:
            if di <= 0.0:
                raise ValueError("log(D) undefined on a state with data mass")
            terms.append(pi * math.log(di))
        if qi > 0:
            if di >= 1.0:
                raise ValueError("log(1 - D) undefined on a state with model mass")
            terms.append(qi * math.log1p(-di))
    return math.fsum(terms)


def check_js_invariance(p, q, perm: DiscreteMap) -> float:
    """|JS(p,q) - JS(Tp, Tq)| for a bijective state map T."""
    if not perm.bijective:
        raise NotBijective("invariance only holds for bijective maps")
    return js_drift(p, q, perm)


def js_drift(p, q, f: DiscreteMap) -> float:
    """Same quantity without the bijectivity guard (for counterexamples)."""
    return abs(js(p, q) - js(push_forward(p, f), push_forward(q, f)))


def check_mixture_bound(spec_p: MixtureSpec, spec_q: MixtureSpec) -> float:
    """sum_m w_m JS(p^m, q^m) - JS(mix p, mix q); non-negative by the mixture bound."""
    if not np.array_equal(spec_p.weights, spec_q.weights):
        raise ValueError("mixtures must share their weight vector")
    bound = math.fsum(
        w * js(a, b) for w, a, b in zip(spec_p.weights, spec_p.components, spec_q.components)
    )
    return bound - js(mixture(spec_p), mixture(spec_q))


def check_augmented_mixture(p0, q0, perms: Sequence[DiscreteMap], weights) -> float:
    """JS(p0, q0) - JS(p, q) where p, q mix bijective push-forwards of p0, q0."""
    for f in perms:
        if not f.bijective:
            raise NotBijective("every map must be bijective")
    p_parts = tuple(push_forward(p0, f) for f in perms)
    q_parts = tuple(push_forward(q0, f) for f in perms)
    p = mixture(MixtureSpec(weights, p_parts))
    q = mixture(MixtureSpec(weights, q_parts))
    return js(p0, q0) - js(p, q)


# names used by the published interface
check_theorem1 = check_js_invariance
check_lemma2 = check_mixture_bound
check_theorem2 = check_augmented_mixture


# ----------------------------------------------------------------------------
# randomized trial runners shared by the CLI and the tests


def random_categorical(rng: np.random.Generator, n: int) -> Categorical:
    return Categorical.normalized(rng.dirichlet(np.ones(n)))


def random_permutation(rng: np.random.Generator, n: int) -> DiscreteMap:
    return DiscreteMap.permutation(rng.permutation(n))


def random_weights(rng: np.random.Generator, k: int) -> np.ndarray:
    w = rng.dirichlet(np.ones(k))
    return w / math.fsum(w)


def equal_ratio_components(rng: np.random.Generator, n: int, k: int):
    """k pairs (p^m, q^m), p^m != q^m, whose ratio p^m/(p^m+q^m) is the same for every m.

    States split into blocks A and B. Every q^m puts mass alpha on A; p^m is
    q^m reweighted by c_A on A and c_B on B with c_A*alpha + c_B*(1-alpha) = 1.
    """
    split = int(rng.integers(1, n))
    alpha = float(rng.uniform(0.2, 0.8))
    c_a = float(rng.uniform(0.1, 0.9 / alpha))
    c_b = (1.0 - c_a * alpha) / (1.0 - alpha)
    scale = np.where(np.arange(n) < split, c_a, c_b)
    ps, qs = [], []
    for _ in range(k):
        a = rng.dirichlet(np.ones(split)) * alpha
        b = rng.dirichlet(np.ones(n - split)) * (1.0 - alpha)
        q = np.concatenate([a, b])
        ps.append(Categorical.normalized(q * scale))
        qs.append(Categorical.normalized(q))
    return tuple(ps), tuple(qs)


@dataclass
class CheckResult:
    name: str
    worst: float
    tolerance: float
    kind: str  # "residual" (must be <= tol) or "slack" (must be >= -tol)
    trials: int

    @property
    def passed(self) -> bool:
        if self.kind == "residual":
            return self.worst <= self.tolerance
        return self.worst >= -self.tolerance


def run_checks(
    trials: int, seed: int, inject_noninvertible: bool = False, identity_only: bool = False
) -> list[CheckResult]:
    """Randomized sweep over every identity; one CheckResult per identity.

    ``identity_only`` replaces every random map by the identity and every
    mixture by a single component (a degenerate path whose residuals are
    exactly zero). ``inject_noninvertible`` merges two states in the map used
    by the invariance check so that it reports a violation.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    tol = 1e-12
    worst = {
        "js_invariance": 0.0,
        "optimal_d_commutes": 0.0,
        "value_at_optimum": 0.0,
        "empirical_mixture": 0.0,
        "mixture_bound": math.inf,
        "mixture_bound_equality": 0.0,
        "augmented_mixture_bound": math.inf,
        "augmented_identity_equality": 0.0,
    }
    for _ in range(trials):
        n = int(rng.integers(8, 33))
        p, q = random_categorical(rng, n), random_categorical(rng, n)
        perm = DiscreteMap.identity(n) if identity_only else random_permutation(rng, n)
        if inject_noninvertible:
            # merge two states: a deliberately lossy map
            target = list(perm.target)
            target[int(np.argmax(target))] = target[int(np.argmin(target))]
            perm = DiscreteMap(tuple(target), n)
            r1 = js_drift(p, q, perm)
        else:
            r1 = check_js_invariance(p, q, perm)
        worst["js_invariance"] = max(worst["js_invariance"], r1)

        if perm.bijective:
            d = optimal_discriminator(p, q)
            d_pushed = optimal_discriminator(push_forward(p, perm), push_forward(q, perm))
            moved = np.empty_like(d)
            moved[list(perm.target)] = d
            worst["optimal_d_commutes"] = max(
                worst["optimal_d_commutes"], float(np.max(np.abs(moved - d_pushed)))
            )
        r7 = abs(value_function(p, q, optimal_discriminator(p, q)) - (-LOG4 + 2.0 * js(p, q)))
        worst["value_at_optimum"] = max(worst["value_at_optimum"], r7)

        # merged multisets reproduce the count-weighted mixture
        n1, n2 = int(rng.integers(1, 200)), int(rng.integers(1, 200))
        s1 = rng.choice(n, size=n1, p=p.probs)
        s2 = rng.choice(n, size=n2, p=q.probs)
        if identity_only:
            # one multiset, one component
            merged = empirical(s1, n)
            mixed = mixture(MixtureSpec(np.array([1.0]), (empirical(s1, n),)))
        else:
            merged = empirical(np.concatenate([s1, s2]), n)
            mixed = mixture(
                MixtureSpec(
                    np.array([n1, n2]) / (n1 + n2), (empirical(s1, n), empirical(s2, n))
                )
            )
        worst["empirical_mixture"] = max(
            worst["empirical_mixture"], float(np.max(np.abs(merged.probs - mixed.probs)))
        )

        k = 1 if identity_only else int(rng.integers(1, 5))
        w = random_weights(rng, k)
        comps_p = tuple(random_categorical(rng, n) for _ in range(k))
        comps_q = tuple(random_categorical(rng, n) for _ in range(k))
        s = check_mixture_bound(MixtureSpec(w, comps_p), MixtureSpec(w, comps_q))
        worst["mixture_bound"] = min(worst["mixture_bound"], s)

        eq_p, eq_q = equal_ratio_components(rng, n, k)
        s_eq = check_mixture_bound(MixtureSpec(w, eq_p), MixtureSpec(w, eq_q))
        worst["mixture_bound_equality"] = max(worst["mixture_bound_equality"], abs(s_eq))

        perms = [DiscreteMap.identity(n)]
        if not identity_only:
            perms += [random_permutation(rng, n) for _ in range(k)]
        w2 = random_weights(rng, len(perms))
        s2_ = check_augmented_mixture(p, q, perms, w2)
        worst["augmented_mixture_bound"] = min(worst["augmented_mixture_bound"], s2_)
        ident = [DiscreteMap.identity(n)] * len(perms)
        worst["augmented_identity_equality"] = max(
            worst["augmented_identity_equality"], abs(check_augmented_mixture(p, q, ident, w2))
        )

    kinds = {
        "mixture_bound": "slack",
        "augmented_mixture_bound": "slack",
    }
    return [
        CheckResult(name, value, tol, kinds.get(name, "residual"), trials)
        for name, value in worst.items()
    ]
