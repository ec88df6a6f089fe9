"""Privatizers: how client feedback reaches the server under each trust model.

A privatizer is the pipeline randomizer -> intermediary -> analyzer.  Four
instantiations are provided:

* ``NONE``     plain aggregation, no privacy;
* ``CENTRAL``  the server adds Gaussian noise to the aggregate;
* ``LOCAL``    every client adds Gaussian noise before reporting;
* ``SHUFFLE``  clients send fixed-point bits padded with binomial noise, a
  shuffler permutes them, the server debiases the bit count.

DP-DPE consumes per-client vectors and wants their *average*; DP-PE consumes
per-pull scalars and wants their *sum*.  Both entry points live on the same
classes.  All logarithms are natural.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np


class PrivacyModel(str, enum.Enum):
    NONE = "none"
    CENTRAL = "central"
    LOCAL = "local"
    SHUFFLE = "shuffle"

    @classmethod
    def parse(cls, value: "str | PrivacyModel") -> "PrivacyModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown privacy model {value!r}; expected one of "
                             f"{[m.value for m in cls]}") from None


@dataclass(frozen=True)
class PrivacyParams:
    model: PrivacyModel = PrivacyModel.NONE
    epsilon: float = 1.0
    delta: float = 0.1
    B: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "model", PrivacyModel.parse(self.model))
        if self.model is PrivacyModel.NONE:
            return
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not self.B > 0:
            raise ValueError("reward bound B must be positive")
        if self.model is PrivacyModel.SHUFFLE:
            if not self.epsilon < 15:
                raise ValueError("shuffle model requires epsilon < 15")
            if not self.delta < 0.5:
                raise ValueError("shuffle model requires delta < 1/2")


@dataclass(frozen=True)
class AggregatedFeedback:
    values: np.ndarray
    mode: str = "average"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("aggregated feedback must be finite")
        object.__setattr__(self, "values", v)


# -- Gaussian noise scales ---------------------------------------------------

def sigma_central(B: float, s: int, delta: float, epsilon: float, n_clients: int) -> float:
    """Std of the server-side noise on the average of ``n_clients`` s-vectors."""
    return 2.0 * B * math.sqrt(2.0 * s * math.log(1.25 / delta)) / (epsilon * n_clients)


def sigma_local(B: float, s: int, delta: float, epsilon: float) -> float:
    """Std of the per-client noise on one s-vector."""
    return 2.0 * B * math.sqrt(2.0 * s * math.log(1.25 / delta)) / epsilon


def sigma_scalar(B: float, delta: float, epsilon: float) -> float:
    """Std of Gaussian noise for a single scalar of sensitivity 2B (DP-PE)."""
    return 2.0 * B * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def _check_reports(reports, B: float | None = None) -> np.ndarray:
    r = np.atleast_2d(np.asarray(reports, dtype=float))
    if r.shape[0] == 0:
        raise ValueError("need at least one client report")
    if B is not None and np.any(np.abs(r) > B * (1 + 1e-12)):
        raise ValueError(f"report coordinates must lie in [-{B}, {B}]")
    return r


def central_privatize(reports, params: PrivacyParams, rng) -> AggregatedFeedback:
    r = _check_reports(reports, params.B)
    n, s = r.shape
    sigma = sigma_central(params.B, s, params.delta, params.epsilon, n)
    return AggregatedFeedback(r.mean(axis=0) + rng.normal(0.0, sigma, size=s))


def local_privatize(reports, params: PrivacyParams, rng) -> AggregatedFeedback:
    r = _check_reports(reports, params.B)
    n, s = r.shape
    sigma = sigma_local(params.B, s, params.delta, params.epsilon)
    noised = r + rng.normal(0.0, sigma, size=(n, s))
    return AggregatedFeedback(noised.mean(axis=0))


# -- shuffle vector-average protocol ------------------------------------------

@dataclass(frozen=True)
class ShuffleParams:
    """Encoding parameters of the bit-level shuffle protocol.

    ``g`` is the fixed-point resolution, ``b`` and ``p`` the binomial
    blanket, ``delta2`` the l2 bound on client vectors.
    """

    eps_hat: float
    g: int
    b: int
    p: float
    s: int
    n: int
    delta2: float
    delta: float

    @property
    def bits_per_coordinate(self) -> int:
        return self.g + self.b


def shuffle_eps_hat(epsilon: float, delta: float) -> float:
    return epsilon / (18.0 * math.sqrt(math.log(2.0 / delta)))


def shuffle_params(epsilon: float, delta: float, s: int, n: int,
                   delta2: float = 1.0) -> ShuffleParams:
    """Choose (g, b, p) for ``n`` clients sending s-vectors of norm at most ``delta2``."""
    if not 0 < epsilon < 15:
        raise ValueError(f"epsilon={epsilon} violates 0 < epsilon < 15")
    if not 0 < delta < 0.5:
        raise ValueError(f"delta={delta} violates 0 < delta < 1/2")
    if s < 1:
        raise ValueError(f"s={s} violates s >= 1")
    if n < 1:
        raise ValueError(f"n={n} violates n >= 1")
    if not delta2 > 0:
        raise ValueError("delta2 must be positive")
    eps_hat = shuffle_eps_hat(epsilon, delta)
    log_term = math.log(4.0 * s / delta)
    g = max(math.ceil(eps_hat * math.sqrt(n) / (6.0 * math.sqrt(5.0 * log_term))),
            math.ceil(math.sqrt(s)), 10)
    b = math.ceil(180.0 * g * g * log_term / (eps_hat ** 2 * n))
    p = 90.0 * g * g * log_term / (b * eps_hat ** 2 * n)
    return ShuffleParams(eps_hat, g, b, p, s, n, delta2, delta)


def shuffle_variance_bound(sp: ShuffleParams) -> float:
    """Per-coordinate bound ``360 delta2^2 ln(4s/delta) / (n^2 eps_hat^2)`` on the analyzer variance."""
    return 360.0 * sp.delta2 ** 2 * math.log(4.0 * sp.s / sp.delta) / (sp.n ** 2 * sp.eps_hat ** 2)


def shuffle_randomize(vector, sp: ShuffleParams, rng, materialize: bool = False):
    """Local randomizer: encode each coordinate as ``g + b`` bits.

    Accepts one s-vector or an (n, s) batch.  Returns the number of one-bits
    per coordinate (same shape as the input), or with ``materialize=True`` the
    literal bit arrays with a trailing axis of length ``g + b``.
    """
    v = np.asarray(vector, dtype=float)
    norms = np.linalg.norm(np.atleast_2d(v), axis=-1)
    if np.any(norms > sp.delta2 * (1 + 1e-9)):
        raise ValueError(f"input norm {norms.max():.6g} exceeds delta2={sp.delta2}")
    w = v + sp.delta2
    scaled = w * sp.g / (2.0 * sp.delta2)
    wbar = np.floor(scaled)
    frac = np.clip(scaled - wbar, 0.0, 1.0)
    rounding = rng.binomial(1, frac, size=v.shape)
    blanket = rng.binomial(sp.b, sp.p, size=v.shape)
    ones = (wbar.astype(np.int64) + rounding + blanket).astype(np.int64)
    if not materialize:
        return ones
    width = sp.g + sp.b
    return (np.arange(width) < ones[..., None]).astype(np.uint8)


def shuffle_permute(client_bits, rng) -> np.ndarray:
    """Shuffler: concatenate every client's bits per coordinate and permute uniformly.

    ``client_bits`` is a sequence of (s, g+b) arrays, one per client (or an
    (n, s, g+b) array).  Returns (s, n*(g+b)).
    """
    bits = np.asarray(client_bits)
    if bits.ndim == 2:
        bits = bits[None]
    n, s, width = bits.shape
    flat = np.transpose(bits, (1, 0, 2)).reshape(s, n * width)
    out = np.empty_like(flat)
    for j in range(s):
        out[j] = flat[j][rng.permutation(flat.shape[1])]
    return out


def shuffle_analyze(shuffled, sp: ShuffleParams, n: int | None = None) -> AggregatedFeedback:
    """Analyzer: debias the per-coordinate bit sums into an estimate of the average.

    ``shuffled`` is either the (s, n*(g+b)) bit matrix or, in count mode, the
    length-s vector of one-bit totals (then ``n`` defaults to ``sp.n``).
    """
    arr = np.asarray(shuffled)
    width = sp.g + sp.b
    n = sp.n if n is None else n
    if arr.ndim == 2:
        if arr.shape[1] != width * n:
            raise ValueError(f"expected {width * n} bits per coordinate, got {arr.shape[1]}")
        if np.any((arr != 0) & (arr != 1)):
            raise ValueError("shuffled messages must be bits")
        totals = arr.sum(axis=1)
    else:
        totals = arr
        if np.any(totals < 0) or np.any(totals > width * n):
            raise ValueError("bit counts inconsistent with (g+b)*n messages")
    z = (2.0 * sp.delta2 / (sp.g * n)) * (totals - sp.b * n * sp.p)
    return AggregatedFeedback(z - sp.delta2)


def shuffle_privatize(reports, params: PrivacyParams, rng, materialize: bool = False):
    """Run the full shuffle pipeline; returns (feedback, ShuffleParams)."""
    r = _check_reports(reports, params.B)
    n, s = r.shape
    sp = shuffle_params(params.epsilon, params.delta, s, n, delta2=params.B * math.sqrt(s))
    if materialize:
        bits = shuffle_randomize(r, sp, rng, materialize=True)
        return shuffle_analyze(shuffle_permute(bits, rng), sp), sp
    # the analyzer only sees the sum, which the permutation preserves
    ones = shuffle_randomize(r, sp, rng)
    return shuffle_analyze(ones.sum(axis=0), sp), sp


# -- scalar shuffle sum protocol (DP-PE) ---------------------------------------

@dataclass(frozen=True)
class ScalarShuffleParams:
    g: int
    b: int
    p: float
    n: int
    B: float

    @property
    def bits_per_client(self) -> int:
        return self.g + self.b


def scalar_shuffle_params(epsilon: float, delta: float, B: float, n: int) -> ScalarShuffleParams:
    """Parameters for summing ``n`` scalars in [-B, B]; the protocol runs at ``epsilon / 2``."""
    if not 0 < epsilon < 30:
        raise ValueError(f"epsilon={epsilon} violates 0 < epsilon < 30")
    if not 0 < delta < 0.5:
        raise ValueError(f"delta={delta} violates 0 < delta < 1/2")
    if n < 1:
        raise ValueError("need at least one value")
    half = epsilon / 2.0
    g = max(1, math.ceil(2.0 * B * math.sqrt(n)))
    log_term = math.log(2.0 / delta)
    b = math.ceil(180.0 * g * g * log_term / (half ** 2 * n))
    p = 90.0 * g * g * log_term / (b * half ** 2 * n)
    return ScalarShuffleParams(g, b, p, n, B)


def scalar_shuffle_variance_bound(epsilon: float, delta: float, B: float) -> float:
    """Variance bound of the scalar-sum estimator.

    Rounding contributes at most ``n B^2 / g^2 <= 1/4``; the blanket at most
    ``1440 B^2 ln(2/delta) / epsilon^2``.
    """
    return 0.25 + 1440.0 * B * B * math.log(2.0 / delta) / epsilon ** 2


def scalar_shuffle_sum(values, epsilon: float, delta: float, B: float, rng,
                       materialize: bool = False, params: ScalarShuffleParams | None = None) -> float:
    """Private estimate of ``sum(values)`` for values in [-B, B].

    ``params`` overrides the derived encoding, e.g. to switch the blanket off.
    """
    y = np.asarray(values, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("need at least one value")
    if np.any(np.abs(y) > B * (1 + 1e-12)):
        raise ValueError(f"values must lie in [-{B}, {B}]")
    sp = scalar_shuffle_params(epsilon, delta, B, y.size) if params is None else params
    if sp.n != y.size:
        raise ValueError(f"params are for {sp.n} values, got {y.size}")
    scaled = (y + B) * sp.g / (2.0 * B)
    ybar = np.floor(scaled)
    rounding = rng.binomial(1, np.clip(scaled - ybar, 0.0, 1.0), size=y.shape)
    blanket = rng.binomial(sp.b, sp.p, size=y.shape)
    ones = ybar.astype(np.int64) + rounding + blanket
    if materialize:
        bits = (np.arange(sp.g + sp.b) < ones[:, None]).astype(np.uint8).ravel()
        total = int(bits[rng.permutation(bits.size)].sum())
    else:
        total = int(ones.sum())
    z = (2.0 * B / sp.g) * (total - y.size * sp.b * sp.p)
    return float(z - y.size * B)


# -- confidence-noise terms --------------------------------------------------

def shuffle_sigma(B: float, s: int, n_clients: int, epsilon: float, delta: float) -> float:
    """Concrete per-coordinate std of the shuffle average, from the 360 variance bound."""
    eps_hat = shuffle_eps_hat(epsilon, delta)
    return math.sqrt(360.0) * B * math.sqrt(s) * math.sqrt(math.log(4.0 * s / delta)) / (n_clients * eps_hat)


def sigma_n(model, *, s: int, n_clients: int, d: int, S: int, params: PrivacyParams) -> float:
    """Privacy term of the DP-DPE confidence width."""
    model = PrivacyModel.parse(model)
    if model is PrivacyModel.NONE:
        return 0.0
    B, eps, dl = params.B, params.epsilon, params.delta
    if model is PrivacyModel.CENTRAL:
        return 2.0 * sigma_central(B, s, dl, eps, n_clients) * math.sqrt(S * d)
    if model is PrivacyModel.LOCAL:
        return 2.0 * sigma_local(B, s, dl, eps) * math.sqrt(S * d / n_clients)
    return 2.0 * shuffle_sigma(B, s, n_clients, eps, dl) * math.sqrt(S * d)


def sigma_n_pe(model, *, s: int, h: int, d: int, params: PrivacyParams) -> float:
    """Privacy term of the DP-PE confidence width."""
    model = PrivacyModel.parse(model)
    if model is PrivacyModel.NONE:
        return 0.0
    B, eps, dl = params.B, params.epsilon, params.delta
    if model is PrivacyModel.CENTRAL:
        return 2.0 * d * sigma_scalar(B, dl, eps) * math.sqrt(s) / h
    if model is PrivacyModel.LOCAL:
        return 2.0 * d * sigma_scalar(B, dl, eps) * math.sqrt(2.0 * s / h)
    sigma_ns = math.sqrt(scalar_shuffle_variance_bound(eps, dl, B))
    return 2.0 * d * sigma_ns * math.sqrt(s) / h


# -- privatizer objects used by the learners ---------------------------------

class Privatizer:
    """Non-private aggregation; base class for the DP variants."""

    model = PrivacyModel.NONE
    comm_unit = "reals"

    def __init__(self, params: PrivacyParams | None = None):
        self.params = params if params is not None else PrivacyParams()

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"

    def average(self, reports, rng) -> tuple[AggregatedFeedback, int]:
        """Aggregate (n, s) client reports; returns (feedback, units per coordinate per client)."""
        r = _check_reports(reports)
        return AggregatedFeedback(r.mean(axis=0)), 1

    def sum(self, values, rng) -> tuple[float, int]:
        """Aggregate scalar observations; returns (private sum, units per client)."""
        y = np.asarray(values, dtype=float)
        if y.size == 0:
            raise ValueError("need at least one value")
        return float(y.sum()), 1

    def sigma_n(self, *, s: int, n_clients: int, d: int, S: int) -> float:
        return sigma_n(self.model, s=s, n_clients=n_clients, d=d, S=S, params=self.params)

    def sigma_n_pe(self, *, s: int, h: int, d: int) -> float:
        return sigma_n_pe(self.model, s=s, h=h, d=d, params=self.params)


class CentralPrivatizer(Privatizer):
    model = PrivacyModel.CENTRAL

    def average(self, reports, rng):
        return central_privatize(reports, self.params, rng), 1

    def sum(self, values, rng):
        y = np.asarray(values, dtype=float)
        if y.size == 0:
            raise ValueError("need at least one value")
        sigma = sigma_scalar(self.params.B, self.params.delta, self.params.epsilon)
        return float(y.sum() + rng.normal(0.0, sigma)), 1


class LocalPrivatizer(Privatizer):
    model = PrivacyModel.LOCAL

    def average(self, reports, rng):
        return local_privatize(reports, self.params, rng), 1

    def sum(self, values, rng):
        y = np.asarray(values, dtype=float).ravel()
        if y.size == 0:
            raise ValueError("need at least one value")
        sigma = sigma_scalar(self.params.B, self.params.delta, self.params.epsilon)
        return float((y + rng.normal(0.0, sigma, size=y.size)).sum()), 1


class ShufflePrivatizer(Privatizer):
    model = PrivacyModel.SHUFFLE
    comm_unit = "bits"

    def __init__(self, params: PrivacyParams | None = None, materialize: bool = False):
        super().__init__(params)
        self.materialize = materialize

    def average(self, reports, rng):
        feedback, sp = shuffle_privatize(reports, self.params, rng, materialize=self.materialize)
        return feedback, sp.bits_per_coordinate

    def sum(self, values, rng):
        y = np.asarray(values, dtype=float).ravel()
        p = self.params
        total = scalar_shuffle_sum(y, p.epsilon, p.delta, p.B, rng, materialize=self.materialize)
        return total, scalar_shuffle_params(p.epsilon, p.delta, p.B, y.size).bits_per_client


_PRIVATIZERS = {
    PrivacyModel.NONE: Privatizer,
    PrivacyModel.CENTRAL: CentralPrivatizer,
    PrivacyModel.LOCAL: LocalPrivatizer,
    PrivacyModel.SHUFFLE: ShufflePrivatizer,
}


def make_privatizer(params: PrivacyParams, materialize: bool = False) -> Privatizer:
    cls = _PRIVATIZERS[params.model]
    if cls is ShufflePrivatizer:
        return cls(params, materialize=materialize)
    return cls(params)
