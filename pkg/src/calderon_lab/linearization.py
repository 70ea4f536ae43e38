"""Mixed derivatives of the DN map in the data amplitudes, and the
set-partition bookkeeping of the linearized hierarchy.

``D^m Lambda(f_1, ..., f_m)`` is the derivative of ``Lambda(sum eps_l f_l)``
in ``eps_1 ... eps_m`` at 0. It is estimated by the tensor central
difference on the ``2^m`` sign patterns. Two details keep the estimate
clean:

* each probe is normalized to sup-norm 1 and the result is multiplied back
  by the product of the norms, so the output is exactly multilinear in the
  probe amplitudes;
* for ``m >= 2`` only the nonlinear remainder of each measurement enters,
  because the mixed difference of the linear part vanishes identically and
  would otherwise contribute pure roundoff amplified by ``eps^-m``.

Sums over sign patterns and probes use correctly rounded summation, so the
result does not depend on the order in which probes are listed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dn_map import BoundaryFunction, DnOracle
from .errors import ConfigError, DependencyError, PreconditionError
from .probes import combination_ledger

MAX_ORDER = 5
BELL = (1, 1, 2, 5, 15, 52, 203, 877, 4140)


def default_eps(delta: float, m: int, fraction: float = 0.2) -> float:
    """Step for normalized probes: ``fraction * delta / m`` keeps every stencil
    point below ``delta`` in sup-norm."""
    return fraction * delta / m


def _fsum_rows(rows: np.ndarray) -> np.ndarray:
    """Correctly rounded sum over axis 0 of a 2-D real array."""
    return np.array([math.fsum(col) for col in rows.T])


@dataclass(frozen=True, eq=False)
class LinearizedDerivative:
    """Estimate of ``D^m Lambda`` on the oracle's measurement trace."""

    order: int
    probes: tuple[BoundaryFunction, ...]
    scales: tuple[float, ...]
    values: BoundaryFunction
    eps: float

    def integrate(self, weight: np.ndarray | None = None):
        """Boundary quadrature of the derivative (times ``weight``)."""
        w = self.values.trace.neumann_weights
        vals = self.values.values if weight is None else self.values.values * weight
        if np.iscomplexobj(vals):
            return complex(math.fsum(w * vals.real), math.fsum(w * vals.imag))
        return math.fsum(w * vals)

    def to_rows(self):
        return self.values.to_rows()

    def write_csv(self, path) -> None:
        from .io import write_csv

        write_csv(path, ("arclength", "value"), self.to_rows())


def mixed_derivative(
    oracle: DnOracle, probes, eps: float | None = None
) -> LinearizedDerivative:
    """Tensor central difference of the DN map in the probe amplitudes.

    Parameters
    ----------
    oracle : DnOracle
    probes : sequence of BoundaryFunction
        Real Dirichlet data, ``1 <= m <= 5`` of them.
    eps : float, optional
        Step applied to the sup-normalized probes; ``m * eps`` must not
        exceed the solver's ``delta``. Defaults to :func:`default_eps`.
    """
    probes = tuple(probes)
    m = len(probes)
    if m == 0:
        raise ConfigError("at least one probe is required", key="probes")
    if m > MAX_ORDER:
        raise ConfigError(f"order m={m} exceeds the cost guard {MAX_ORDER}", key="m")
    delta = oracle.cfg.delta
    if eps is None:
        eps = default_eps(delta, m)
    if not eps > 0:
        raise ConfigError("eps must be positive", key="eps")
    if m * eps > delta * (1 + 1e-12):
        raise PreconditionError(f"m*eps = {m * eps:g} exceeds delta = {delta:g}", key="eps")

    data = [oracle._data(f) for f in probes]
    scales = tuple(f.sup_norm() for f in data)
    trace = oracle.trace
    if min(scales) == 0.0:
        return LinearizedDerivative(m, probes, scales, BoundaryFunction(trace, np.zeros(len(trace))), eps)
    unit = np.array([f.values / s for f, s in zip(data, scales)])

    rows = []
    for sigma in itertools.product((1.0, -1.0), repeat=m):
        terms = unit * (eps * np.array(sigma))[:, None]
        g = BoundaryFunction(trace, _fsum_rows(terms))
        lin, rem = oracle.measure_split(g)
        vals = rem.values if m >= 2 else lin.values + rem.values
        rows.append(math.prod(sigma) * vals)
    total = _fsum_rows(np.array(rows))
    values = total / (2 * eps) ** m * math.prod(scales)
    return LinearizedDerivative(m, probes, scales, BoundaryFunction(trace, values), eps)


def complex_mixed_derivative(oracle: DnOracle, probes, eps: float | None = None) -> BoundaryFunction:
    """Complex-multilinear ``D^m Lambda`` for complex probes.

    Each probe is split into real and imaginary parts and the ``2^m`` real
    derivatives are recombined with the coefficients of
    :func:`~calderon_lab.probes.combination_ledger`. Slots whose data is
    real skip their (zero) imaginary branch.
    """
    probes = tuple(probes)
    m = len(probes)
    ledger = combination_ledger(m)
    real_slots = [k for k, f in enumerate(probes) if not f.is_complex or not np.any(np.imag(f.values))]
    parts = [{"re": f.real, "im": f.imag} for f in probes]
    trace = oracle.trace
    re_acc, im_acc = [], []
    for entry in ledger.restricted(real_slots):
        d = mixed_derivative(oracle, [parts[k][p] for k, p in enumerate(entry.parts)], eps).values.values
        c = entry.coefficient
        re_acc.append(c.real * d)
        im_acc.append(c.imag * d)
    values = _fsum_rows(np.array(re_acc)) + 1j * _fsum_rows(np.array(im_acc))
    return BoundaryFunction(trace, values)


# ---------------------------------------------------------------------------
# Set partitions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainTerm:
    """One set partition of ``{1..m}`` in the Faa di Bruno expansion.

    Contributes ``d_z^p a(x, u) * prod_B d^{|B|} u / d eps_B``.
    """

    blocks: tuple[tuple[int, ...], ...]
    multiplicity: int = 1

    @property
    def order(self) -> int:
        return len(self.blocks)

    def to_json(self) -> dict:
        return {"blocks": [list(b) for b in self.blocks], "order": self.order, "multiplicity": self.multiplicity}


def _restricted_growth_strings(m: int):
    """All ``a`` with ``a[0] = 0`` and ``a[i] <= 1 + max(a[:i])``, lexicographic."""
    a = [0] * m

    def rec(i, top):
        if i == m:
            yield tuple(a)
            return
        for v in range(top + 2):
            a[i] = v
            yield from rec(i + 1, max(top, v))

    if m == 0:
        yield ()
        return
    yield from rec(1, 0)


def chain_terms(m: int) -> list[ChainTerm]:
    if not 1 <= m <= 8:
        raise ConfigError(f"order m={m} outside [1, 8]", key="m")
    terms = []
    for rgs in _restricted_growth_strings(m):
        blocks = [[] for _ in range(max(rgs) + 1)]
        for idx, b in enumerate(rgs, start=1):
            blocks[b].append(idx)
        terms.append(ChainTerm(tuple(tuple(b) for b in blocks)))
    return terms


def chain_terms_json(m: int) -> list[dict]:
    return [t.to_json() for t in chain_terms(m)]


def block_key(block, labels=None) -> tuple:
    """Multiset key of a block: the sorted probe labels of its slots."""
    if labels is None:
        return tuple(sorted(block))
    return tuple(sorted((labels[i - 1] for i in block), key=repr))


def _coefficient(lower_coeffs, k: int):
    if hasattr(lower_coeffs, "coefficients"):
        if k in lower_coeffs.coefficients or k <= lower_coeffs.max_order:
            return lower_coeffs.q(k)
        raise DependencyError(f"q_{k} has not been recovered", key=f"q{k}")
    if k not in lower_coeffs:
        raise DependencyError(f"q_{k} has not been recovered", key=f"q{k}")
    return lower_coeffs[k]


def partition_sum(terms, fields, coeffs, labels=None, min_order: int = 2, max_order: int | None = None):
    """``sum q_p prod_B w^(B)`` over ``terms`` with ``min_order <= p <= max_order``.

    Terms are summed in the order of their sorted multiset keys, so any
    relabeling that permutes probes gives a bit-identical field.
    """
    keyed = []
    for t in terms:
        if t.order < min_order or (max_order is not None and t.order > max_order):
            continue
        keys = sorted((block_key(b, labels) for b in t.blocks), key=repr)
        keyed.append((repr(keys), t.order, keys))
    keyed.sort(key=lambda x: x[0])
    total = None
    for _, p, keys in keyed:
        try:
            prod = fields[keys[0]]
            for k in keys[1:]:
                prod = prod * fields[k]
        except KeyError as exc:
            raise DependencyError(f"missing lower-order field w{exc.args[0]}", key=str(exc.args[0])) from None
        term = _coefficient(coeffs, p) * prod
        total = term if total is None else total + term
    return total


def assemble_RN(terms, lower_fields, lower_coeffs, labels=None):
    """Lower-order part of the order-``m`` hierarchy source.

    ``sum_{terms with 2 <= p <= m-1} q_p prod_B w^(B)``; the one-block term
    drops because ``q_1 = 0`` and the all-singleton term carries the unknown
    top coefficient.

    Parameters
    ----------
    terms : list of ChainTerm
        Usually ``chain_terms(m)``.
    lower_fields : mapping
        ``block_key(B, labels) -> field`` for every block that occurs;
        singletons map to the probe fields ``v``.
    lower_coeffs : Nonlinearity or mapping ``k -> q_k``
    labels : sequence, optional
        Probe label of each slot; repeated labels share fields.
    """
    terms = list(terms)
    if not terms:
        raise ConfigError("no chain terms given", key="terms")
    m = max(i for t in terms for b in t.blocks for i in b)
    try:
        q1 = _coefficient(lower_coeffs, 1)
    except DependencyError:
        q1 = 0.0
    if np.any(q1):
        raise PreconditionError("assemble_RN requires q_1 = 0")
    total = partition_sum(terms, lower_fields, lower_coeffs, labels, 2, m - 1)
    if total is None:
        sample = next(iter(lower_fields.values()), 0.0)
        return np.zeros_like(np.asarray(sample, dtype=np.result_type(np.asarray(sample), float)))
    return total
