"""Finite-state jump processes with additive path observables.

A model is a rate matrix ``W(x, y)`` on the states ``0..S-1`` together with
an observable made of jump increments ``g(x, y)`` and an occupation density
``h(x)``.  Rates are held in CSR form; the dense view is built on demand
(and eagerly for small models, where the oracle needs it every time).
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numba
import numpy as np
from scipy import sparse

from .errors import BadParams, MalformedSpec, UnknownModel, ZeroEscapeRate
from .streams import as_generator

DENSE_LIMIT = 64


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def row_sums(indptr: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Row sums of a CSR matrix in a fixed summation order.

    Escape rates of the base and the tilted dynamics both go through here,
    so that at zero tilt they agree bit for bit.
    """
    out = np.zeros(len(indptr) - 1)
    for x in range(len(out)):
        s = 0.0
        for v in data[indptr[x]:indptr[x + 1]]:
            s += v
        out[x] = s
    return out


def row_cumulative(indptr: np.ndarray, data: np.ndarray) -> np.ndarray:
    """Per-row cumulative jump probabilities, last entry of each row exactly 1."""
    cum = np.empty_like(data, dtype=float)
    for x in range(len(indptr) - 1):
        lo, hi = indptr[x], indptr[x + 1]
        if hi == lo:
            continue
        c = np.cumsum(data[lo:hi])
        cum[lo:hi] = c / c[-1]
        cum[hi - 1] = 1.0
    return cum


@dataclass(frozen=True, eq=False)
class JumpModel:
    """Validated jump kernel plus additive observable.

    Use :func:`build_model`, :func:`registry_model` or :func:`read_model`
    rather than constructing this directly.
    """

    size: int
    rate_csr: sparse.csr_matrix
    g_csr: sparse.csr_matrix
    stay_h: np.ndarray
    escape: np.ndarray = field(init=False)
    name: str = "custom"

    def __post_init__(self):
        csr = self.rate_csr
        esc = row_sums(csr.indptr, csr.data)
        zero = np.flatnonzero(esc <= 0.0)
        if zero.size:
            raise ZeroEscapeRate(f"states without outgoing rate: {zero.tolist()}")
        object.__setattr__(self, "escape", _readonly(esc))
        object.__setattr__(self, "stay_h", _readonly(np.asarray(self.stay_h, dtype=float)))
        if self.size <= DENSE_LIMIT:
            _ = self.rate

    @cached_property
    def rate(self) -> np.ndarray:
        return _readonly(self.rate_csr.toarray())

    @cached_property
    def jump_g(self) -> np.ndarray:
        return _readonly(self.g_csr.toarray())

    @cached_property
    def edge_g(self) -> np.ndarray:
        """g evaluated on the non-zero rate entries, aligned with ``rate_csr.data``."""
        csr = self.rate_csr
        rows = np.repeat(np.arange(self.size), np.diff(csr.indptr))
        return _readonly(np.asarray(self.g_csr[rows, csr.indices]).ravel().astype(float))

    @cached_property
    def jump_cumulative(self) -> np.ndarray:
        return _readonly(row_cumulative(self.rate_csr.indptr, self.rate_csr.data))

    def generator_matrix(self) -> np.ndarray:
        """Dense generator: off-diagonal rates, rows summing to zero."""
        m = self.rate.copy()
        m[np.diag_indices(self.size)] = -self.escape
        return m

    def __repr__(self):
        return f"JumpModel(name={self.name!r}, size={self.size}, edges={self.rate_csr.nnz})"


def _triples(entries, size, what, allow_negative):
    out = {}
    for entry in entries:
        try:
            x, y, v = entry
            x, y, v = int(x), int(y), float(v)
        except (TypeError, ValueError) as exc:
            raise MalformedSpec(f"bad {what} entry {entry!r}") from exc
        if not (0 <= x < size and 0 <= y < size):
            raise MalformedSpec(f"{what} entry {entry!r}: state out of range [0, {size})")
        if x == y:
            raise MalformedSpec(f"{what} entry {entry!r}: diagonal entries are not allowed")
        if not math.isfinite(v) or (v < 0 and not allow_negative):
            raise MalformedSpec(f"{what} entry {entry!r}: invalid value")
        if (x, y) in out:
            raise MalformedSpec(f"{what} entry ({x}, {y}) given twice")
        out[x, y] = v
    return out


def _to_csr(entries: Mapping, size: int) -> sparse.csr_matrix:
    items = [(x, y, v) for (x, y), v in entries.items() if v != 0.0]
    if items:
        r, c, v = map(np.asarray, zip(*items))
    else:
        r = c = np.zeros(0, dtype=int)
        v = np.zeros(0)
    m = sparse.csr_matrix((v.astype(float), (r, c)), shape=(size, size))
    m.sort_indices()
    return m


def _cited_size(*groups):
    top = -1
    for g in groups:
        for e in g:
            try:
                top = max(top, int(e[0]), *(int(s) for s in e[1:-1]))
            except (TypeError, ValueError, IndexError) as exc:
                raise MalformedSpec(f"bad entry {e!r}") from exc
    return top + 1


def build_model(rates: Iterable, g: Iterable = (), h: Iterable = (), size: int | None = None,
                name: str = "custom") -> JumpModel:
    """Build a model from ``(x, y, rate)`` and ``(x, y, g)`` triples and ``(x, h)`` pairs.

    Missing entries are zero.  The number of states is one more than the
    largest state cited unless ``size`` is given.
    """
    rates, g, h = list(rates), list(g), list(h)
    if size is None:
        size = _cited_size(rates, g, h)
    if size < 1:
        raise MalformedSpec("model has no states")
    r = _triples(rates, size, "rate", allow_negative=False)
    gg = _triples(g, size, "g", allow_negative=True)
    hv = np.zeros(size)
    seen = set()
    for entry in h:
        try:
            x, v = int(entry[0]), float(entry[1])
            if len(entry) != 2:
                raise ValueError
        except (TypeError, ValueError, IndexError) as exc:
            raise MalformedSpec(f"bad h entry {entry!r}") from exc
        if not 0 <= x < size or not math.isfinite(v) or x in seen:
            raise MalformedSpec(f"bad h entry {entry!r}")
        seen.add(x)
        hv[x] = v
    return JumpModel(size, _to_csr(r, size), _to_csr(gg, size), hv, name=name)


def model_from_dense(rate, g=None, h=None, name: str = "custom") -> JumpModel:
    rate = np.asarray(rate, dtype=float)
    s = rate.shape[0]
    if rate.shape != (s, s):
        raise MalformedSpec("rate matrix must be square")
    if np.any(np.diag(rate) != 0):
        raise MalformedSpec("diagonal rate entries are not allowed")
    g = np.zeros((s, s)) if g is None else np.asarray(g, dtype=float)
    h = np.zeros(s) if h is None else np.asarray(h, dtype=float)
    if np.any(np.diag(g) != 0):
        raise MalformedSpec("diagonal g entries are not allowed")
    off = ~np.eye(s, dtype=bool)
    rt = [(x, y, rate[x, y]) for x, y in zip(*np.nonzero(off & (rate != 0)))]
    gt = [(x, y, g[x, y]) for x, y in zip(*np.nonzero(off & (g != 0)))]
    return build_model(rt, gt, list(enumerate(h)), size=s, name=name)


# --- registry -----------------------------------------------------------------

def _positive(params, key, default):
    v = float(params.get(key, default))
    if not (math.isfinite(v) and v > 0):
        raise BadParams(f"{key} must be a positive number, got {v}")
    return v


def _state_count(params, default, minimum):
    v = params.get("S", default)
    try:
        s = int(v)
    except (TypeError, ValueError) as exc:
        raise BadParams(f"S must be an integer, got {v!r}") from exc
    if s != float(v) or s < minimum:
        raise BadParams(f"S must be an integer >= {minimum}, got {v!r}")
    return s


def _two_state(params):
    a = _positive(params, "a", 1.0)
    b = _positive(params, "b", 1.0)
    return build_model([(0, 1, a), (1, 0, b)], [(0, 1, 1.0), (1, 0, 1.0)], size=2,
                       name=f"two_state(a={a:g},b={b:g})")


def _ring_current(params):
    s = _state_count(params, 6, 3)
    p = float(params.get("p", 0.5))
    q = float(params.get("q", 0.5))
    if not (math.isfinite(p) and math.isfinite(q)) or p < 0 or q < 0 or p + q <= 0:
        raise BadParams("ring_current needs p, q >= 0 with p + q > 0")
    rates, g = [], []
    for x in range(s):
        if p > 0:
            rates.append((x, (x + 1) % s, p))
        if q > 0:
            rates.append((x, (x - 1) % s, q))
        g += [(x, (x + 1) % s, 1.0), (x, (x - 1) % s, -1.0)]
    return build_model(rates, g, size=s, name=f"ring_current(S={s},p={p:g},q={q:g})")


def _birth_death(params):
    s = _state_count(params, 5, 2)
    up = _positive(params, "up", 1.0)
    down = _positive(params, "down", 2.0)
    rates = [(x, x + 1, up) for x in range(s - 1)] + [(x, x - 1, down) for x in range(1, s)]
    h = [(x, float(x)) for x in range(s)]
    return build_model(rates, (), h, size=s, name=f"birth_death(S={s},up={up:g},down={down:g})")


REGISTRY = {
    "two_state": _two_state,
    "ring_current": _ring_current,
    "birth_death": _birth_death,
}


def registry_model(name: str, **params) -> JumpModel:
    """Deterministic built-in model families.

    ``two_state(a, b)``: rates 0->1 = a, 1->0 = b, every jump counts +1.
    ``ring_current(S, p, q)``: clockwise rate p (g=+1), counter-clockwise q (g=-1).
    ``birth_death(S, up, down)``: reflecting walk, h(x) = x, no jump increments.
    """
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {sorted(REGISTRY)}") from None
    known = {"two_state": {"a", "b"}, "ring_current": {"S", "p", "q"},
             "birth_death": {"S", "up", "down"}}[name]
    extra = set(params) - known
    if extra:
        raise BadParams(f"unexpected parameters for {name}: {sorted(extra)}")
    return factory(params)


def parse_model_ref(ref: str) -> JumpModel:
    """``name`` or ``name:key=value,key=value`` -> registry model."""
    name, _, rest = ref.partition(":")
    params = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise BadParams(f"expected key=value, got {item!r}")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise BadParams(f"parameter {key!r} is not a number: {value!r}") from None
    return registry_model(name.strip(), **params)


# --- model files --------------------------------------------------------------

def parse_model_text(text: str, name: str = "file") -> JumpModel:
    """Parse the sectioned ``[rates]`` / ``[g]`` / ``[h]`` text format."""
    sections = {"rates": [], "g": [], "h": []}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            key = line.strip("[]").strip().lower()
            if key not in sections or not line.endswith("]"):
                raise MalformedSpec(f"line {lineno}: unknown section {line!r}")
            current = key
            continue
        if current is None:
            raise MalformedSpec(f"line {lineno}: entry outside of a section")
        parts = line.split()
        want = 2 if current == "h" else 3
        if len(parts) != want:
            raise MalformedSpec(f"line {lineno}: expected {want} fields in [{current}]")
        try:
            entry = tuple(int(p) for p in parts[:-1]) + (float(parts[-1]),)
        except ValueError:
            raise MalformedSpec(f"line {lineno}: cannot parse {line!r}") from None
        sections[current].append(entry)
    return build_model(sections["rates"], sections["g"], sections["h"], name=name)


def format_model_text(model: JumpModel) -> str:
    buf = io.StringIO()
    buf.write(f"# {model.name}: {model.size} states\n[rates]\n")
    for mat, head in ((model.rate_csr, None), (model.g_csr, "[g]")):
        if head:
            buf.write(head + "\n")
        coo = mat.tocoo()
        for x, y, v in sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist())):
            buf.write(f"{x} {y} {v!r}\n")
    buf.write("[h]\n")
    for x, v in enumerate(model.stay_h.tolist()):
        if v != 0.0:
            buf.write(f"{x} {v!r}\n")
    return buf.getvalue()


def read_model(path) -> JumpModel:
    path = Path(path)
    return parse_model_text(path.read_text(encoding="utf-8"), name=path.stem)


def write_model(model: JumpModel, path) -> None:
    Path(path).write_text(format_model_text(model), encoding="utf-8")


# --- path simulation ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathSample:
    states: np.ndarray
    jump_times: np.ndarray
    horizon: float
    additive_value: float

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def recompute_additive(self, model: JumpModel) -> float:
        """T * A_T evaluated afresh from the stored path."""
        s, t = self.states, self.jump_times
        g = model.jump_g[s[:-1], s[1:]].sum() if len(t) else 0.0
        edges = np.concatenate(([0.0], t, [self.horizon]))
        return float(g + np.dot(model.stay_h[s], np.diff(edges)))


@numba.njit(cache=True, inline="always")
def _pick(cum, lo, hi, u):
    # first index in [lo, hi) with cum[idx] > u; cum[hi - 1] == 1 > u
    hi -= 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@numba.njit(cache=True, nogil=True)
def _path_kernel(rng, x0, horizon, indptr, indices, cum, escape, edge_g, h, record):
    cap = 64 if record else 1
    states = np.empty(cap, np.int64)
    times = np.empty(cap, np.float64)
    states[0] = x0
    n = 0
    x = x0
    t = 0.0
    jumps = 0.0
    # h-integral accumulated over runs of constant h, so constant h is exact
    h_int = 0.0
    h_cur = h[x0]
    h_since = 0.0
    while True:
        t_next = t + rng.exponential(1.0) / escape[x]
        if t_next > horizon:
            break
        t = t_next
        e = _pick(cum, indptr[x], indptr[x + 1], rng.random())
        y = indices[e]
        jumps += edge_g[e]
        if h[y] != h_cur:
            h_int += h_cur * (t - h_since)
            h_cur = h[y]
            h_since = t
        x = y
        n += 1
        if record:
            if n + 1 > cap:
                cap *= 2
                s2 = np.empty(cap, np.int64)
                s2[:n] = states[:n]
                t2 = np.empty(cap, np.float64)
                t2[:n - 1] = times[:n - 1]
                states, times = s2, t2
            states[n] = y
            times[n - 1] = t
    h_int += h_cur * (horizon - h_since)
    return states[:n + 1], times[:n], jumps + h_int, n


@numba.njit(cache=True, nogil=True)
def _additive_batch(rng, x0s, horizon, indptr, indices, cum, escape, edge_g, h):
    out = np.empty(len(x0s))
    for r in range(len(x0s)):
        _, _, v, _ = _path_kernel(rng, x0s[r], horizon, indptr, indices, cum, escape, edge_g, h, False)
        out[r] = v
    return out


def _kernel_args(model: JumpModel):
    csr = model.rate_csr
    return (csr.indptr.astype(np.int64), csr.indices.astype(np.int64), model.jump_cumulative,
            model.escape, model.edge_g, model.stay_h)


def simulate_path(model: JumpModel, x0: int, horizon: float, rng) -> PathSample:
    """Exact event-driven sample path on ``[0, horizon]``."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not 0 <= int(x0) < model.size:
        raise ValueError(f"initial state {x0} out of range")
    states, times, value, _ = _path_kernel(as_generator(rng), int(x0), float(horizon),
                                           *_kernel_args(model), True)
    return PathSample(_readonly(states.copy()), _readonly(times.copy()), float(horizon), float(value))


def simulate_additive(model: JumpModel, x0s, horizon: float, rng) -> np.ndarray:
    """``T * A_T`` for one path per entry of ``x0s`` (no path storage)."""
    x0s = np.asarray(x0s, dtype=np.int64)
    return _additive_batch(as_generator(rng), x0s, float(horizon), *_kernel_args(model))
