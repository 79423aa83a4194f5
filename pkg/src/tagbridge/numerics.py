"""Shared numerical primitives: activations, losses, seeded RNG streams,
and a finite-difference gradient checker.

Everything runs in 64-bit floats. All functions are pure; the only stateful
object is the optional simplex watch used to instrument probability outputs
during long runs.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

LOG_EPS = 1e-12  # clamp applied before every log of a probability


# ---------------------------------------------------------------------------
# Simplex watch: opt-in instrumentation of every probability vector produced
# by softmax / segment_softmax. Used by the acceptance suite to assert the
# sum-to-one invariant across a full training run.
# ---------------------------------------------------------------------------

class SimplexWatch:
    def __init__(self):
        self.count = 0
        self.max_deviation = 0.0

    def record(self, sums: np.ndarray) -> None:
        dev = float(np.max(np.abs(sums - 1.0)))
        self.count += int(np.size(sums))
        if dev > self.max_deviation:
            self.max_deviation = dev


_ACTIVE_WATCH: SimplexWatch | None = None


@contextmanager
def simplex_watch():
    """Record |sum - 1| of every simplex vector produced while active."""
    global _ACTIVE_WATCH
    watch = SimplexWatch()
    prev = _ACTIVE_WATCH
    _ACTIVE_WATCH = watch
    try:
        yield watch
    finally:
        _ACTIVE_WATCH = prev


def _watch_sums(sums: np.ndarray) -> None:
    if _ACTIVE_WATCH is not None:
        _ACTIVE_WATCH.record(np.asarray(sums, dtype=np.float64))


# ---------------------------------------------------------------------------
# Activations and losses
# ---------------------------------------------------------------------------

def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax: empty input")
    if not np.all(np.isfinite(v)):
        raise ValueError("softmax: non-finite input")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    _watch_sums(np.sum(out, axis=axis))
    return out


def segment_softmax(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Softmax over contiguous segments of a flat vector.

    `offsets` holds the start index of each segment; segments are
    [offsets[i], offsets[i+1]) with the last running to the end. Segments
    must be non-empty.
    """
    x = np.asarray(x, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.intp)
    if x.size == 0:
        raise ValueError("segment_softmax: empty input")
    seg_max = np.maximum.reduceat(x, offsets)
    lengths = np.diff(np.append(offsets, x.size))
    e = np.exp(x - np.repeat(seg_max, lengths))
    seg_sum = np.add.reduceat(e, offsets)
    out = e / np.repeat(seg_sum, lengths)
    _watch_sums(np.add.reduceat(out, offsets))
    return out


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v)
    return shifted - np.log(np.sum(np.exp(shifted)))


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """-log softmax(logits)[label]."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[-1]):
        raise ValueError(f"cross_entropy: label {label} out of range for {logits.shape[-1]} classes")
    return float(-log_softmax(logits)[label])


def cross_entropy_rows(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean CE over rows of a logit matrix, with the gradient wrt logits.

    Returns (loss, dlogits) where dlogits already carries the 1/n factor.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    n = logits.shape[0]
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("cross_entropy_rows: label out of range")
    shifted = logits - np.max(logits, axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    loss = float(np.mean(logz - shifted[np.arange(n), labels]))
    p = np.exp(shifted - logz[:, None])
    dlogits = p.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def kl_from_uniform(p: np.ndarray) -> float:
    """KL divergence D(U || p) of the uniform distribution from simplex p.

    Entries are clamped below at LOG_EPS before the log, so zero entries
    are safe. Zero iff p is uniform.
    """
    p = np.asarray(p, dtype=np.float64)
    k = p.size
    u = 1.0 / k
    return float(np.sum(u * (np.log(u) - np.log(np.maximum(p, LOG_EPS)))))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) GELU."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
    return arr


# ---------------------------------------------------------------------------
# Seeded RNG streams
# ---------------------------------------------------------------------------
#
# One experiment seed is split into independent named streams so any single
# component ("init", "sampler", "negatives", "synth", ...) is reproducible in
# isolation. The generator is numpy's Philox, a documented counter-based
# generator with platform-stable output. The label is folded in via CRC32 so
# streams with different labels never collide.

@dataclass(frozen=True)
class RngStream:
    seed: int
    label: str

    def generator(self, *indices: int) -> np.random.Generator:
        """Generator for this stream, optionally sub-keyed by integer indices
        (e.g. a per-node substream)."""
        key = [self.seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(self.label.encode("utf-8")), *indices]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def rng_stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    return RngStream(seed, label).generator(*indices)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool
    note: str = ""


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = []
        for e in self.entries:
            status = "ok" if e.passed else "FAIL"
            note = f" ({e.note})" if e.note else ""
            lines.append(f"{status:4s} {e.name:24s} max_rel_err={e.max_rel_err:.3e}{note}")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    # Elementwise |a-b| / max(|a|,|b|,0.01): the floor treats near-zero
    # gradients on an absolute scale, keeping finite-difference noise benign.
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-2)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(
    loss_fn,
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients to central finite differences.

    `loss_fn(params) -> (loss, grads)` where `grads` maps each parameter
    name to an array of the parameter's shape. Every element of every
    parameter is perturbed by +-h; the per-tensor max relative error is
    reported. A non-finite loss fails the check naming the parameter.
    """
    report = GradCheckReport()
    _, analytic = loss_fn(params)
    for name, theta in params.items():
        if name not in analytic:
            report.entries.append(GradCheckEntry(name, np.inf, False, "no analytic gradient returned"))
            continue
        g_an = np.asarray(analytic[name], dtype=np.float64)
        g_num = np.zeros_like(theta, dtype=np.float64)
        flat = theta.reshape(-1)
        gnum_flat = g_num.reshape(-1)
        bad = None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = loss_fn(params)
            flat[i] = orig - h
            lm, _ = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                bad = f"non-finite loss while perturbing element {i}"
                break
            gnum_flat[i] = (lp - lm) / (2.0 * h)
        if bad is not None:
            report.entries.append(GradCheckEntry(name, np.inf, False, bad))
            continue
        err = _rel_err(g_an, g_num)
        report.entries.append(GradCheckEntry(name, err, err <= tol))
    return report
