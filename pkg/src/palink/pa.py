"""Memory-polynomial power amplifier bank.

The PA output is ``y_n = sum_{w,v} alpha[w, v] * x_{n-w} |x_{n-w}|^(2v)``
with a symmetric tap range ``w in (-Pi, Pi)`` and odd-order basis
``x |x|^(2v)``.  All branches of the array share one coefficient set; the
per-architecture operating point is set by a scalar drive applied around
the bank (see :func:`drive_for_backoff`).

Coefficients live in a small versioned text file, one ``tap`` line per
(memory, order) pair; the repository ships a default set fitted to a
Rapp-type AM/AM + mild AM/PM reference (see ``palink.pa_fit``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import MemoryNotSupported, ParseError, ValidationError

__all__ = [
    "PaModel",
    "mp_apply",
    "mp_regressors",
    "pa_apply",
    "pa_bank_apply",
    "bussgang_gain_gaussian",
    "drive_for_backoff",
    "load_pa_coeffs",
    "save_pa_coeffs",
    "default_pa_model",
]

PA_FILE_VERSION = 1


@dataclass(frozen=True)
class PaModel:
    """MP coefficient tensor with shape (2*Pi - 1, Upsilon).

    Row index ``w + Pi - 1`` holds memory tap ``w``; ``p1db_in`` is the
    input power at which the AM/AM curve compresses by 1 dB (metadata used
    to place the operating point).
    """

    coeffs: np.ndarray
    p1db_in: float
    name: str = "pa"

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 2 or c.shape[0] % 2 == 0:
            raise ValidationError(
                "pa.coeffs must be (2*Pi - 1, Upsilon) with Pi >= 1"
            )
        object.__setattr__(self, "coeffs", c)
        if c.shape[1] < 1:
            raise ValidationError("pa.coeffs needs at least the linear order")
        if self.small_signal_gain == 0:
            raise ValidationError("pa.coeffs[0 tap, order 0] must be nonzero")

    @property
    def memory_span(self) -> int:
        """Pi: taps run over w = -(Pi-1) .. Pi-1."""
        return (self.coeffs.shape[0] + 1) // 2

    @property
    def n_orders(self) -> int:
        return self.coeffs.shape[1]

    @property
    def small_signal_gain(self) -> complex:
        return complex(self.coeffs[self.memory_span - 1, 0])

    @property
    def is_memoryless(self) -> bool:
        center = self.memory_span - 1
        off = np.delete(self.coeffs, center, axis=0)
        return off.size == 0 or not np.any(off)


def _shift(x: np.ndarray, w: int, circular: bool) -> np.ndarray:
    """x_{n-w} along the last axis; zeros (or wrap) outside the frame."""
    if w == 0:
        return x
    out = np.roll(x, w, axis=-1)
    if not circular:
        out = out.copy()
        if w > 0:
            out[..., :w] = 0.0
        else:
            out[..., w:] = 0.0
    return out


def mp_apply(coeffs: np.ndarray, x: np.ndarray, circular: bool = False) -> np.ndarray:
    """Evaluate a memory polynomial along the last axis of ``x``."""
    coeffs = np.asarray(coeffs)
    pi = (coeffs.shape[0] + 1) // 2
    x = np.asarray(x, dtype=complex)
    y = np.zeros_like(x)
    for row, w in enumerate(range(-pi + 1, pi)):
        if not np.any(coeffs[row]):
            continue
        xs = _shift(x, w, circular)
        mag2 = np.abs(xs) ** 2
        basis = xs
        for v in range(coeffs.shape[1]):
            if v:
                basis = basis * mag2
            if coeffs[row, v]:
                y = y + coeffs[row, v] * basis
    return y


def mp_regressors(x: np.ndarray, pi: int, upsilon: int,
                  circular: bool = False) -> np.ndarray:
    """Regressor matrix (T, (2*Pi-1)*Upsilon) of shifted basis terms.

    Column order matches the flattened (tap, order) coefficient layout.
    """
    x = np.asarray(x, dtype=complex).reshape(-1)
    cols = []
    for w in range(-pi + 1, pi):
        xs = _shift(x, w, circular)
        mag2 = np.abs(xs) ** 2
        basis = xs
        for v in range(upsilon):
            if v:
                basis = basis * mag2
            cols.append(basis)
    return np.stack(cols, axis=1)


def pa_apply(model: PaModel, x: np.ndarray, circular: bool = False) -> np.ndarray:
    """Amplify one sequence (or a stack of sequences along the last axis)."""
    return mp_apply(model.coeffs, x, circular=circular)


def pa_bank_apply(model: PaModel, x: np.ndarray, circular: bool = False) -> np.ndarray:
    """Row-wise amplification of an (N_t, T) block; all branches identical."""
    return pa_apply(model, np.asarray(x), circular=circular)


def bussgang_gain_gaussian(model: PaModel, input_power: float) -> complex:
    """Closed-form Wiener gain for circular Gaussian drive of given power.

    ``E[y x*] / E[|x|^2] = sum_v alpha[0, v] (v+1)! sigma^(2v)`` for a
    memoryless polynomial; raises for models with memory taps.
    """
    if not model.is_memoryless:
        raise MemoryNotSupported(
            "closed-form Bussgang gain requires a memoryless model"
        )
    center = model.memory_span - 1
    gain = 0.0 + 0.0j
    for v in range(model.n_orders):
        gain += model.coeffs[center, v] * math.factorial(v + 1) * input_power ** v
    return complex(gain)


def drive_for_backoff(model: PaModel, mean_input_power: float,
                      backoff_db: float) -> float:
    """Scalar drive so the mean per-branch PA input power sits ``backoff_db``
    below the 1 dB compression reference.

    The chain applies ``y = pa(rho * x) / rho`` so the small-signal path is
    drive-invariant and only the compression depth moves.
    """
    target = model.p1db_in * 10.0 ** (-backoff_db / 10.0)
    return float(np.sqrt(target / mean_input_power))


# ---------------------------------------------------------------------------
# coefficient files
# ---------------------------------------------------------------------------

def save_pa_coeffs(model: PaModel, path):
    pi = model.memory_span
    lines = [
        "# palink PA coefficient file",
        f"version {PA_FILE_VERSION}",
        f"name {model.name}",
        f"pi {pi}",
        f"upsilon {model.n_orders}",
        f"p1db_in {model.p1db_in!r}",
    ]
    for row, w in enumerate(range(-pi + 1, pi)):
        for v in range(model.n_orders):
            a = model.coeffs[row, v]
            lines.append(f"tap {w} {v} {float(a.real)!r} {float(a.imag)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_pa_coeffs(path) -> PaModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read PA file {path}: {exc}") from exc
    return _parse_pa_text(text, str(path))


def _parse_pa_text(text: str, label: str) -> PaModel:
    meta = {}
    taps = []
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "tap":
                w, v = int(parts[1]), int(parts[2])
                taps.append((w, v, float(parts[3]) + 1j * float(parts[4])))
            else:
                meta[parts[0]] = parts[1]
        except (IndexError, ValueError) as exc:
            raise ParseError(f"{label}:{ln}: {exc}") from exc
    try:
        if int(meta["version"]) != PA_FILE_VERSION:
            raise ParseError(f"{label}: unsupported version {meta['version']}")
        pi = int(meta["pi"])
        upsilon = int(meta["upsilon"])
        p1db = float(meta["p1db_in"])
    except KeyError as exc:
        raise ParseError(f"{label}: missing header field {exc}") from exc
    coeffs = np.zeros((2 * pi - 1, upsilon), dtype=complex)
    for w, v, a in taps:
        if not (-pi < w < pi) or not (0 <= v < upsilon):
            raise ParseError(f"{label}: tap ({w}, {v}) outside declared shape")
        coeffs[w + pi - 1, v] = a
    return PaModel(coeffs=coeffs, p1db_in=p1db, name=meta.get("name", "pa"))


def default_pa_model() -> PaModel:
    """The coefficient set shipped with the package."""
    text = resources.files("palink").joinpath("data/default_pa.txt").read_text()
    return _parse_pa_text(text, "data/default_pa.txt")
