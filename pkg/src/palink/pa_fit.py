"""Generate the shipped PA coefficient set.

Fits a (Pi=2, Upsilon=4) memory polynomial to a reference amplifier built
from a Rapp-type AM/AM curve with mild AM/PM, followed by a short linear
echo filter that gives the model its memory.  Run as a module to rewrite
``src/palink/data/default_pa.txt``:

    python -m palink.pa_fit [output-path]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from .pa import PaModel, mp_regressors, save_pa_coeffs

# reference curve parameters
SAT_AMPLITUDE = 1.0
RAPP_P = 1.5
AMPM_MAX_RAD = 0.20
ECHO_PRE = 0.055 * np.exp(0.9j)
ECHO_POST = -0.045 * np.exp(-0.4j)
FIT_POWER = 0.4
FIT_AMPLITUDE_MAX = 2.0
FIT_SAMPLES = 1 << 16
FIT_SEED = 20240811


def reference_static(x: np.ndarray) -> np.ndarray:
    """Rapp AM/AM with a smooth AM/PM term, small-signal gain one."""
    r = np.abs(x) / SAT_AMPLITUDE
    gain = (1.0 + r ** (2 * RAPP_P)) ** (-1.0 / (2 * RAPP_P))
    phase = AMPM_MAX_RAD * r**2 / (1.0 + r**2)
    return x * gain * np.exp(1j * phase)


def reference_pa(x: np.ndarray) -> np.ndarray:
    """Static nonlinearity followed by a mild pre/post echo (memory)."""
    s = reference_static(x)
    y = s.astype(complex).copy()
    y[:-1] += ECHO_PRE * s[1:]
    y[1:] += ECHO_POST * s[:-1]
    return y


def _p1db_input_power(coeffs: np.ndarray) -> float:
    """Input power where the fitted static AM/AM compresses by 1 dB."""
    center = (coeffs.shape[0] - 1) // 2
    orders = np.arange(coeffs.shape[1])
    g0 = abs(coeffs[center, 0])
    r = np.linspace(1e-3, 2.0, 20000)
    amps = np.abs((coeffs[center] * r[:, None] ** (1 + 2 * orders)).sum(axis=1))
    rel_db = 20 * np.log10(amps / (g0 * r))
    below = np.nonzero(rel_db <= -1.0)[0]
    if below.size == 0:
        raise RuntimeError("fitted curve never compresses by 1 dB in range")
    i = below[0]
    # linear interpolation between grid points
    r1, r0 = r[i], r[i - 1]
    d1, d0 = rel_db[i], rel_db[i - 1]
    r_c = r0 + (r1 - r0) * (-1.0 - d0) / (d1 - d0)
    return float(r_c**2)


def fit_default_model() -> PaModel:
    # half Gaussian samples at a typical drive, half uniform-amplitude out to
    # FIT_AMPLITUDE_MAX: the second set anchors the polynomial along the
    # saturation curve so the model stays monotone over realistic peaks
    rng = np.random.default_rng(FIT_SEED)
    half = FIT_SAMPLES // 2
    gauss = np.sqrt(FIT_POWER / 2) * (
        rng.standard_normal(half) + 1j * rng.standard_normal(half)
    )
    sweep = rng.uniform(0.0, FIT_AMPLITUDE_MAX, FIT_SAMPLES - half) \
        * np.exp(2j * np.pi * rng.uniform(size=FIT_SAMPLES - half))
    x = np.concatenate([gauss, sweep])
    y = reference_pa(x)
    phi = mp_regressors(x, pi=2, upsilon=4)
    coef, *_ = np.linalg.lstsq(phi, y, rcond=None)
    coeffs = coef.reshape(3, 4)
    nmse = np.mean(np.abs(phi @ coef - y) ** 2) / np.mean(np.abs(y) ** 2)
    model = PaModel(coeffs=coeffs, p1db_in=_p1db_input_power(coeffs),
                    name="rapp-fit-pi2-ups4")
    print(f"fit NMSE: {10 * np.log10(nmse):.1f} dB")
    print(f"1 dB compression input power: {model.p1db_in:.4f}")
    return model


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0]) if argv else (
        Path(__file__).parent / "data" / "default_pa.txt"
    )
    model = fit_default_model()
    save_pa_coeffs(model, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
