"""Experiment configuration: array/group/sector description and presets.

A scenario file is a JSON key/value tree with a ``schema_version`` field;
see ``docs/scenario_schema.md`` for the documented schema.  Angles are
stored in degrees in files and converted to radians once, at the point of
use inside the channel module.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .waveform import WaveformConfig

__all__ = [
    "Architecture",
    "ArrayConfig",
    "MpcConfig",
    "GroupConfig",
    "Scenario",
    "load_scenario",
    "save_scenario",
    "table1_preset",
    "desk_preset",
    "with_architecture",
]

SCHEMA_VERSION = 1


class Architecture(str, enum.Enum):
    FULLY_DIGITAL = "fully_digital"
    FULLY_CONNECTED = "fully_connected"
    PARTIAL_GEB = "partial_geb"
    PARTIAL_DFT = "partial_dft"

    @property
    def is_partial(self) -> bool:
        return self in (Architecture.PARTIAL_GEB, Architecture.PARTIAL_DFT)


@dataclass(frozen=True)
class ArrayConfig:
    """ULA geometry and RF-chain connectivity."""

    n_antennas: int
    n_rf_chains: int
    architecture: Architecture
    subarray_size: int | None = None

    def validate(self):
        if self.n_antennas < 1:
            raise ValidationError("array.n_antennas must be positive")
        if self.n_rf_chains < 1:
            raise ValidationError("array.n_rf_chains must be positive")
        arch = self.architecture
        if arch is Architecture.FULLY_DIGITAL:
            if self.n_rf_chains != self.n_antennas:
                raise ValidationError(
                    "array.n_rf_chains: fully digital requires D == N_t"
                )
        elif arch is Architecture.FULLY_CONNECTED:
            if self.n_rf_chains >= self.n_antennas:
                raise ValidationError(
                    "array.n_rf_chains: fully connected requires D < N_t"
                )
        else:
            if self.subarray_size is None or self.subarray_size < 1:
                raise ValidationError(
                    "array.subarray_size required for partial architectures"
                )
            if self.n_rf_chains * self.subarray_size != self.n_antennas:
                raise ValidationError(
                    "array.subarray_size: partial requires D * N_s == N_t"
                )


@dataclass(frozen=True)
class MpcConfig:
    """One multipath component: angular sector, power, LOS weight, delay.

    ``delay`` counts symbol-rate samples; ``gain`` is the linear power of
    the diffuse part and ``rician_factor`` the LOS-to-diffuse power ratio.
    """

    center_angle_deg: float
    half_width_deg: float
    gain: float
    rician_factor: float = 0.0
    delay: int = 0

    def validate(self, label: str = "mpc"):
        if self.half_width_deg <= 0:
            raise ValidationError(f"{label}.half_width_deg must be > 0")
        if self.gain <= 0:
            raise ValidationError(f"{label}.gain must be > 0")
        if self.rician_factor < 0:
            raise ValidationError(f"{label}.rician_factor must be >= 0")
        if self.delay < 0:
            raise ValidationError(f"{label}.delay must be >= 0")
        lo = self.center_angle_deg - self.half_width_deg
        hi = self.center_angle_deg + self.half_width_deg
        if lo < -90.0 or hi > 90.0:
            raise ValidationError(
                f"{label}: sector [{lo:g}, {hi:g}] deg outside [-90, 90]"
            )


@dataclass(frozen=True)
class GroupConfig:
    """A user group: RF-chain budget and per-user MPC lists."""

    rf_chains: int
    mpcs: tuple[tuple[MpcConfig, ...], ...]

    @property
    def n_users(self) -> int:
        return len(self.mpcs)

    def validate(self, gi: int):
        if self.rf_chains < 1:
            raise ValidationError(f"groups[{gi}].rf_chains must be positive")
        if self.n_users < 1:
            raise ValidationError(f"groups[{gi}] must contain at least one user")
        for ui, user_mpcs in enumerate(self.mpcs):
            if len(user_mpcs) < 1:
                raise ValidationError(
                    f"groups[{gi}].mpcs[{ui}]: every user needs >= 1 MPC"
                )
            for li, mpc in enumerate(user_mpcs):
                mpc.validate(f"groups[{gi}].mpcs[{ui}][{li}]")


@dataclass(frozen=True)
class Scenario:
    """Complete, immutable experiment description."""

    array: ArrayConfig
    groups: tuple[GroupConfig, ...]
    victims: tuple[MpcConfig, ...]
    waveform: WaveformConfig
    snr_grid_db: tuple[float, ...]
    seed: int
    n_channel_realizations: int = 1
    es: float = 1.0
    pa_model: str = "default"
    pa_backoff_db: float = 3.0
    zf_delta: float = 1e-6
    kappa_phase: str = "per_realization"

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_users(self) -> int:
        return sum(g.n_users for g in self.groups)

    def validate(self) -> "Scenario":
        self.array.validate()
        if not self.groups:
            raise ValidationError("groups must be nonempty")
        for gi, g in enumerate(self.groups):
            g.validate(gi)
        total_rf = sum(g.rf_chains for g in self.groups)
        if total_rf != self.array.n_rf_chains:
            raise ValidationError(
                f"groups.rf_chains: sum {total_rf} != array.n_rf_chains "
                f"{self.array.n_rf_chains}"
            )
        for vi, v in enumerate(self.victims):
            v.validate(f"victims[{vi}]")
        if not self.snr_grid_db:
            raise ValidationError("snr_grid_db must be nonempty")
        if self.n_channel_realizations < 1:
            raise ValidationError("n_channel_realizations must be >= 1")
        if self.es <= 0:
            raise ValidationError("es must be > 0")
        if self.zf_delta < 0:
            raise ValidationError("zf_delta must be >= 0")
        if self.kappa_phase not in ("per_realization", "per_scenario"):
            raise ValidationError(
                "kappa_phase must be 'per_realization' or 'per_scenario'"
            )
        return self

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        def mpc_d(m: MpcConfig) -> dict:
            return {
                "center_angle_deg": m.center_angle_deg,
                "half_width_deg": m.half_width_deg,
                "gain": m.gain,
                "rician_factor": m.rician_factor,
                "delay": m.delay,
            }

        return {
            "schema_version": SCHEMA_VERSION,
            "array": {
                "n_antennas": self.array.n_antennas,
                "n_rf_chains": self.array.n_rf_chains,
                "architecture": self.array.architecture.value,
                "subarray_size": self.array.subarray_size,
            },
            "groups": [
                {
                    "rf_chains": g.rf_chains,
                    "users": [[mpc_d(m) for m in user] for user in g.mpcs],
                }
                for g in self.groups
            ],
            "victims": [mpc_d(v) for v in self.victims],
            "waveform": {
                "n_active": self.waveform.n_active,
                "fft_size": self.waveform.fft_size,
                "cp_len": self.waveform.cp_len,
                "mod_order": self.waveform.mod_order,
            },
            "snr_grid_db": list(self.snr_grid_db),
            "seed": self.seed,
            "n_channel_realizations": self.n_channel_realizations,
            "es": self.es,
            "pa_model": self.pa_model,
            "pa_backoff_db": self.pa_backoff_db,
            "zf_delta": self.zf_delta,
            "kappa_phase": self.kappa_phase,
        }

    def content_hash(self) -> str:
        """Stable hash of the canonical serialized form."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _mpc_from_dict(d: dict, label: str) -> MpcConfig:
    try:
        return MpcConfig(
            center_angle_deg=float(d["center_angle_deg"]),
            half_width_deg=float(d["half_width_deg"]),
            gain=float(d["gain"]),
            rician_factor=float(d.get("rician_factor", 0.0)),
            delay=int(d.get("delay", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{label}: {exc}") from exc


def scenario_from_dict(d: dict) -> Scenario:
    try:
        version = d["schema_version"]
        if version != SCHEMA_VERSION:
            raise ParseError(f"unsupported schema_version {version}")
        arr = d["array"]
        array = ArrayConfig(
            n_antennas=int(arr["n_antennas"]),
            n_rf_chains=int(arr["n_rf_chains"]),
            architecture=Architecture(arr["architecture"]),
            subarray_size=(None if arr.get("subarray_size") is None
                           else int(arr["subarray_size"])),
        )
        groups = tuple(
            GroupConfig(
                rf_chains=int(g["rf_chains"]),
                mpcs=tuple(
                    tuple(_mpc_from_dict(m, f"groups[{gi}]") for m in user)
                    for user in g["users"]
                ),
            )
            for gi, g in enumerate(d["groups"])
        )
        victims = tuple(
            _mpc_from_dict(v, f"victims[{vi}]")
            for vi, v in enumerate(d.get("victims", []))
        )
        wf = d["waveform"]
        waveform = WaveformConfig(
            n_active=int(wf["n_active"]),
            fft_size=int(wf["fft_size"]),
            cp_len=int(wf["cp_len"]),
            mod_order=int(wf["mod_order"]),
        )
        sc = Scenario(
            array=array,
            groups=groups,
            victims=victims,
            waveform=waveform,
            snr_grid_db=tuple(float(s) for s in d["snr_grid_db"]),
            seed=int(d["seed"]),
            n_channel_realizations=int(d.get("n_channel_realizations", 1)),
            es=float(d.get("es", 1.0)),
            pa_model=str(d.get("pa_model", "default")),
            pa_backoff_db=float(d.get("pa_backoff_db", 3.0)),
            zf_delta=float(d.get("zf_delta", 1e-6)),
            kappa_phase=str(d.get("kappa_phase", "per_realization")),
        )
    except ValidationError:
        raise
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed scenario: {exc}") from exc
    return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path):
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Architecture derivation
# ---------------------------------------------------------------------------

def _even_split(total: int, parts: int) -> tuple[int, ...]:
    base = total // parts
    rem = total % parts
    return tuple(base + (1 if i < rem else 0) for i in range(parts))


def with_architecture(sc: Scenario, arch: Architecture,
                      n_rf_chains: int | None = None,
                      subarray_size: int | None = None) -> Scenario:
    """Re-derive a scenario for another connectivity type.

    Fully digital merges all groups into one (every user precoded jointly,
    D = N_t).  Partial architectures take N_s from the argument, the current
    array, or N_t // D, and split the RF chains evenly across groups when
    the current split does not fit.
    """
    nt = sc.array.n_antennas
    if arch is Architecture.FULLY_DIGITAL:
        merged = GroupConfig(
            rf_chains=nt,
            mpcs=tuple(user for g in sc.groups for user in g.mpcs),
        )
        array = ArrayConfig(nt, nt, arch)
        return replace(sc, array=array, groups=(merged,)).validate()

    base_groups = sc.groups
    if len(base_groups) == 1 and sc.array.architecture is Architecture.FULLY_DIGITAL:
        raise ValidationError(
            "cannot derive a grouped hybrid scenario from a merged "
            "fully digital one; start from the hybrid form"
        )

    if arch is Architecture.FULLY_CONNECTED:
        d = n_rf_chains if n_rf_chains is not None else sc.array.n_rf_chains
        if sc.array.architecture is Architecture.FULLY_DIGITAL:
            raise ValidationError("fully connected derivation needs a hybrid base")
        array = ArrayConfig(nt, d, arch)
    else:
        ns = subarray_size or sc.array.subarray_size
        if ns is None:
            if nt % sc.array.n_rf_chains:
                raise ValidationError(
                    "subarray_size required: N_t not divisible by D"
                )
            ns = nt // sc.array.n_rf_chains
        if nt % ns:
            raise ValidationError("subarray_size must divide n_antennas")
        d = nt // ns
        array = ArrayConfig(nt, d, arch, subarray_size=ns)

    if sum(g.rf_chains for g in base_groups) != d:
        split = _even_split(d, len(base_groups))
        base_groups = tuple(
            replace(g, rf_chains=s) for g, s in zip(base_groups, split)
        )
    return replace(sc, array=array, groups=base_groups).validate()


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

def _two_mpc_user(sector1: tuple[float, float], sector2: tuple[float, float],
                  rician: float, delay2: int) -> tuple[MpcConfig, ...]:
    # first MPC 3 dB above the second, diffuse powers summing to one
    r = 10.0 ** 0.3
    g1 = r / (1.0 + r)
    g2 = 1.0 / (1.0 + r)
    return (
        MpcConfig((sector1[0] + sector1[1]) / 2, (sector1[1] - sector1[0]) / 2,
                  gain=g1, rician_factor=rician, delay=0),
        MpcConfig((sector2[0] + sector2[1]) / 2, (sector2[1] - sector2[0]) / 2,
                  gain=g2, rician_factor=rician, delay=delay2),
    )


def _one_mpc_user(sector: tuple[float, float], rician: float) -> tuple[MpcConfig, ...]:
    return (
        MpcConfig((sector[0] + sector[1]) / 2, (sector[1] - sector[0]) / 2,
                  gain=1.0, rician_factor=rician, delay=0),
    )


def _mean_gain(groups: tuple[GroupConfig, ...]) -> float:
    gains = [m.gain for g in groups for user in g.mpcs for m in user]
    return float(np.mean(gains))


def table1_preset(architecture: Architecture = Architecture.FULLY_CONNECTED,
                  seed: int = 1) -> Scenario:
    """Full-scale reference scenario: 96-antenna ULA, 3 groups of 2 users.

    Each user has a strong first MPC (Rician factor 10) and, in groups 1
    and 2, a second MPC 3 dB weaker arriving 2 symbols later.  A victim
    sector enters the nulling statistics only.
    """
    rician = 10.0
    groups = (
        GroupConfig(rf_chains=2, mpcs=(
            _two_mpc_user((-28, -25), (-17, -14), rician, delay2=2),
            _two_mpc_user((-25, -22), (-14, -11), rician, delay2=2),
        )),
        GroupConfig(rf_chains=2, mpcs=(
            _two_mpc_user((-4, -1), (8.5, 11.5), rician, delay2=2),
            _two_mpc_user((-1, 2), (11.5, 14), rician, delay2=2),
        )),
        GroupConfig(rf_chains=2, mpcs=(
            _one_mpc_user((24, 27), rician),
            _one_mpc_user((21, 24), rician),
        )),
    )
    victims = (
        MpcConfig(center_angle_deg=-37.5, half_width_deg=1.5,
                  gain=_mean_gain(groups), rician_factor=0.0, delay=0),
    )
    if architecture is Architecture.FULLY_DIGITAL:
        array = ArrayConfig(96, 96, architecture)
        groups = (GroupConfig(
            rf_chains=96,
            mpcs=tuple(user for g in groups for user in g.mpcs),
        ),)
    elif architecture is Architecture.FULLY_CONNECTED:
        array = ArrayConfig(96, 6, architecture)
    else:
        array = ArrayConfig(96, 6, architecture, subarray_size=16)
    sc = Scenario(
        array=array,
        groups=groups,
        victims=victims,
        waveform=WaveformConfig(n_active=550, fft_size=4096, cp_len=20,
                                mod_order=64),
        snr_grid_db=tuple(float(s) for s in range(0, 45, 5)),
        seed=seed,
        n_channel_realizations=4,
    )
    return sc.validate()


def desk_preset(architecture: Architecture = Architecture.FULLY_CONNECTED,
                seed: int = 1, mod_order: int = 64) -> Scenario:
    """Reduced scenario for desk-scale runs: 32 antennas, 2 groups of 2.

    Keeps the full-scale structure (two-MPC Rician users, a victim sector,
    oversampled OFDM) at a size where the whole experiment suite runs on a
    laptop.  Fully connected uses 6 RF chains; partial subarrays have 8
    elements, so D = 4 there.
    """
    rician = 10.0
    groups = (
        GroupConfig(rf_chains=3, mpcs=(
            _two_mpc_user((-28, -25), (-17, -14), rician, delay2=2),
            _two_mpc_user((-25, -22), (-14, -11), rician, delay2=2),
        )),
        GroupConfig(rf_chains=3, mpcs=(
            _one_mpc_user((24, 27), rician),
            _one_mpc_user((21, 24), rician),
        )),
    )
    victims = (
        MpcConfig(center_angle_deg=-37.5, half_width_deg=1.5,
                  gain=_mean_gain(groups), rician_factor=0.0, delay=0),
    )
    if architecture is Architecture.FULLY_DIGITAL:
        array = ArrayConfig(32, 32, architecture)
        groups = (GroupConfig(
            rf_chains=32,
            mpcs=tuple(user for g in groups for user in g.mpcs),
        ),)
    elif architecture is Architecture.FULLY_CONNECTED:
        array = ArrayConfig(32, 6, architecture)
    else:
        array = ArrayConfig(32, 4, architecture, subarray_size=8)
        groups = tuple(replace(g, rf_chains=2) for g in groups)
    sc = Scenario(
        array=array,
        groups=groups,
        victims=victims,
        waveform=WaveformConfig(n_active=128, fft_size=1024, cp_len=20,
                                mod_order=mod_order),
        snr_grid_db=(0.0, 10.0, 20.0, 30.0, 40.0),
        seed=seed,
        n_channel_realizations=3,
    )
    return sc.validate()
