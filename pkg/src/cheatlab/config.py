"""Flat run configuration: defaults, file parsing, and overrides.

One dotted key per tunable default, line-oriented `key = value` files
with '#' comments, and later-wins precedence: built-in defaults, then the
config file, then --set overrides. Validation is total; no stage starts
with a half-checked configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from .errors import ConfigError
from .worldsim import DEFAULT_SIM, SimConfig


def _int(lo=None, hi=None):
    def parse(text: str) -> int:
        value = int(text)
        if lo is not None and value < lo:
            raise ValueError(f"{value} < {lo}")
        if hi is not None and value > hi:
            raise ValueError(f"{value} > {hi}")
        return value

    return parse


def _float(lo=None, hi=None, lo_open=False):
    def parse(text: str) -> float:
        value = float(text)
        if value != value:
            raise ValueError("nan")
        if lo is not None and (value <= lo if lo_open else value < lo):
            raise ValueError(f"{value} {'<=' if lo_open else '<'} {lo}")
        if hi is not None and value > hi:
            raise ValueError(f"{value} > {hi}")
        return value

    return parse


def _choice(*options: str):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {options}")
        return text

    return parse


def _int_list(n: int | None = None):
    def parse(text: str) -> tuple[int, ...]:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
        if not values or any(v < 1 for v in values):
            raise ValueError("needs comma-separated positive integers")
        if n is not None and len(values) != n:
            raise ValueError(f"needs exactly {n} entries")
        return values

    return parse


def _text(text: str) -> str:
    return text


@dataclass(frozen=True)
class _Key:
    default: object
    parse: Callable[[str], object]


_S = DEFAULT_SIM

# Every tunable default in the package, one flat key each.
KEYS: dict[str, _Key] = {
    "seed": _Key(0, _int(0)),
    "out_dir": _Key("runs/default", _text),
    # world geometry and dynamics
    "world.scan_width": _Key(_S.scan_width, _int(8, 512)),
    "world.fov_deg": _Key(_S.fov_deg, _float(0, 180, lo_open=True)),
    "world.d_max": _Key(_S.d_max, _float(0, lo_open=True)),
    "world.dt": _Key(_S.dt, _float(0, 0.2, lo_open=True)),
    "world.v_max": _Key(_S.v_max, _float(0, lo_open=True)),
    "world.yaw_rate_max": _Key(_S.yaw_rate_max, _float(0, lo_open=True)),
    "world.collision_radius": _Key(_S.collision_radius, _float(0, lo_open=True)),
    "world.z_min": _Key(_S.z_min, _float(0)),
    "world.z_max": _Key(_S.z_max, _float(0, lo_open=True)),
    "world.n_gates": _Key(_S.n_gates, _int(1)),
    "world.gate_spacing": _Key(_S.gate_spacing, _float(4.0)),
    "world.corridor_half_width": _Key(_S.corridor_half_width, _float(0, lo_open=True)),
    "world.gate_half_width": _Key(_S.gate_half_width, _float(0, lo_open=True)),
    "world.frame_thickness": _Key(_S.frame_thickness, _float(0, lo_open=True)),
    "world.gate_offset_max": _Key(_S.gate_offset_max, _float(0)),
    "world.gate_yaw_max_deg": _Key(_S.gate_yaw_max_deg, _float(0, 60)),
    "world.start_offset_max": _Key(_S.start_offset_max, _float(0)),
    "world.start_yaw_max_deg": _Key(_S.start_yaw_max_deg, _float(0, 90)),
    "world.room_size": _Key(_S.room_size, _float(6.0)),
    "world.max_obstacles": _Key(_S.max_obstacles, _int(0)),
    "world.obstacle_min_side": _Key(_S.obstacle_min_side, _float(0, lo_open=True)),
    "world.obstacle_max_side": _Key(_S.obstacle_max_side, _float(0, lo_open=True)),
    "world.start_clearance": _Key(_S.start_clearance, _float(0)),
    "world.d_gate": _Key(_S.d_gate, _float(0, lo_open=True)),
    "world.gap_fan_rays": _Key(_S.gap_fan_rays, _int(3)),
    # dataset sizes
    "data.vae_episodes": _Key(6, _int(1)),
    "data.vae_max_steps": _Key(400, _int(1)),
    "data.expert_episodes": _Key(24, _int(1)),
    "data.expert_max_steps": _Key(600, _int(1)),
    "data.real_episodes": _Key(30, _int(1)),
    "data.real_max_steps": _Key(400, _int(1)),
    "data.clutter_density": _Key(0.4, _float(0, 1)),
    # autoencoder
    "vae.k": _Key(8, _int(1)),
    "vae.hidden": _Key((128, 64), _int_list()),
    "vae.beta": _Key(1e-3, _float(0)),
    "vae.epochs": _Key(200, _int(0)),
    "vae.batch": _Key(64, _int(1)),
    "vae.lr": _Key(1e-3, _float(0, lo_open=True)),
    # controller architecture
    "policy.h_dim": _Key(16, _int(1)),
    "policy.mlp_hidden": _Key((32, 16), _int_list(2)),
    # evolution
    "evolve.population": _Key(64, _int(2)),
    "evolve.elites": _Key(8, _int(1)),
    "evolve.mutation_sigma": _Key(0.02, _float(0, lo_open=True)),
    "evolve.generations": _Key(150, _int(1)),
    "evolve.fitness": _Key("imitation", _choice("imitation", "reward")),
    "evolve.gate_bonus": _Key(5.0, _float(0)),
    "evolve.reward_episodes": _Key(8, _int(1)),
    "evolve.reward_max_steps": _Key(600, _int(1)),
    # substitute encoder
    "cheat.n_poses": _Key(2000, _int(1)),
    "cheat.mode": _Key("virtual_gate", _choice("virtual_gate", "gates_visible")),
    "cheat.density": _Key(0.4, _float(0, 1)),
    "cheat.hidden": _Key((128, 64), _int_list()),
    "cheat.epochs": _Key(200, _int(0)),
    "cheat.batch": _Key(64, _int(1)),
    "cheat.lr": _Key(1e-3, _float(0, lo_open=True)),
    # regression baseline
    "baseline.hidden": _Key((128, 64), _int_list()),
    "baseline.epochs": _Key(200, _int(0)),
    "baseline.batch": _Key(64, _int(1)),
    "baseline.lr": _Key(1e-3, _float(0, lo_open=True)),
    # evaluation suite
    "eval.episodes": _Key(50, _int(1)),
    "eval.density": _Key(0.4, _float(0, 1)),
    "eval.max_steps": _Key(2000, _int(1)),
    "eval.hold_steps": _Key(20, _int(1)),
    # belief strips
    "viz.stride": _Key(25, _int(1)),
    "viz.band_height": _Key(8, _int(1)),
    "viz.max_steps": _Key(400, _int(1)),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated flat key - value map; immutable once loaded."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def sim(self) -> SimConfig:
        """The SimConfig described by the world.* keys."""
        fields = {
            key.split(".", 1)[1]: self.values[key]
            for key in KEYS
            if key.startswith("world.")
        }
        return replace(DEFAULT_SIM, **fields)

    def dump(self) -> str:
        """Reparseable `key = value` text, one line per key."""
        lines = []
        for key in KEYS:
            lines.append(f"{key} = {_format_value(self.values[key])}")
        return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _apply(values: dict, key: str, raw: str, where: str) -> None:
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r} ({where})")
    try:
        values[key] = KEYS[key].parse(raw)
    except ValueError as err:
        raise ConfigError(f"bad value for {key!r} ({where}): {err}") from err


def _cross_checks(values: dict) -> None:
    if values["world.z_max"] <= values["world.z_min"]:
        raise ConfigError("world.z_max must exceed world.z_min")
    if values["world.obstacle_max_side"] < values["world.obstacle_min_side"]:
        raise ConfigError(
            "world.obstacle_max_side must be >= world.obstacle_min_side"
        )
    reach = (
        values["world.gate_offset_max"]
        + values["world.gate_half_width"]
        + 2 * values["world.frame_thickness"]
    )
    if reach > values["world.corridor_half_width"]:
        raise ConfigError(
            "gates cannot fit: gate_offset_max + gate_half_width + "
            "2*frame_thickness exceeds corridor_half_width"
        )
    clearance = values["world.start_clearance"] + values["world.collision_radius"]
    if clearance > 0.25 * values["world.room_size"]:
        raise ConfigError(
            "start_clearance + collision_radius exceeds a quarter of room_size"
        )
    if values["world.d_gate"] > values["world.d_max"]:
        raise ConfigError("world.d_gate must not exceed world.d_max")
    if values["evolve.elites"] >= values["evolve.population"]:
        raise ConfigError("evolve.elites must be below evolve.population")


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and key=value overrides.

    Later sources win. Any unknown key, unparseable value, or out-of-range
    value raises ConfigError naming the key and where it came from.
    """
    values = {key: spec.default for key, spec in KEYS.items()}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw_line in enumerate(fh, start=1):
                line = raw_line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"expected 'key = value' (line {lineno}): {line!r}"
                    )
                key, raw = (part.strip() for part in line.split("=", 1))
                _apply(values, key, raw, f"line {lineno}")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        _apply(values, key, raw, "override")
    _cross_checks(values)
    return RunConfig(values)
