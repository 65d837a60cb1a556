"""INI experiment configuration.

Load order: the packaged ``default.ini``, then ``calibrated.ini`` (fitted
environment coefficients), then a user file, then ``section.key=value``
overrides.  Every value error names the file and line it came from.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .device import AddressMap, ColumnLayout, DeviceGeometry
from .variation import PARAMS, EnvConditions, VariationConfig

DEFAULT_INI = "default.ini"
CALIBRATED_INI = "calibrated.ini"


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` is a ``file:line: message`` diagnostic."""


def data_path(name: str) -> Path:
    return Path(str(resources.files("divasim") / "data" / name))


class _Source:
    """Remembers where each (section, key) was last set."""

    def __init__(self):
        self.where = {}

    def scan(self, text: str, origin: str):
        section = None
        for no, line in enumerate(text.splitlines(), start=1):
            s = line.strip()
            if not s or s[0] in "#;":
                continue
            if s.startswith("[") and s.endswith("]"):
                section = s[1:-1].strip()
            elif section and ("=" in s or ":" in s):
                key = s.split("=", 1)[0].split(":", 1)[0].strip().lower()
                self.where[(section, key)] = f"{origin}:{no}"

    def at(self, section, key):
        return self.where.get((section, key.lower()), f"[{section}] {key}")


def _parse_list(text, conv=str):
    return [conv(t.strip()) for t in text.replace("\n", ",").split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser
    source: _Source = field(repr=False)

    # --- typed accessors -----------------------------------------------------
    def _get(self, section, key, conv, fallback=None):
        try:
            raw = self.parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError):
            if fallback is not None:
                return fallback
            raise ConfigError(f"missing [{section}] {key}") from None
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{self.source.at(section, key)}: bad value {raw!r} for "
                              f"[{section}] {key}: {exc}") from None

    def get_float(self, section, key, fallback=None):
        return self._get(section, key, float, fallback)

    def get_int(self, section, key, fallback=None):
        return self._get(section, key, lambda s: int(s, 0), fallback)

    def get_str(self, section, key, fallback=None):
        return self._get(section, key, str.strip, fallback)

    def get_bool(self, section, key, fallback=None):
        def conv(s):
            v = s.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError("expected a boolean")
        return self._get(section, key, conv, fallback)

    def get_list(self, section, key, conv=str, fallback=None):
        return self._get(section, key, lambda s: _parse_list(s, conv), fallback)

    def _validated(self, section, key, build):
        try:
            return build()
        except ConfigError:
            raise
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{self.source.at(section, key)}: {exc}") from None

    # --- domain objects ------------------------------------------------------
    def geometry(self) -> DeviceGeometry:
        return self._validated("device", "subarrays_per_bank", lambda: DeviceGeometry(
            chips_per_dimm=self.get_int("device", "chips_per_dimm"),
            banks_per_chip=self.get_int("device", "banks_per_chip"),
            subarrays_per_bank=self.get_int("device", "subarrays_per_bank"),
            mats_per_subarray_row=self.get_int("device", "mats_per_subarray_row")))

    def column_layout(self) -> ColumnLayout:
        g = self.geometry()
        name = self.get_str("device", "column_layout")
        if name in ("interleaved", "mat_major"):
            return ColumnLayout.named(name, g)
        path = Path(name)
        if not path.exists():
            raise ConfigError(f"{self.source.at('device', 'column_layout')}: "
                              f"column layout file {name} not found")
        return self._validated("device", "column_layout", lambda: ColumnLayout.from_csv(path, g))

    def address_map(self, seed: int | None = None) -> AddressMap:
        g = self.geometry()
        layout = self.column_layout()
        kind = self.get_str("device", "row_map")
        mask = self.get_int("device", "row_xor_mask", 0)
        if kind == "default":
            base = AddressMap.default(g, layout)
        elif kind == "random":
            base = AddressMap.scrambled(g, self.seed() if seed is None else seed, layout)
        elif kind == "identity":
            base = AddressMap.identity(g, layout)
        else:
            perm = self.get_list("device", "row_map", int)
            return self._validated("device", "row_map", lambda: AddressMap(perm, mask, layout))
        return self._validated("device", "row_xor_mask",
                               lambda: AddressMap(base.row_bit_permutation, mask, layout))

    def variation(self, seed: int | None = None) -> VariationConfig:
        base = {p: self.get_float("variation", "base_" + p.lower()) for p in PARAMS}
        kw = {k: self.get_float("variation", k) for k in (
            "bitline_coeff", "wordline_coeff", "alpha", "beta", "process_sigma",
            "temp_coeff", "refresh_coeff")}
        seed = self.seed() if seed is None else seed
        return self._validated("variation", "process_sigma",
                               lambda: VariationConfig(base, rng_seed=seed, **kw))

    def env(self) -> EnvConditions:
        return self._validated("env", "temperature", lambda: EnvConditions(
            self.get_float("env", "temperature"), self.get_float("env", "refresh_interval")))

    def env_grid(self) -> list[EnvConditions]:
        temps = self.get_list("env", "temperatures", float)
        refs = self.get_list("env", "refresh_intervals", float)
        return self._validated("env", "temperatures",
                               lambda: [EnvConditions(t, r) for t in temps for r in refs])

    def circuit(self):
        from .circuit import CircuitParams
        kw = {}
        for f in fields(CircuitParams):
            conv = int if f.name == "segments" else float
            kw[f.name] = self._get("circuit", f.name, conv)
        return self._validated("circuit", "timestep", lambda: CircuitParams(**kw))

    def seed(self) -> int:
        return self.get_int("experiment", "seed")

    def seeds(self) -> list[int]:
        text = self.get_str("experiment", "seeds")
        if ".." in text:
            lo, hi = text.split("..")
            return self._validated("experiment", "seeds", lambda: list(range(int(lo), int(hi))))
        return self.get_list("experiment", "seeds", int)

    def device(self, seed: int | None = None):
        from .harness import Device
        seed = self.seed() if seed is None else seed
        bank = self.get_int("device", "bank", 0)
        return self._validated("device", "bank", lambda: Device(
            self.geometry(), self.address_map(seed), self.variation(seed), bank))

    # --- serialisation -------------------------------------------------------
    def to_ini(self) -> str:
        buf = io.StringIO()
        self.parser.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    def set(self, section, key, value):
        if not self.parser.has_section(section):
            self.parser.add_section(section)
        self.parser.set(section, key, str(value))
        self.source.where[(section, key.lower())] = f"override {section}.{key}"


def _read(parser, source, text, origin):
    try:
        parser.read_string(text, source=origin)
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if getattr(exc, "errors", None) else "?"
        raise ConfigError(f"{origin}:{line}: cannot parse line") from None
    except configparser.Error as exc:
        line = getattr(exc, "lineno", "?")
        raise ConfigError(f"{origin}:{line}: {exc.message if hasattr(exc, 'message') else exc}") from None
    source.scan(text, origin)


def load_config(path=None, overrides=(), calibrated: bool = True) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    source = _Source()
    _read(parser, source, data_path(DEFAULT_INI).read_text(), DEFAULT_INI)
    cal = data_path(CALIBRATED_INI)
    if calibrated and cal.exists():
        _read(parser, source, cal.read_text(), CALIBRATED_INI)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config file {path} not found")
        known = {s: set(parser[s]) for s in parser.sections()}
        text = p.read_text()
        _read(parser, source, text, str(p))
        for section in parser.sections():
            if section not in known:
                raise ConfigError(f"{source.at(section, next(iter(parser[section]), ''))}: "
                                  f"unknown section [{section}]")
            for key in parser[section]:
                if key not in known[section]:
                    raise ConfigError(f"{source.at(section, key)}: unknown key {key!r} "
                                      f"in [{section}]")
    cfg = ExperimentConfig(parser, source)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not parser.has_option(section, key):
            raise ConfigError(f"override {item!r}: unknown key [{section}] {key}")
        cfg.set(section, key, value.strip())
    return cfg


def default_variation(seed: int = 0) -> VariationConfig:
    """Shipped variation parameters including the calibrated coefficients."""
    return load_config().variation(seed)


def write_calibrated(temp_coeff: float, refresh_coeff: float, path=None, note: str = "") -> Path:
    path = Path(path) if path is not None else data_path(CALIBRATED_INI)
    lines = ["# Generated by `divasim calibrate`; do not edit by hand."]
    if note:
        lines += [f"# {line}" for line in note.splitlines()]
    lines += ["[variation]", f"temp_coeff = {float(temp_coeff)!r}",
              f"refresh_coeff = {float(refresh_coeff)!r}", ""]
    path.write_text("\n".join(lines))
    return path
