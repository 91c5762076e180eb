"""INI run configuration: parsing, validation and the resolved echo.

A run file has up to five sections (problem, optimizer, loop, data, output).
Every key is optional except data.path; unknown keys are rejected with their
full section.key path so typos fail loudly instead of silently falling back
to defaults.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass

from .adapt import LoopConfig
from .data import PRESETS, SOURCES
from .errors import ConfigError
from .objective import OptimizerConfig, ProblemParams


def _parse_float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: not a number: {raw!r}") from None


def _parse_int(section, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: not an integer: {raw!r}") from None


def _parse_sources(section, key, raw):
    names = tuple(s.strip() for s in raw.split(",") if s.strip())
    if not names:
        raise ConfigError(f"{section}.{key}: empty source list")
    return names


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved run description.

    ``shape`` is the ground-truth inclusion of the chosen preset (None when
    the config spells out problem parameters without a preset); data
    generation needs it, reconstruction does not.
    """

    preset: str | None
    shape: object
    problem: ProblemParams
    optimizer: OptimizerConfig
    loop: LoopConfig
    mode: str
    levels: int
    initial_n: int
    data_path: str
    fine_n: int
    noise_pct: float
    seed: int
    out_dir: str | None

    def resolved(self):
        """Canonical section/key/value echo for the run manifest.

        Feeding the result back through load_config reproduces this config
        exactly; floats are serialized with repr so the round trip is lossless.
        """
        out = {
            "problem": {
                "alpha": repr(float(self.problem.alpha)),
                "epsilon": repr(float(self.problem.epsilon)),
                "sigma": repr(float(self.problem.sigma)),
                "d0": repr(float(self.problem.d0)),
                "sources": ",".join(self.problem.sources),
            },
            "optimizer": {
                "tol": repr(float(self.optimizer.tol)),
                "max_iter": str(self.optimizer.max_iter),
                "memory": str(self.optimizer.memory),
                "armijo": repr(float(self.optimizer.armijo)),
                "max_halvings": str(self.optimizer.max_halvings),
            },
            "loop": {
                "mode": self.mode,
                "theta": repr(float(self.loop.theta)),
                "tol": repr(float(self.loop.tol)),
                "max_levels": str(self.loop.max_levels),
                "marking": self.loop.marking,
                "combine": self.loop.combine,
                "bisections": str(self.loop.bisections),
                "levels": str(self.levels),
                "initial_n": str(self.initial_n),
            },
            "data": {
                "path": self.data_path,
                "fine_n": str(self.fine_n),
                "noise_pct": repr(float(self.noise_pct)),
                "seed": str(self.seed),
            },
        }
        if self.preset is not None:
            out["problem"]["preset"] = self.preset
        if self.out_dir is not None:
            out["output"] = {"dir": self.out_dir}
        return out

    def to_ini(self):
        parser = configparser.ConfigParser()
        parser.read_dict(self.resolved())
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


_KNOWN = {
    "problem": {"preset", "alpha", "epsilon", "sigma", "d0", "sources"},
    "optimizer": {"tol", "max_iter", "memory", "armijo", "max_halvings"},
    "loop": {"mode", "theta", "tol", "max_levels", "marking", "combine",
             "bisections", "levels", "initial_n"},
    "data": {"path", "fine_n", "noise_pct", "seed"},
    "output": {"dir"},
}


def _check_keys(parser):
    for section in parser.sections():
        if section not in _KNOWN:
            raise ConfigError(f"{section}: unknown section")
        for key in parser[section]:
            if key not in _KNOWN[section]:
                raise ConfigError(f"{section}.{key}: unknown key")


def load_config(path_or_text) -> RunConfig:
    """Parse and validate a run configuration.

    Accepts a file path or (for tests and manifest round trips) the INI text
    itself when it contains a newline.
    """
    parser = configparser.ConfigParser()
    text = str(path_or_text)
    if "\n" in text:
        parser.read_string(text)
    else:
        try:
            with open(text) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {text}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {text}: {exc}") from None
    _check_keys(parser)

    prob = parser["problem"] if parser.has_section("problem") else {}
    preset_name = prob.get("preset")
    shape = None
    alpha, epsilon, sources = None, None, ("f1", "f2")
    if preset_name is not None:
        if preset_name not in PRESETS:
            known = ", ".join(sorted(PRESETS))
            raise ConfigError(
                f"problem.preset: unknown preset {preset_name!r} (valid: {known})")
        preset = PRESETS[preset_name]
        shape = preset.shape
        alpha, epsilon, sources = preset.alpha, preset.epsilon, preset.sources
    if "alpha" in prob:
        alpha = _parse_float("problem", "alpha", prob["alpha"])
    if "epsilon" in prob:
        epsilon = _parse_float("problem", "epsilon", prob["epsilon"])
    if alpha is None or epsilon is None:
        raise ConfigError("problem: needs a preset or explicit alpha and epsilon")
    sigma = _parse_float("problem", "sigma", prob.get("sigma", "1e-4"))
    d0 = _parse_float("problem", "d0", prob.get("d0", "0.1"))
    if "sources" in prob:
        sources = _parse_sources("problem", "sources", prob["sources"])
        for name in sources:
            if name not in SOURCES:
                known = ", ".join(sorted(SOURCES))
                raise ConfigError(
                    f"problem.sources: unknown source {name!r} (valid: {known})")
    try:
        problem = ProblemParams(alpha=alpha, epsilon=epsilon, sigma=sigma,
                                d0=d0, sources=sources)
    except ValueError as exc:
        raise ConfigError(f"problem: {exc}") from None

    osec = parser["optimizer"] if parser.has_section("optimizer") else {}
    try:
        optimizer = OptimizerConfig(
            tol=_parse_float("optimizer", "tol", osec.get("tol", "1e-6")),
            max_iter=_parse_int("optimizer", "max_iter", osec.get("max_iter", "200")),
            memory=_parse_int("optimizer", "memory", osec.get("memory", "10")),
            armijo=_parse_float("optimizer", "armijo", osec.get("armijo", "1e-4")),
            max_halvings=_parse_int("optimizer", "max_halvings",
                                    osec.get("max_halvings", "30")),
        )
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None

    lsec = parser["loop"] if parser.has_section("loop") else {}
    mode = lsec.get("mode", "adaptive")
    if mode not in ("adaptive", "uniform"):
        raise ConfigError(f"loop.mode: must be adaptive or uniform, got {mode!r}")
    try:
        loop = LoopConfig(
            theta=_parse_float("loop", "theta", lsec.get("theta", "0.65")),
            tol=_parse_float("loop", "tol", lsec.get("tol", "1e-6")),
            max_levels=_parse_int("loop", "max_levels", lsec.get("max_levels", "6")),
            marking=lsec.get("marking", "dorfler"),
            combine=lsec.get("combine", "max"),
            bisections=_parse_int("loop", "bisections", lsec.get("bisections", "3")),
        )
    except ValueError as exc:
        raise ConfigError(f"loop: {exc}") from None
    levels = _parse_int("loop", "levels", lsec.get("levels", "3"))
    if levels < 0:
        raise ConfigError("loop.levels: must be nonnegative")
    initial_n = _parse_int("loop", "initial_n", lsec.get("initial_n", "26"))
    if initial_n < 2:
        raise ConfigError("loop.initial_n: needs at least 2 points per side")

    dsec = parser["data"] if parser.has_section("data") else {}
    if "path" not in dsec:
        raise ConfigError("data.path: required")
    fine_n = _parse_int("data", "fine_n", dsec.get("fine_n", "401"))
    if fine_n < 2:
        raise ConfigError("data.fine_n: needs at least 2 points per side")
    noise_pct = _parse_float("data", "noise_pct", dsec.get("noise_pct", "0.0"))
    if noise_pct < 0:
        raise ConfigError("data.noise_pct: must be nonnegative")
    seed = _parse_int("data", "seed", dsec.get("seed", "0"))

    out_dir = parser["output"].get("dir") if parser.has_section("output") else None

    return RunConfig(preset=preset_name, shape=shape, problem=problem,
                     optimizer=optimizer, loop=loop, mode=mode, levels=levels,
                     initial_n=initial_n, data_path=dsec["path"], fine_n=fine_n,
                     noise_pct=noise_pct, seed=seed, out_dir=out_dir)
