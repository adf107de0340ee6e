"""Configuration loading, command pipelines, output writing and caching.

Config files are TOML (JSON accepted too, which is what the sidecar echo
uses). Every frequency key ends in ``_hz``, times in ``_s``, lengths in
``_nm`` or ``_per_m``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import os
import re
import shutil
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .chain import CA40_MASS_AMU, ChainConfig, PhononSpectrum, equilibrium_positions, lamb_dicke_params, normal_modes
from .couplings import (
    CouplingReport,
    FieldToneConfig,
    SpinTone,
    SpinToneConfig,
    design_couplings,
)
from .engines import EigenResult, LindbladSpec, converge_fock_cutoff, solve_params
from .errors import ConfigError
from .model import TWO_PI, ModelParams, mx_distribution, mx_values, photon_number
from .protocols import (
    DEFAULT_GAMMA_HZ,
    DEFAULT_PROBE_SITE,
    PhaseGrid,
    PreparedState,
    adiabatic_prepare,
    bangbang_prepare,
    bangbang_state,
    chain_shape,
    phase_scan,
    power_law_shape,
    probe_spectrum,
)

log = logging.getLogger(__name__)

COMMANDS = ("modes", "couplings", "ground-state", "spectrum", "phase-diagram", "prepare", "lindblad")
#: Frequencies above this are probably angular values entered by mistake.
SUSPICIOUS_HZ = 100e6

SIM_DEFAULTS = {
    "ground-state": {"levels": 4, "tol": 1e-8},
    "spectrum": {
        "probe": "sigma_minus",
        "site": None,
        "gamma_hz": DEFAULT_GAMMA_HZ,
        "points": 4001,
        "freq_min_hz": None,
        "freq_max_hz": None,
        "k_max": 400,
        "state": "ground",
        "T_prep_s": 10e-3,
        "shape": "sin2",
    },
    "phase-diagram": {
        "g_over_omega_c": [0.0, 1.0],
        "J0_over_omega_c": [0.0, -1.0],
        "profile": "collective",
        "normalization": "nearest",
        "levels": 4,
    },
    "prepare": {
        "protocol": "adiabatic",
        "T_prep_s": 10e-3,
        "shape": "sin2",
        "T_max_s": 7e-3,
        "lambda_bounds": [0.05, 20.0],
        "grid": [24, 24],
        "budget": 400,
    },
    "lindblad": {"T2_s": 100e-3, "heating_per_s": 10.0, "T_prep_s": 10e-3, "shape": "sin2"},
}


# -- config --------------------------------------------------------------------


@dataclass
class RunConfig:
    """Validated run configuration; ``data`` is the canonical nested dict."""

    data: dict
    source: str | None = None
    warnings: list = field(default_factory=list)

    @property
    def seed(self):
        return self.data["seed"]

    @property
    def chain(self):
        return self.data["chain"]

    @property
    def lasers(self):
        return self.data.get("lasers", {})

    @property
    def model(self):
        return self.data["model"]

    @property
    def output(self):
        return self.data["output"]

    def simulation(self, command):
        return self.data["simulation"][command]

    def canonical_json(self):
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self, *sections):
        """SHA-256 of the canonical form, optionally restricted to some sections."""
        d = self.data if not sections else {k: self.data.get(k) for k in sections}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def chain_config(self) -> ChainConfig:
        c = self.chain
        for key in ("mass_amu", "trap_freqs_hz"):
            if c.get(key) is None:
                raise ConfigError(f"chain.{key}", "required for this command")
        if c.get("wavevectors_per_m") is not None:
            k = tuple(c["wavevectors_per_m"])
        else:
            k = (2 * np.pi / (c["wavelength_nm"] * 1e-9),) * 2
        try:
            return ChainConfig(c["N"], c["mass_amu"], tuple(c["trap_freqs_hz"]), k)
        except ValueError as exc:
            raise ConfigError("chain", str(exc)) from None


def _locate(text, path):
    """Best-effort line number of the last key of ``path`` in TOML ``text``."""
    if not text:
        return None
    key = path.split(".")[-1]
    key = re.sub(r"\[\d+\]$", "", key)
    for n, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line):
            return n
    return None


class _Validator:
    def __init__(self, text):
        self.text = text
        self.warnings = []

    def fail(self, path, reason):
        raise ConfigError(path, reason, _locate(self.text, path))

    def number(self, d, key, path, required=False, positive=False, nonneg=False, default=None):
        if key not in d or d[key] is None:
            if required:
                self.fail(path, "missing required value")
            return default
        v = d[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(path, f"expected a number, got {v!r}")
        v = float(v)
        if not np.isfinite(v):
            self.fail(path, "must be finite")
        if positive and v <= 0:
            self.fail(path, f"must be positive, got {v:g}")
        if nonneg and v < 0:
            self.fail(path, f"must be non-negative, got {v:g}")
        if path.endswith("_hz") and abs(v) > SUSPICIOUS_HZ:
            self.warn(path, v)
        return v

    def numbers(self, d, key, path, length=None, required=False, positive=False):
        if key not in d or d[key] is None:
            if required:
                self.fail(path, "missing required value")
            return None
        v = d[key]
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            self.fail(path, f"expected a list of numbers, got {v!r}")
        if length is not None and len(v) != length:
            self.fail(path, f"expected {length} values, got {len(v)}")
        out = [float(x) for x in v]
        if positive and min(out) <= 0:
            self.fail(path, "all values must be positive")
        if path.endswith("_hz") and out and max(abs(x) for x in out) > SUSPICIOUS_HZ:
            self.warn(path, max(abs(x) for x in out))
        return out

    def warn(self, path, v):
        msg = f"{path} = {v:g} Hz exceeds {SUSPICIOUS_HZ:g} Hz; angular frequency entered instead of Hz?"
        self.warnings.append(msg)
        warnings.warn(msg, stacklevel=4)


def _validate(raw: dict, text=None):
    v = _Validator(text)
    known = {"seed", "chain", "lasers", "model", "simulation", "output"}
    for k in raw:
        if k not in known:
            v.fail(k, "unknown section")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        v.fail("seed", "must be a non-negative integer")

    ch = raw.get("chain")
    if not isinstance(ch, dict):
        v.fail("chain", "missing required section")
    N = ch.get("N")
    if isinstance(N, bool) or not isinstance(N, int) or N < 1:
        v.fail("chain.N", f"must be a positive integer, got {N!r}")
    chain = {"N": N}
    chain["mass_amu"] = v.number(ch, "mass_amu", "chain.mass_amu", positive=True, default=CA40_MASS_AMU)
    chain["trap_freqs_hz"] = v.numbers(ch, "trap_freqs_hz", "chain.trap_freqs_hz", length=3, positive=True)
    if ch.get("wavelength_nm") is not None and ch.get("wavevectors_per_m") is not None:
        v.fail("chain.wavevectors_per_m", "give either wavelength_nm or wavevectors_per_m, not both")
    chain["wavevectors_per_m"] = v.numbers(ch, "wavevectors_per_m", "chain.wavevectors_per_m", length=2, positive=True)
    chain["wavelength_nm"] = None if chain["wavevectors_per_m"] else v.number(
        ch, "wavelength_nm", "chain.wavelength_nm", positive=True, default=729.0
    )
    extra = set(ch) - {"N", "mass_amu", "trap_freqs_hz", "wavelength_nm", "wavevectors_per_m"}
    if extra:
        v.fail(f"chain.{sorted(extra)[0]}", "unknown key")
    if chain["trap_freqs_hz"] is not None:
        nx, ny, nz = chain["trap_freqs_hz"]
        if not nz < nx < ny:
            v.fail("chain.trap_freqs_hz", "need nu_z < nu_x < nu_y for a linear chain")

    def profile(d, path):
        p = v.numbers(d, "profile", path)
        if p is not None and len(p) != N:
            v.fail(path, f"expected {N} values, got {len(p)}")
        return p

    lasers = {}
    las = raw.get("lasers", {}) or {}
    if "x" in las:
        x = las["x"]
        lasers["x"] = {
            "rabi_hz": v.number(x, "rabi_hz", "lasers.x.rabi_hz", required=True, nonneg=True),
            "delta_b_hz": v.number(x, "delta_b_hz", "lasers.x.delta_b_hz", required=True),
            "delta_r_hz": v.number(x, "delta_r_hz", "lasers.x.delta_r_hz", required=True),
            "profile": profile(x, "lasers.x.profile"),
        }
    if "y" in las:
        tones = las["y"].get("tones", [])
        if not isinstance(tones, list) or not tones:
            v.fail("lasers.y.tones", "expected a non-empty list of tones")
        lasers["y"] = {
            "tones": [
                {
                    "rabi_hz": v.number(t, "rabi_hz", f"lasers.y.tones[{i}].rabi_hz", required=True, nonneg=True),
                    "delta_hz": v.number(t, "delta_hz", f"lasers.y.tones[{i}].delta_hz", required=True),
                    "profile": profile(t, f"lasers.y.tones[{i}].profile"),
                }
                for i, t in enumerate(tones)
            ]
        }
    if (lasers or raw.get("lasers")) and chain["trap_freqs_hz"] is None:
        v.fail("chain.trap_freqs_hz", "missing required value")

    md = raw.get("model", {}) or {}
    model = {
        "n_max_initial": md.get("n_max_initial", 8),
        "inverted": bool(md.get("inverted", False)),
        "omega_c_hz": v.number(md, "omega_c_hz", "model.omega_c_hz", positive=True),
        "omega_0_hz": v.number(md, "omega_0_hz", "model.omega_0_hz"),
        "g_hz": None,
        "J_hz": None,
        "J0_hz": v.number(md, "J0_hz", "model.J0_hz"),
        "J_profile": md.get("J_profile", "collective"),
        "J_alpha": v.number(md, "J_alpha", "model.J_alpha", default=None),
        "tol": v.number(md, "tol", "model.tol", positive=True, default=1e-8),
    }
    n0 = model["n_max_initial"]
    if isinstance(n0, bool) or not isinstance(n0, int) or n0 < 0:
        v.fail("model.n_max_initial", "must be a non-negative integer")
    if "g_hz" in md:
        g = md["g_hz"]
        if isinstance(g, list):
            model["g_hz"] = v.numbers(md, "g_hz", "model.g_hz", length=N)
        else:
            model["g_hz"] = v.number(md, "g_hz", "model.g_hz")
    if "J_hz" in md:
        J = md["J_hz"]
        if not (isinstance(J, list) and len(J) == N and all(isinstance(r, list) and len(r) == N for r in J)):
            v.fail("model.J_hz", f"expected an {N}x{N} matrix")
        model["J_hz"] = [[float(x) for x in r] for r in J]
        Jm = np.array(model["J_hz"])
        if not np.allclose(Jm, Jm.T) or np.any(np.diag(Jm) != 0):
            v.fail("model.J_hz", "must be symmetric with zero diagonal")
    if model["J_profile"] not in ("collective", "power_law"):
        v.fail("model.J_profile", "must be 'collective' or 'power_law'")
    if model["J_profile"] == "power_law" and model["J_alpha"] is None:
        v.fail("model.J_alpha", "required for a power_law profile")
    extra = set(md) - set(model)
    if extra:
        v.fail(f"model.{sorted(extra)[0]}", "unknown key")
    # exactly one source per model quantity
    field_override = [k for k in ("omega_c_hz", "omega_0_hz", "g_hz") if model[k] is not None]
    if "x" in lasers and field_override:
        v.fail(f"model.{field_override[0]}", "ambiguous source: lasers.x already determines this quantity")
    if "x" not in lasers and field_override and len(field_override) < 3:
        missing = sorted({"omega_c_hz", "omega_0_hz", "g_hz"} - set(field_override))[0]
        v.fail(f"model.{missing}", "overrides need omega_c_hz, omega_0_hz and g_hz together")
    if model["J_hz"] is not None and model["J0_hz"] is not None:
        v.fail("model.J0_hz", "ambiguous source: give J_hz or J0_hz, not both")
    if "y" in lasers and (model["J_hz"] is not None or model["J0_hz"] is not None):
        v.fail("model.J_hz" if model["J_hz"] is not None else "model.J0_hz",
               "ambiguous source: lasers.y already determines the interactions")
    if model["omega_c_hz"] is not None and model["omega_c_hz"] == 0:
        v.fail("model.omega_c_hz", "must be non-zero")

    sim_raw = raw.get("simulation", {}) or {}
    sim = {}
    for cmd, defaults in SIM_DEFAULTS.items():
        block = dict(sim_raw.get(cmd, {}) or {})
        extra = set(block) - set(defaults)
        if extra:
            v.fail(f"simulation.{cmd}.{sorted(extra)[0]}", "unknown key")
        merged = copy.deepcopy(defaults)
        merged.update(block)
        for k, val in merged.items():
            if k.endswith("_s") and val is not None:
                v.number(merged, k, f"simulation.{cmd}.{k}", positive=True)
            if k.endswith("_hz") and val is not None:
                v.number(merged, k, f"simulation.{cmd}.{k}")
        sim[cmd] = merged
    unknown = set(sim_raw) - set(SIM_DEFAULTS)
    if unknown:
        v.fail(f"simulation.{sorted(unknown)[0]}", "unknown command block")
    if sim["prepare"]["protocol"] not in ("adiabatic", "bang-bang"):
        v.fail("simulation.prepare.protocol", "must be 'adiabatic' or 'bang-bang'")
    if sim["phase-diagram"]["profile"] not in ("collective", "chain"):
        v.fail("simulation.phase-diagram.profile", "must be 'collective' or 'chain'")
    if sim["spectrum"]["probe"] not in ("sigma_minus", "a"):
        v.fail("simulation.spectrum.probe", "must be 'sigma_minus' or 'a'")
    if sim["spectrum"]["state"] not in ("ground", "adiabatic"):
        v.fail("simulation.spectrum.state", "must be 'ground' or 'adiabatic'")
    if sim["spectrum"]["site"] is None:
        sim["spectrum"]["site"] = min(DEFAULT_PROBE_SITE, N - 1)
    if not 0 <= int(sim["spectrum"]["site"]) < N:
        v.fail("simulation.spectrum.site", f"must index an ion in 0..{N - 1}")
    for cmd in ("spectrum", "prepare", "lindblad"):
        if sim[cmd].get("shape", "sin2") not in ("sin2", "linear"):
            v.fail(f"simulation.{cmd}.shape", "must be 'sin2' or 'linear'")

    out = raw.get("output", {}) or {}
    output = {
        "directory": str(out.get("directory", "out")),
        "formats": list(out.get("formats", ["csv", "json"])),
    }
    bad = set(output["formats"]) - {"csv", "json"}
    if bad:
        v.fail("output.formats", f"unsupported format {sorted(bad)[0]!r}")

    data = {"seed": seed, "chain": chain, "lasers": lasers, "model": model, "simulation": sim, "output": output}
    return data, v.warnings


def _drop_none(d):
    # echoed configs spell unset optional values as null
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def load_config(path) -> RunConfig:
    """Parse and validate a TOML or JSON run configuration.

    Raises
    ------
    ConfigError
        With the offending field path and, where possible, its line.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"JSON parse error: {exc.msg}", exc.lineno) from None
        text = None
    else:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            m = re.search(r"line (\d+)", str(exc))
            raise ConfigError(str(path), f"TOML parse error: {exc}", int(m.group(1)) if m else None) from None
    if isinstance(raw, dict) and isinstance(raw.get("config"), dict):
        # a sidecar written by run_command: the echo lives under "config"
        raw = _drop_none(raw["config"])
    data, warns = _validate(raw, text)
    return RunConfig(data, str(path), warns)


def config_from_dict(raw) -> RunConfig:
    data, warns = _validate(copy.deepcopy(raw))
    return RunConfig(data, None, warns)


# -- cache ----------------------------------------------------------------------


class Cache:
    """``<directory>/<stage>-<hash>.npz`` with a SHA-256 sidecar; writes are atomic."""

    def __init__(self, directory, enabled=True):
        self.directory = Path(directory)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self.warnings = []

    def _paths(self, stage, key):
        base = self.directory / f"{stage}-{key[:32]}"
        return base.with_suffix(".npz"), base.with_suffix(".sha256")

    def lookup(self, stage, key):
        """Arrays stored for ``(stage, key)`` or None on miss/corruption."""
        if not self.enabled:
            return None
        data_path, sum_path = self._paths(stage, key)
        if not data_path.exists():
            self.misses += 1
            return None
        try:
            blob = data_path.read_bytes()
            if hashlib.sha256(blob).hexdigest() != sum_path.read_text().strip():
                raise ValueError("checksum mismatch")
            with np.load(io.BytesIO(blob), allow_pickle=False) as z:
                out = {k: z[k] for k in z.files}
        except Exception as exc:
            msg = f"cache entry {data_path.name} unreadable ({exc}); recomputing"
            log.warning(msg)
            self.warnings.append(msg)
            self.misses += 1
            return None
        self.hits += 1
        log.info("cache hit: %s", data_path.name)
        return out

    def store(self, stage, key, **arrays):
        if not self.enabled:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        data_path, sum_path = self._paths(stage, key)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        blob = buf.getvalue()
        for path, content in ((data_path, blob), (sum_path, hashlib.sha256(blob).hexdigest().encode())):
            fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(content)
            os.replace(tmp, path)


def cache_lookup(cache: Cache, config_hash, stage):
    """Convenience wrapper: cached arrays for ``(stage, config_hash)`` or None."""
    return cache.lookup(stage, config_hash)


# -- outputs -----------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, rows):
    rows = list(rows)
    if not rows:
        raise ValueError(f"no rows for {path}")
    header = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class RunRecord:
    """Provenance for one command run (kept apart from numerical outputs)."""

    command: str
    config_hash: str
    version: str
    started: str
    finished: str = ""
    stage_times: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    files: dict = field(default_factory=dict)
    cache_hits: int = 0
    exit_code: int = 0

    def to_dict(self):
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "stage_times_s": self.stage_times,
            "warnings": self.warnings,
            "files": self.files,
            "cache_hits": self.cache_hits,
            "exit_code": self.exit_code,
        }


class _Stages:
    def __init__(self, record):
        self.record = record

    def run(self, name, fn, *args, **kwargs):
        t = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            exc.stage = name
            raise
        finally:
            self.record.stage_times[name] = round(time.perf_counter() - t, 6)


# -- pipeline pieces ---------------------------------------------------------------


def _spectrum_arrays(sp: PhononSpectrum):
    return {"freqs": sp.freqs, "modes": sp.modes, "eta": sp.lamb_dicke if sp.lamb_dicke is not None else np.array([])}


def compute_modes(cfg: RunConfig, cache: Cache):
    """Equilibrium positions and the three axis spectra, via the cache."""
    chain = cfg.chain_config()
    key = cfg.hash("chain")
    hit = cache.lookup("positions", key)
    if hit is None:
        u, scale = equilibrium_positions(chain)
        cache.store("positions", key, positions=u, scale=np.array(scale))
    else:
        u, scale = hit["positions"], float(hit["scale"])
    spectra = {}
    for ax in ("x", "y", "z"):
        hit = cache.lookup(f"modes_{ax}", key)
        if hit is None:
            sp = normal_modes(chain, u, ax)
            if ax != "z":
                sp = lamb_dicke_params(chain, sp)
            cache.store(f"modes_{ax}", key, **_spectrum_arrays(sp))
        else:
            eta = hit["eta"] if hit["eta"].size else None
            sp = PhononSpectrum(ax, hit["freqs"], hit["modes"], eta)
        spectra[ax] = sp
    return chain, u, float(scale), spectra


def compute_couplings(cfg: RunConfig, cache: Cache, spectra=None) -> CouplingReport:
    las = cfg.lasers
    if "x" not in las:
        raise ConfigError("lasers.x", "required for the coupling designer")
    chain, _, _, spectra = compute_modes(cfg, cache) if spectra is None else (cfg.chain_config(), None, None, spectra)
    x = las["x"]
    fld = FieldToneConfig(np.array(x["profile"]) if x["profile"] else x["rabi_hz"], x["delta_b_hz"], x["delta_r_hz"])
    tones = las.get("y", {}).get("tones", [])
    spin = SpinToneConfig(
        tuple(SpinTone(np.array(t["profile"]) if t["profile"] else t["rabi_hz"], t["delta_hz"]) for t in tones)
    )
    return design_couplings(chain, fld, spin, inverted=cfg.model["inverted"], spectra=spectra)


def model_params(cfg: RunConfig, cache: Cache):
    """ModelParams from the designer or from overrides; also returns the report (or None)."""
    m = cfg.model
    N = cfg.chain["N"]
    report = None
    if "x" in cfg.lasers:
        report = compute_couplings(cfg, cache)
        wc, w0, g, J = report.omega_c, report.omega_0, report.g, report.J
    else:
        if m["omega_c_hz"] is None:
            raise ConfigError("model.omega_c_hz", "no lasers.x block, so omega_c_hz, omega_0_hz and g_hz are required")
        wc, w0 = m["omega_c_hz"], m["omega_0_hz"]
        g = np.broadcast_to(np.asarray(m["g_hz"], dtype=float), (N,)).copy()
        if m["J_hz"] is not None:
            J = np.array(m["J_hz"])
        elif m["J0_hz"] is not None:
            if m["J_profile"] == "collective":
                J = m["J0_hz"] * (1 - np.eye(N)) / N
            else:
                J = m["J0_hz"] * power_law_shape(N, m["J_alpha"])
        else:
            J = np.zeros((N, N))
        if "y" in cfg.lasers:
            report = compute_couplings(cfg, cache)
            J = report.J
    return ModelParams(wc, w0, g, J, m["n_max_initial"]), report


def _params_key(params: ModelParams, extra=""):
    h = hashlib.sha256()
    for a in (np.array([params.omega_c, params.omega_0, params.n_max], dtype=float), params.g, params.J):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    h.update(extra.encode())
    return h.hexdigest()


def ground_solution(params: ModelParams, cache: Cache, k=2, tol=1e-8, seed=0):
    """Converged-cutoff eigenpairs, via the cache. Returns (n_max, EigenResult)."""
    key = _params_key(params, f"k={k};tol={tol!r};seed={seed}")
    hit = cache.lookup("eigen", key)
    if hit is not None:
        n = int(hit["n_max"])
        par = hit["parities"] if hit["parities"].size else None
        return n, EigenResult(hit["values"], hit["vectors"], hit["residuals"], par, n)
    if not np.any(params.g):
        n = 0
        eig = solve_params(params.with_cutoff(0), k=min(k, 2**params.N), tol=tol, seed=seed)
    else:
        n, _ = converge_fock_cutoff(params, tol=tol, k=k, seed=seed)
        eig = solve_params(params.with_cutoff(n), k=k, tol=tol, seed=seed)
    cache.store(
        "eigen", key, n_max=np.array(n), values=eig.values, vectors=eig.vectors, residuals=eig.residuals,
        parities=eig.parities if eig.parities is not None else np.array([]),
    )
    return n, eig


# -- commands ------------------------------------------------------------------------


def _cmd_modes(cfg, cache, out, st):
    chain, u, scale, spectra = st.run("modes", compute_modes, cfg, cache)
    files = {}
    for ax, sp in spectra.items():
        rows = []
        for n in range(sp.N):
            r = {"mode": n, "freq_hz": sp.freqs[n]}
            if sp.lamb_dicke is not None:
                r["lamb_dicke"] = sp.lamb_dicke[n]
            for i in range(sp.N):
                r[f"xi_{i}"] = sp.modes[i, n]
            rows.append(r)
        files[f"modes_{ax}.csv"] = rows
    sidecar = {"positions": u, "length_scale_m": scale, "positions_m": u * scale}
    return files, {"modes.json": sidecar}


def _cmd_couplings(cfg, cache, out, st):
    report = st.run("couplings", compute_couplings, cfg, cache)
    s = report.stats
    rows = [{"distance": int(r), "mean_abs_J_hz": p} for r, p in zip(s.distances, s.profile)]
    files = {"couplings_profile.csv": rows} if rows else {}
    return files, {"couplings.json": report.to_dict()}


def _cmd_ground_state(cfg, cache, out, st):
    sim = cfg.simulation("ground-state")
    params, _ = st.run("model", model_params, cfg, cache)
    n, eig = st.run("eigensolve", ground_solution, params, cache, k=int(sim["levels"]), tol=sim["tol"], seed=cfg.seed)
    psi = eig.ground_state
    rows = [
        {
            "level": k,
            "energy_hz": eig.values[k] / TWO_PI,
            "excitation_hz": (eig.values[k] - eig.values[0]) / TWO_PI,
            "parity": eig.parities[k] if eig.parities is not None else float("nan"),
            "residual": eig.residuals[k],
        }
        for k in range(len(eig.values))
    ]
    p = mx_distribution(psi, params.N, n)
    side = {
        "n_max": n,
        "photons": photon_number(psi, params.N, n),
        "m_x": mx_values(params.N),
        "p_mx": p,
        "params": _params_dict(params),
    }
    return {"ground_state.csv": rows}, {"ground_state.json": side}


def _params_dict(p: ModelParams):
    return {"omega_c_hz": p.omega_c, "omega_0_hz": p.omega_0, "g_hz": p.g, "J_hz": p.J, "n_max": p.n_max}


def _prepared_ground(params, cache, seed, tol=1e-8):
    n, eig = ground_solution(params, cache, k=2, tol=tol, seed=seed)
    p = params.with_cutoff(n)
    return PreparedState(eig.ground_state, 1.0, None, {"protocol": "exact"}, p, eig)


def _cmd_spectrum(cfg, cache, out, st):
    sim = cfg.simulation("spectrum")
    params, _ = st.run("model", model_params, cfg, cache)
    if sim["state"] == "ground":
        prepared = st.run("ground-state", _prepared_ground, params, cache, cfg.seed)
    else:
        n, _ = ground_solution(params, cache, seed=cfg.seed)
        prepared = st.run("prepare", adiabatic_prepare, params.with_cutoff(max(n, 1)), sim["T_prep_s"], shape=sim["shape"])
    freqs = None
    if sim["freq_min_hz"] is not None and sim["freq_max_hz"] is not None:
        freqs = np.linspace(sim["freq_min_hz"], sim["freq_max_hz"], int(sim["points"]))
    res = st.run(
        "spectrum", probe_spectrum, prepared, frequencies=freqs, gamma=sim["gamma_hz"], probe=sim["probe"],
        site=int(sim["site"]), k_max=int(sim["k_max"]), points=int(sim["points"]), seed=cfg.seed,
    )
    rows = [
        {"freq_hz": f, "relative": (f - res.omega_0) / res.omega_c, "S": s}
        for f, s in zip(res.frequencies, res.S)
    ]
    side = {
        "peaks_hz": res.peaks,
        "peaks_relative": res.relative(),
        "peak_heights": res.peak_heights,
        "sum_rule": res.sum_rule,
        "leaked_weight": res.leaked_weight,
        "gamma_hz": res.gamma,
        "n_max": prepared.params.n_max,
        "state": prepared.protocol,
        "fidelity": prepared.fidelity,
    }
    return {"spectrum.csv": rows}, {"spectrum.json": side}


def _cmd_phase_diagram(cfg, cache, out, st, threads=1):
    sim = cfg.simulation("phase-diagram")
    params, report = st.run("model", model_params, cfg, cache)
    shape = None
    if sim["profile"] == "chain":
        if not np.any(params.J):
            raise ConfigError("simulation.phase-diagram.profile", "chain profile needs a non-zero interaction matrix")
        shape = chain_shape(params.J, sim["normalization"])
    key = _params_key(params, json.dumps([sim, cfg.model["tol"], cfg.seed], sort_keys=True))
    hit = cache.lookup("phase_grid", key)
    if hit is not None:
        grid = _grid_from_arrays(hit, params, sim)
    else:
        grid = st.run(
            "scan", phase_scan, params.N, params.omega_c, params.omega_0, sim["g_over_omega_c"],
            sim["J0_over_omega_c"], profile=sim["profile"], shape=shape, n_levels=int(sim["levels"]),
            n_start=max(params.n_max, 2), tol=cfg.model["tol"], threads=threads, seed=cfg.seed,
        )
        if not grid.errors:
            cache.store("phase_grid", key, **{k: getattr(grid, k) for k in _GRID_ARRAYS})
    rows = list(grid.rows())
    phases = grid.phase
    for r, ph in zip(rows, phases.ravel()):
        r["phase"] = ph
    side = {
        "g_over_omega_c": grid.g,
        "J0_over_omega_c": grid.J0,
        "profile": grid.profile,
        "omega_c_hz": grid.omega_c,
        "omega_0_hz": grid.omega_0,
        "N": grid.N,
        "errors": {f"{i},{j}": e for (i, j), e in grid.errors.items()},
    }
    return {"phase_diagram.csv": rows}, {"phase_diagram.json": side}


_GRID_ARRAYS = ("energy", "gap", "photons", "p_mx", "bimodal", "boundary", "levels", "level_weights", "n_max")


def _grid_from_arrays(arrays, params, sim):
    return PhaseGrid(
        g=np.asarray(sim["g_over_omega_c"], dtype=float), J0=np.asarray(sim["J0_over_omega_c"], dtype=float),
        N=params.N, omega_c=params.omega_c, omega_0=params.omega_0, profile=sim["profile"],
        **{k: arrays[k] for k in _GRID_ARRAYS},
    )


def _cmd_prepare(cfg, cache, out, st):
    sim = cfg.simulation("prepare")
    params, _ = st.run("model", model_params, cfg, cache)
    n, _ = st.run("cutoff", ground_solution, params, cache, seed=cfg.seed)
    p = params.with_cutoff(max(n, 1) if np.any(params.g) else 0)
    if sim["protocol"] == "adiabatic":
        ps = st.run("prepare", adiabatic_prepare, p, sim["T_prep_s"], shape=sim["shape"], seed=cfg.seed)
        row = {"protocol": "adiabatic", "duration_s": ps.duration, "fidelity": ps.fidelity, "photons": ps.photon_number}
        side = {"protocol": ps.protocol, "n_max": p.n_max}
    else:
        bb = st.run(
            "prepare", bangbang_prepare, p, lam_bounds=tuple(sim["lambda_bounds"]), T_max=sim["T_max_s"],
            budget=int(sim["budget"]), grid=tuple(sim["grid"]), seed=cfg.seed,
        )
        ps = bangbang_state(bb, p)
        row = {"protocol": "bang-bang", "duration_s": bb.T, "fidelity": bb.fidelity, "photons": ps.photon_number,
               "omega_1_hz": bb.omega_1}
        side = {"protocol": bb.to_dict(), "n_max": p.n_max,
                "trace": [{"omega_1_hz": a, "hold_s": b, "best_fidelity": c} for a, b, c in bb.trace]}
    return {"prepare.csv": [row]}, {"prepare.json": side}


def _cmd_lindblad(cfg, cache, out, st):
    sim = cfg.simulation("lindblad")
    params, _ = st.run("model", model_params, cfg, cache)
    n, _ = st.run("cutoff", ground_solution, params, cache, seed=cfg.seed)
    p = params.with_cutoff(max(n, 1) if np.any(params.g) else 0)
    closed = st.run("closed", adiabatic_prepare, p, sim["T_prep_s"], shape=sim["shape"], seed=cfg.seed)
    spec = LindbladSpec(T2=sim["T2_s"], heating=sim["heating_per_s"])
    open_ = st.run("open", adiabatic_prepare, p, sim["T_prep_s"], shape=sim["shape"], lindblad=spec, seed=cfg.seed)
    rows = [
        {"case": "closed", "T2_s": float("inf"), "heating_per_s": 0.0, "fidelity": closed.fidelity,
         "photons": closed.photon_number},
        {"case": "open", "T2_s": sim["T2_s"], "heating_per_s": sim["heating_per_s"], "fidelity": open_.fidelity,
         "photons": open_.photon_number},
    ]
    side = {"fidelity_reduction": closed.fidelity - open_.fidelity, "n_max": p.n_max, "T_prep_s": sim["T_prep_s"]}
    return {"lindblad.csv": rows}, {"lindblad.json": side}


_DISPATCH = {
    "modes": _cmd_modes,
    "couplings": _cmd_couplings,
    "ground-state": _cmd_ground_state,
    "spectrum": _cmd_spectrum,
    "phase-diagram": _cmd_phase_diagram,
    "prepare": _cmd_prepare,
    "lindblad": _cmd_lindblad,
}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_command(cfg: RunConfig, command, out_dir=None, use_cache=True, threads=1) -> RunRecord:
    """Execute ``command`` and write its outputs into the output directory.

    Numerical files (CSV and the ``<command>.json`` sidecar) depend only on
    the config and seed. Timestamps and timings go to ``run_record.json``.
    On failure nothing but the cache is left behind.
    """
    if command not in COMMANDS:
        raise ConfigError("command", f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    out = Path(out_dir if out_dir is not None else cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    cache = Cache(out / ".cache", enabled=use_cache)
    record = RunRecord(command, cfg.hash(), __version__, datetime.now(timezone.utc).isoformat())
    record.warnings.extend(cfg.warnings)
    st = _Stages(record)
    fn = _DISPATCH[command]
    staging = Path(tempfile.mkdtemp(dir=out, prefix=".staging-"))
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            kwargs = {"threads": threads} if command == "phase-diagram" else {}
            csvs, jsons = fn(cfg, cache, out, st, **kwargs)
        for w in caught:
            log.warning("%s", w.message)
            record.warnings.append(str(w.message))
        formats = cfg.output["formats"]
        written = []
        if "csv" in formats:
            for name, rows in csvs.items():
                write_csv(staging / name, rows)
                written.append(name)
        for name, obj in jsons.items():
            obj = dict(obj)
            obj["config"] = cfg.data
            obj["seed"] = cfg.seed
            obj["command"] = command
            write_json(staging / name, obj)
            written.append(name)
        for name in written:
            os.replace(staging / name, out / name)
            record.files[name] = _sha256(out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    record.warnings.extend(cache.warnings)
    record.cache_hits = cache.hits
    record.finished = datetime.now(timezone.utc).isoformat()
    write_json(out / "run_record.json", record.to_dict())
    return record
