"""Run configs, run directories and manifests.

A run is keyed by the hash of its resolved config plus the content hashes of
its input files, so identical invocations land in the same directory and
rewrite byte-identical result files. Timestamps live only in the manifest.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonschema

from . import __version__
from .errors import ConfigError, DataError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

RUN_ROOT_ENV = "PROPGEN_RUN_ROOT"
MANIFEST = "manifest.json"
RESULTS = "results.json"


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps(obj: Any) -> str:
    """Stable pretty JSON used for every result file."""
    return json.dumps(obj, indent=1, sort_keys=False, allow_nan=False) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e.strerror}", str(path)) from None
    try:
        if path.suffix == ".toml":
            obj = tomllib.loads(raw.decode())
        else:
            obj = json.loads(raw)
    except (ValueError, UnicodeDecodeError) as e:
        raise ConfigError(f"cannot parse config file: {e}", str(path)) from None
    if not isinstance(obj, dict):
        raise ConfigError("config file must hold a table/object", str(path))
    return obj


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=value``; the value is read as JSON when possible, else as a string."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}", "--set")
    try:
        parsed = json.loads(value)
    except ValueError:
        parsed = value
    return key.split("."), parsed


def set_path(cfg: dict, keys: list[str], value: Any) -> None:
    node = cfg
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = node[k] = {}
        node = nxt
    node[keys[-1]] = value


def merge_config(defaults: Mapping, file_cfg: Mapping, flags: Mapping, overrides: Iterable[str]) -> dict:
    """defaults < config file < explicit flags < ``--set`` overrides."""
    cfg = json.loads(json.dumps(dict(defaults)))
    for src in (file_cfg, flags):
        for k, v in src.items():
            if v is not None:
                cfg[k] = v
    for text in overrides:
        keys, value = parse_override(text)
        set_path(cfg, keys, value)
    return cfg


def _field_path(err: jsonschema.ValidationError) -> str:
    parts = ["config"]
    for p in err.absolute_path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def validate_config(cfg: dict, schema: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        first = errors[0]
        raise ConfigError(first.message, _field_path(first))


def resolve(base: Path | None, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


@dataclass
class Run:
    """A run directory being assembled in a private temp dir, then moved into place."""

    subcommand: str
    config: dict
    inputs: dict[str, str]  # logical name -> file sha256
    root: Path
    seeds: dict = field(default_factory=dict)
    outputs: dict[str, bytes] = field(default_factory=dict)
    started: str = field(default_factory=lambda: now())

    @property
    def config_hash(self) -> str:
        return sha256_bytes(canonical_json(self.config).encode())

    @property
    def run_hash(self) -> str:
        key = {"subcommand": self.subcommand, "config": self.config, "inputs": self.inputs, "version": __version__}
        return sha256_bytes(canonical_json(key).encode())

    @property
    def name(self) -> str:
        return f"{self.subcommand}-{self.run_hash[:12]}"

    def add(self, name: str, content: str | bytes) -> None:
        self.outputs[name] = content.encode() if isinstance(content, str) else content

    def add_json(self, name: str, obj: Any) -> None:
        self.add(name, dumps(obj))

    def provenance(self) -> dict:
        """Deterministic provenance block embedded in result files."""
        return {"subcommand": self.subcommand, "config_sha256": self.config_hash, "inputs": self.inputs, "tool_version": __version__}

    def manifest(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "tool_version": __version__,
            "config": self.config,
            "config_sha256": self.config_hash,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "outputs": {n: sha256_bytes(b) for n, b in sorted(self.outputs.items())},
            "started": self.started,
            "finished": now(),
        }

    def commit(self, directory: Path | None = None) -> Path:
        final = directory if directory is not None else self.root / self.name
        final.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(prefix=f".{self.name}.", dir=final.parent))
        try:
            for name, data in self.outputs.items():
                (tmp / name).parent.mkdir(parents=True, exist_ok=True)
                (tmp / name).write_bytes(data)
            (tmp / MANIFEST).write_text(dumps(self.manifest()))
            if final.exists():
                shutil.rmtree(final)
            os.replace(tmp, final)
        finally:
            if tmp.exists():
                shutil.rmtree(tmp, ignore_errors=True)
        return final


def now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def run_root(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get(RUN_ROOT_ENV) or "runs")


def load_run(directory: str | Path) -> tuple[dict, dict]:
    """(manifest, results) of a finished run."""
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.is_file():
        raise DataError(f"no manifest in {directory}")
    manifest = json.loads(mpath.read_text())
    rpath = directory / RESULTS
    if not rpath.is_file():
        raise DataError(f"no {RESULTS} in {directory}")
    return manifest, json.loads(rpath.read_text())
