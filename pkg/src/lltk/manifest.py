"""Run manifests: what ran, with which config and seeds, reading and writing which files."""

import os
import shlex
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import io as lio
from .config import echo


def _now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class RunManifest:
    """Collects inputs and outputs of one command and writes them as ``key = value`` lines.

    File paths are stored relative to ``root`` when they live under it.
    Hashes are 64-bit FNV-1a of the file bytes.
    """

    def __init__(self, command: str, argv, root, config=None):
        self.command = command
        self.argv = list(argv)
        self.root = Path(root)
        self.config = config
        self.seeds = {}
        self.inputs = []
        self.outputs = []
        self.extra = []
        self.started = _now()

    def _rel(self, path) -> str:
        path = Path(path)
        try:
            return os.path.relpath(path.resolve(), self.root.resolve())
        except ValueError:
            return str(path.resolve())

    def add_input(self, path):
        p = Path(path)
        if p.exists() and p not in self.inputs:
            self.inputs.append(p)

    def add_output(self, path):
        p = Path(path)
        if p.exists() and p not in self.outputs:
            self.outputs.append(p)

    def add_outputs_under(self, directory, exclude=("manifest.txt",)):
        for p in sorted(Path(directory).rglob("*")):
            if p.is_file() and p.name not in exclude:
                self.add_output(p)

    def note(self, key, value):
        self.extra.append((key, value))

    def items(self):
        out = [("tool", "lltk"), ("version", __version__), ("command", self.command),
               ("argv", " ".join(shlex.quote(a) for a in self.argv))]
        if self.config is not None:
            out += [(f"config.{k}", "" if v is None else v) for k, v in echo(self.config)]
        out += [(f"seed.{k}", v) for k, v in self.seeds.items()]
        out += self.extra
        for i, p in enumerate(self.inputs):
            out.append((f"input.{i}", f"{self._rel(p)} fnv1a64:{lio.file_hash(p)}"))
        for i, p in enumerate(self.outputs):
            out.append((f"output.{i}", f"{self._rel(p)} fnv1a64:{lio.file_hash(p)}"))
        out += [("started", self.started), ("finished", _now())]
        return out

    def write(self, path=None) -> Path:
        path = Path(path) if path else self.root / "manifest.txt"
        lio.write_kv(path, self.items())
        return path


def read_manifest_files(path):
    """``{relative path: hash}`` for inputs and outputs listed in a manifest."""
    kv = lio.read_kv(path)
    files = {}
    for k, v in kv.items():
        if k.startswith(("input.", "output.")):
            rel, _, h = v.rpartition(" fnv1a64:")
            files[rel] = h
    return files
