"""Edge-list and kernel-CSV files, plus run manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import PreconditionError
from .kernel import Graph, KernelMatrix, make_graph


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_edge_list(text: str) -> Graph:
    """Parse ``n m`` followed by ``m`` lines ``u v`` (0-indexed, ``#`` comments)."""
    lines = list(_data_lines(text))
    if not lines:
        raise PreconditionError("edge list is empty")
    try:
        n, m = (int(tok) for tok in lines[0][1].split())
    except ValueError as exc:
        raise PreconditionError(f"line {lines[0][0]}: header must be 'n m'") from exc
    body = lines[1:]
    if len(body) != m:
        raise PreconditionError(f"header announces {m} edges, found {len(body)}")
    edges = []
    for lineno, line in body:
        toks = line.split()
        if len(toks) != 2:
            raise PreconditionError(f"line {lineno}: expected 'u v'")
        try:
            edges.append((int(toks[0]), int(toks[1])))
        except ValueError as exc:
            raise PreconditionError(f"line {lineno}: vertex labels must be integers") from exc
    return make_graph(np.asarray(edges, dtype=np.int64).reshape(-1, 2), n)


def read_edge_list(path) -> Graph:
    return parse_edge_list(Path(path).read_text())


def format_edge_list(graph: Graph, comment: Optional[str] = None) -> str:
    buf = io.StringIO()
    if comment:
        for line in comment.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"{graph.n} {graph.m}\n")
    for u, v in graph.edges:
        buf.write(f"{u} {v}\n")
    return buf.getvalue()


def write_edge_list(graph: Graph, path, comment: Optional[str] = None) -> None:
    Path(path).write_text(format_edge_list(graph, comment))


def read_kernel_csv(path) -> KernelMatrix:
    """``N`` rows of ``N`` comma-separated decimals."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise PreconditionError(f"line {lineno}: non-numeric kernel entry") from exc
    if not rows or any(len(r) != len(rows) for r in rows):
        raise PreconditionError("kernel CSV must be a square table")
    return KernelMatrix(np.asarray(rows))


def write_kernel_csv(K: KernelMatrix, path) -> None:
    np.savetxt(path, K.dense(), delimiter=",", fmt="%.17g")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Provenance attached to every CLI output.

    Everything except ``wall_time`` and ``host`` determines the numbers.
    """

    command: str
    flags: dict
    inputs: dict = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = ""
    wall_time: float = 0.0
    host: str = field(default_factory=platform.node)

    @classmethod
    def start(cls, command: str, flags: dict, input_paths: Iterable[str] = (), seed=None):
        from . import __version__

        inputs = {os.fspath(p): sha256_file(p) for p in input_paths if p}
        m = cls(command=command, flags=flags, inputs=inputs, seed=seed, version=__version__)
        m._t0 = time.perf_counter()
        return m

    def finish(self) -> "RunManifest":
        self.wall_time = time.perf_counter() - getattr(self, "_t0", time.perf_counter())
        return self

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "flags": self.flags,
            "inputs": self.inputs,
            "seed": self.seed,
            "version": self.version,
            "wall_time": self.wall_time,
            "host": self.host,
        }

    def as_comment(self) -> str:
        return "# manifest: " + json.dumps(self.as_dict(), sort_keys=True)
