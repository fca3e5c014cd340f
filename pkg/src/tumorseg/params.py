"""Named parameter arrays with freeze flags, and the NPY+manifest checkpoint."""

from __future__ import annotations

import fnmatch
import json
import re
from collections.abc import Callable, Iterable, Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volio import read_npy, write_npy

MANIFEST = "manifest.json"


@dataclass(frozen=True, eq=False)
class Param:
    values: np.ndarray
    frozen: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float32)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


class ParamTree(Mapping[str, Param]):
    """Ordered, immutable map of parameter name -> :class:`Param`.

    Updates go through :meth:`replace_values` / :meth:`with_frozen`, which
    return new trees and refuse to change a parameter's shape.
    """

    def __init__(self, items: Iterable[tuple[str, Param]] | Mapping[str, Param] = ()):
        if isinstance(items, Mapping):
            items = items.items()
        self._params: dict[str, Param] = {}
        for name, p in items:
            if name in self._params:
                raise ValueError(f"duplicate parameter name {name!r}")
            self._params[name] = p if isinstance(p, Param) else Param(p)

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        return f"ParamTree({len(self)} params, {self.count()} values)"

    def array(self, name: str) -> np.ndarray:
        return self._params[name].values

    def count(self) -> int:
        return int(sum(p.values.size for p in self._params.values()))

    def trainable(self) -> list[str]:
        return [n for n, p in self._params.items() if not p.frozen]

    def replace_values(self, updates: Mapping[str, np.ndarray]) -> ParamTree:
        out = dict(self._params)
        for name, v in updates.items():
            old = self._params[name]
            v = np.asarray(v)
            if v.shape != old.shape:
                raise ValueError(f"{name}: shape {v.shape} != {old.shape}")
            out[name] = Param(v, old.frozen)
        return ParamTree(out)

    def with_frozen(self, frozen: Callable[[str], bool]) -> ParamTree:
        return ParamTree((n, Param(p.values, bool(frozen(n)))) for n, p in self._params.items())

    def equal(self, other: ParamTree) -> bool:
        return list(self) == list(other) and all(
            self[n].frozen == other[n].frozen and self[n].values.tobytes() == other[n].values.tobytes()
            for n in self
        )


def select(names: Iterable[str], patterns: Iterable[str]) -> list[str]:
    pats = list(patterns)
    return [n for n in names if any(fnmatch.fnmatchcase(n, p) for p in pats)]


def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def save_checkpoint(tree: ParamTree, directory, **manifest_extra) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    used: set[str] = set()
    for i, (name, p) in enumerate(tree.items()):
        fname = _sanitize(name) + ".npy"
        if fname in used:
            fname = f"{i:04d}_{fname}"
        used.add(fname)
        write_npy(p.values, directory / fname)
        entries[name] = {"file": fname, "shape": list(p.shape), "frozen": p.frozen}
    manifest = dict(manifest_extra)
    manifest["params"] = entries
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def load_checkpoint(directory) -> tuple[ParamTree, dict]:
    directory = Path(directory)
    mpath = directory / MANIFEST
    if not mpath.exists():
        raise FileNotFoundError(f"{directory}: no {MANIFEST}; not a checkpoint directory")
    manifest = json.loads(mpath.read_text())
    items = []
    for name, entry in manifest["params"].items():
        arr = read_npy(directory / entry["file"])
        if list(arr.shape) != list(entry["shape"]):
            raise ValueError(f"{name}: stored shape {arr.shape} != manifest {entry['shape']}")
        items.append((name, Param(arr, bool(entry.get("frozen", False)))))
    return ParamTree(items), manifest
