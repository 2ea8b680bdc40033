"""Per-style replay memory and assembly of the adaptation training set."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .styledata import Dataset, derive_seed


class ProtocolError(ValueError):
    pass


@dataclass
class ReplayBuffer:
    stores: dict[str, Dataset] = field(default_factory=dict)
    quotas: dict[str, int] = field(default_factory=dict)

    @property
    def styles(self) -> list[str]:
        return list(self.stores)

    def __len__(self) -> int:
        return sum(len(d) for d in self.stores.values())

    def counts(self) -> dict[str, int]:
        return {k: len(d) for k, d in self.stores.items()}

    def snapshot(self) -> str:
        """Style keys, quotas and retained sample ids as JSON text."""
        return json.dumps(
            {"styles": [{"tag": k, "quota": self.quotas[k], "ids": list(d.ids)} for k, d in self.stores.items()]},
            indent=1,
        )

    @classmethod
    def restore(cls, text: str, pool: Dataset) -> ReplayBuffer:
        """Rebuild from :meth:`snapshot` output, looking samples up by id in ``pool``."""
        where = {sid: i for i, sid in enumerate(pool.ids)}
        buf = cls()
        for entry in json.loads(text)["styles"]:
            try:
                idx = [where[sid] for sid in entry["ids"]]
            except KeyError as exc:
                raise ProtocolError(f"sample {exc.args[0]!r} missing from pool") from None
            buf.stores[entry["tag"]] = pool.subset(idx)
            buf.quotas[entry["tag"]] = entry["quota"]
        return buf


def init_buffer(d0: Dataset, n0: int, seed: int) -> ReplayBuffer:
    """Keep min(n0, available) uniformly chosen samples of every style in ``d0``."""
    if n0 < 1:
        raise ValueError("N0 must be >= 1")
    buf = ReplayBuffer()
    for tag in d0.style_order():
        members = np.flatnonzero(d0.styles == tag)
        rng = np.random.default_rng(derive_seed(seed, tag, "replay"))
        keep = np.sort(rng.choice(len(members), size=min(n0, len(members)), replace=False))
        buf.stores[tag] = d0.subset(members[keep])
        buf.quotas[tag] = n0
    return buf


def extend(buf: ReplayBuffer, dk: Dataset) -> ReplayBuffer:
    """Return a new buffer that also holds every sample of the single-style set ``dk``."""
    tags = dk.style_order()
    if len(tags) != 1:
        raise ProtocolError(f"adaptation set must hold exactly one style, got {tags}")
    tag = tags[0]
    if tag in buf.stores:
        raise ProtocolError(f"style {tag!r} is already known")
    out = ReplayBuffer(dict(buf.stores), dict(buf.quotas))
    out.stores[tag] = dk
    out.quotas[tag] = len(dk)
    return out


def assemble(buf: ReplayBuffer) -> Dataset:
    """Concatenate retained samples in style insertion order (no shuffling)."""
    if not buf.stores:
        raise ValueError("replay buffer is empty")
    return Dataset.concat(list(buf.stores.values()))
