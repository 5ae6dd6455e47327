"""Named deterministic random streams used by the training drivers."""

from __future__ import annotations

import torch

# Fixed offsets so each stream is independent of draws made on the others.
# Keeping GAN sampling, attack-side sampling, image-order shuffling and
# one-time initialization on separate streams lets degenerate runs (e.g. a
# combined run whose detector gradient is zero) line up draw-for-draw with
# a plain GAN training run under the same seed.
_STREAM_OFFSETS = {
    "init": 0,
    "gan": 1,
    "attack": 2,
    "shuffle": 3,
}


def derive_rng(seed: int, stream: str) -> torch.Generator:
    """Return a CPU generator for one named stream of a run seed."""
    if stream not in _STREAM_OFFSETS:
        raise ValueError(f"unknown rng stream {stream!r}; expected one of {sorted(_STREAM_OFFSETS)}")
    gen = torch.Generator(device="cpu")
    gen.manual_seed(seed * 1009 + _STREAM_OFFSETS[stream])
    return gen


class RngBundle:
    """All random streams of one run, with state capture for resume."""

    def __init__(self, seed: int):
        self.seed = seed
        self.streams = {name: derive_rng(seed, name) for name in _STREAM_OFFSETS}

    def __getitem__(self, name: str) -> torch.Generator:
        return self.streams[name]

    def get_state(self) -> dict:
        return {name: gen.get_state() for name, gen in self.streams.items()}

    def set_state(self, state: dict) -> None:
        for name, blob in state.items():
            self.streams[name].set_state(blob)
