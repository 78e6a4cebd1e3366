"""Seeding, learning-rate schedule and checkpoint persistence."""

import zlib
from contextlib import contextmanager

import numpy as np
import torch


class TrainingDiverged(FloatingPointError):
    """Raised when the training loss becomes non-finite."""


def derive_seed(seed, stream):
    """Independent 32-bit seed for a named consumer (init, order, gate, augment)."""
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode())])
    return int(state.generate_state(1)[0])


def poly_factor(iteration, total, power=0.9):
    """``(1 - iteration / total) ** power``."""
    if total <= 0:
        raise ValueError(f"total iterations must be positive, got {total}")
    return max(0.0, 1.0 - iteration / total) ** power


@contextmanager
def deterministic_mode(enabled=True):
    """Single-threaded, deterministic-kernel execution for reproducible runs."""
    if not enabled:
        yield
        return
    threads = torch.get_num_threads()
    previous = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)
        torch.set_num_threads(threads)


def save_checkpoint(path, state_dict, params, seed, extra=None):
    payload = {
        "state_dict": {k: v.detach().cpu().clone() for k, v in state_dict.items()},
        "params": dict(params),
        "seed": seed,
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    return torch.load(path, map_location="cpu", weights_only=False)


def shape_mismatches(expected, found):
    """List of human-readable differences between two state dicts' tensor shapes."""
    problems = []
    for key in sorted(set(expected) | set(found)):
        if key not in found:
            problems.append(f"{key}: missing from checkpoint")
        elif key not in expected:
            problems.append(f"{key}: unexpected in checkpoint")
        elif tuple(expected[key].shape) != tuple(found[key].shape):
            problems.append(
                f"{key}: model {tuple(expected[key].shape)} vs checkpoint {tuple(found[key].shape)}"
            )
    return problems
