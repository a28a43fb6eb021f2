"""Discriminator feature masks over arm observations and actions.

A mask picks which slice of the raw (observation, action) record the
discriminator sees. END_EFFECTOR_TARGET is deliberately body-invariant: its
width is 2 for any link count, so demonstrations recorded on one arm load
unchanged for another.
"""

from __future__ import annotations

import numpy as np

FULL_STATE = "FULL_STATE"
STATE_ACTION = "STATE_ACTION"
END_EFFECTOR_TARGET = "END_EFFECTOR_TARGET"

MASKS = (FULL_STATE, STATE_ACTION, END_EFFECTOR_TARGET)


def validate_mask(mask: str) -> str:
    if mask not in MASKS:
        raise ValueError(f"unknown feature mask {mask!r}, expected one of {MASKS}")
    return mask


def feature_names(mask: str, n_links: int) -> list[str]:
    validate_mask(mask)
    joints = range(1, n_links + 1)
    ee = ["ee_to_target_x", "ee_to_target_y"]
    if mask == END_EFFECTOR_TARGET:
        return ee
    names = ([f"sin_q{i}" for i in joints] + [f"cos_q{i}" for i in joints]
             + [f"qdot{i}" for i in joints] + ee)
    if mask == STATE_ACTION:
        names += [f"action{i}" for i in joints]
    return names


def feature_width(mask: str, n_links: int) -> int:
    return len(feature_names(mask, n_links))


def extract(mask: str, obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Feature row for one step; actions enter clipped to [-1, 1]."""
    validate_mask(mask)
    if mask == END_EFFECTOR_TARGET:
        return np.asarray(obs[-2:], dtype=np.float64).copy()
    if mask == FULL_STATE:
        return np.asarray(obs, dtype=np.float64).copy()
    return np.concatenate([obs, np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)])
