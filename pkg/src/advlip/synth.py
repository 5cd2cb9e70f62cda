"""Synthetic domain-shift corpus: a Gaussian blob moving along a
class-specific direction, plus a static class-positioned cue mark, with
per-domain translation, intensity, noise, and interference-pattern shifts.

The interference pattern is the interesting part.  Each shifted domain adds
a fixed full-field random pattern whose amplitude flickers per frame.  The
pattern projects onto every learned template with fixed coefficients, so a
model trained only on the clean domain carries the corruption into its
logits in proportion to its own weights: the damage does not fade as
training matures.  Because the pattern spans a single fixed direction in
pixel space, an adversarially aligned trunk can remove it with a cheap
projection that costs almost nothing on the clean domain, which is exactly
the kind of repair marginal feature alignment can express.  Flicker rather
than a static overlay: per-pixel standardization would absorb any constant
structure, so the shift has to live in the fluctuations.

Domain 0 is always rendered untransformed, so cross-domain degradation is
attributable to the other domains' shifts alone.  Stand-in for multi-speaker
lip data at desk scale: word class -> trajectory direction plus appearance
cue, speaker -> domain transform.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .data import Dataset, FrameSequence, split_speaker
from .errors import ConfigError
from .tensor import Rng, derive_seed

# (translate_px, gain_spread, offset_spread, extra_noise_std, distractor_amp,
# scene_rot) per level.  scene_rot turns the whole scene (trajectories and cue
# ring) as a fraction of one class slot; 0.5 would park shifted-domain
# sequences halfway between class directions, and the graded levels keep it
# at 0 because a rotated scene is a shift marginal alignment cannot undo.
SHIFT_LEVELS: Dict[str, Tuple[float, float, float, float, float, float]] = {
    "none": (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    "low": (0.15, 0.15, 0.03, 0.015, 1.5, 0.0),
    "medium": (0.3, 0.3, 0.06, 0.03, 3.0, 0.0),
    "high": (0.5, 0.5, 0.1, 0.05, 6.0, 0.0),
}

_DOMAIN_DIRECTIONS = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0))


@dataclass(frozen=True)
class SynthConfig:
    n_domains: int = 2
    n_classes: int = 5
    seqs_per_class: int = 60  # per domain
    t_min: int = 6
    t_max: int = 12
    height: int = 20
    width: int = 20
    blob_radius: float = 1.3
    base_noise: float = 0.3
    angle_jitter: float = 0.45
    start_jitter: float = 2.0
    translate_px: float = 0.5
    gain_spread: float = 0.5
    offset_spread: float = 0.1
    shift_noise: float = 0.05
    distractor_amp: float = 6.0
    cue_amp: float = 0.3
    scene_rot: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_domains < 2:
            raise ConfigError(f"n_domains must be >= 2, got {self.n_domains}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.t_min < 2:
            raise ConfigError(f"t_min must be >= 2, got {self.t_min}")
        if self.t_max < self.t_min:
            raise ConfigError(f"t_max must be >= t_min, got {self.t_max} < {self.t_min}")
        if self.seqs_per_class < 11:
            raise ConfigError(
                f"seqs_per_class must be >= 11 to allow 5 val + 5 test per class, "
                f"got {self.seqs_per_class}"
            )
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"image size must be >= 8x8, got {self.height}x{self.width}")
        if self.blob_radius <= 0:
            raise ConfigError(f"blob_radius must be positive, got {self.blob_radius}")
        for name in (
            "base_noise",
            "angle_jitter",
            "start_jitter",
            "translate_px",
            "gain_spread",
            "offset_spread",
            "shift_noise",
            "distractor_amp",
            "cue_amp",
            "scene_rot",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def for_shift_level(cls, level: str, **overrides) -> "SynthConfig":
        if level not in SHIFT_LEVELS:
            raise ConfigError(f"shift level must be one of {sorted(SHIFT_LEVELS)}, got {level!r}")
        translate, gain, offset, noise, distractor, scene_rot = SHIFT_LEVELS[level]
        fields = dict(
            translate_px=translate,
            gain_spread=gain,
            offset_spread=offset,
            shift_noise=noise,
            distractor_amp=distractor,
            scene_rot=scene_rot,
        )
        fields.update(overrides)
        return cls(**fields)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown synthetic config fields: {sorted(unknown)}")
        return cls(**d)


def domain_transform(
    config: SynthConfig, domain: int
) -> Tuple[Tuple[float, float], float, float, float, float, float]:
    """(translation (dy, dx), intensity gain, intensity offset, extra noise
    std, interference amplitude, scene rotation in radians) for a domain.
    Domain 0 is the identity."""
    if domain == 0:
        return (0.0, 0.0), 1.0, 0.0, 0.0, 0.0, 0.0
    dy, dx = _DOMAIN_DIRECTIONS[(domain - 1) % len(_DOMAIN_DIRECTIONS)]
    scale = 1.0 + (domain - 1) // len(_DOMAIN_DIRECTIONS)  # widen for many domains
    translation = (dy * config.translate_px * scale, dx * config.translate_px * scale)
    gain = 1.0 + config.gain_spread
    offset = config.offset_spread
    rot_delta = 2.0 * math.pi / config.n_classes * config.scene_rot * domain
    return translation, gain, offset, config.shift_noise, config.distractor_amp, rot_delta




def _render_sequence(
    config: SynthConfig, word: int, domain: int, rng: Rng
) -> np.ndarray:
    """Draw one sequence: a blob crossing the image along the word's
    direction, then the domain's shift applied on top."""
    h, w = config.height, config.width
    steps = int(rng.integers(config.t_min, config.t_max + 1))
    slot_angle = 2.0 * math.pi * word / config.n_classes
    jitter = (rng.random() * 2.0 - 1.0) * config.angle_jitter
    span = 0.5 * min(h, w) - config.blob_radius - 1.0
    start_dy = (rng.random() * 2.0 - 1.0) * config.start_jitter
    start_dx = (rng.random() * 2.0 - 1.0) * config.start_jitter

    (ty, tx), gain, offset, extra_noise, dist_amp, rot_delta = domain_transform(
        config, domain
    )
    # The rotation shift turns the whole scene: trajectory and cue ring move
    # together, like a tilted head.
    angle = slot_angle + rot_delta + jitter
    vy, vx = math.sin(angle), math.cos(angle)
    cy0 = (h - 1) / 2.0 - vy * span + start_dy
    cx0 = (w - 1) / 2.0 - vx * span + start_dx

    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    inv_two_r2 = 1.0 / (2.0 * config.blob_radius**2)

    # Static cue mark on a border ring at the class angle (rotated with the
    # scene).  Jitter draws are unconditional so a domain-0 sequence consumes
    # the same stream at every shift level.
    cue_angle = slot_angle + rot_delta
    cue_rho = 0.5 * min(h, w) - 1.5
    cue_y = (h - 1) / 2.0 + cue_rho * math.sin(cue_angle) + rng.random() - 0.5 + ty
    cue_x = (w - 1) / 2.0 + cue_rho * math.cos(cue_angle) + rng.random() - 0.5 + tx
    cue_r2 = (0.75 * config.blob_radius) ** 2
    cue_bump = config.cue_amp * np.exp(
        -((ys - cue_y) ** 2 + (xs - cue_x) ** 2) / (2.0 * cue_r2)
    )

    if dist_amp > 0.0:
        # Fixed full-field interference pattern, flickering in amplitude per
        # frame.  The pattern is deterministic per domain, so it projects
        # onto every learned template with fixed coefficients; a model
        # trained without it has no gradient signal to orthogonalize against
        # it, so the corruption scales with the template weights instead of
        # fading as they grow.
        pat_rng = Rng(derive_seed(config.seed, 7000 + domain), "synth")
        pattern = pat_rng.normal((h, w), std=1.0)

    frames = np.empty((steps, h, w), dtype=np.float64)
    for t in range(steps):
        frac = t / (steps - 1)
        cy = cy0 + vy * 2.0 * span * frac + ty
        cx = cx0 + vx * 2.0 * span * frac + tx
        bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) * inv_two_r2)
        frame = gain * (bump + cue_bump) + offset
        frame += rng.normal((h, w), std=config.base_noise)
        if extra_noise > 0.0:
            frame += rng.normal((h, w), std=extra_noise)
        if dist_amp > 0.0:
            # Flicker, not a static overlay: per-pixel standardization would
            # absorb any constant structure, so the shift must live in the
            # fluctuations.
            frame += (dist_amp * rng.random()) * pattern
        frames[t] = frame
    return frames.astype(np.float32)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Full corpus: n_domains x n_classes x seqs_per_class sequences, each
    domain split 5 val / 5 test per class, remainder train."""
    rng = Rng(config.seed, "synth")
    per_domain: List[List[FrameSequence]] = [[] for _ in range(config.n_domains)]
    seq_id = 0
    for domain in range(config.n_domains):
        for word in range(config.n_classes):
            for _ in range(config.seqs_per_class):
                frames = _render_sequence(config, word, domain, rng)
                per_domain[domain].append(
                    FrameSequence(seq_id, frames, word, speaker_id=domain)
                )
                seq_id += 1
    sequences: List[FrameSequence] = []
    for domain in range(config.n_domains):
        split_rng = Rng(derive_seed(config.seed, 1000 + domain), "shuffle")
        train, val, test = split_speaker(per_domain[domain], split_rng)
        sequences.extend(train + val + test)
    sequences.sort(key=lambda s: s.seq_id)
    return Dataset(config.height, config.width, sequences)
