"""Deterministic toy physics world.

A single ball bounces between walls at positions 0 and 1 on a line. Frames
are 1-D pixel rows: a Gaussian bump (peak +1 over a -1 background) renders
the ball. Condition 0 reflects elastically; condition 1 reflects with
restitution 0.5. Everything is a pure function, so episodes are bit-exact
replayable from (seed, condition).
"""

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_PIXELS = 32
DEFAULT_FRAMES_PER_CHUNK = 4
DEFAULT_CONDITIONS = 2
DEFAULT_SIGMA_PX = 1.5
DEFAULT_V_MAX = 0.25

_DAMPED_RESTITUTION = 0.5
_DECODE_MASS_FLOOR = 1e-9

DATASET_MAGIC = "SGDS-DATA v1"


class ContractViolation(Exception):
    """A precondition on a worldsim operation was violated."""


class UndecodableFrameError(Exception):
    """Frame carries no intensity mass above the background."""


class DatasetFormatError(Exception):
    """Dataset file is malformed."""


@dataclass(frozen=True)
class WorldConfig:
    pixels: int = DEFAULT_PIXELS
    frames_per_chunk: int = DEFAULT_FRAMES_PER_CHUNK
    conditions: int = DEFAULT_CONDITIONS
    sigma_px: float = DEFAULT_SIGMA_PX
    v_max: float = DEFAULT_V_MAX

    def __post_init__(self):
        if self.pixels < 8:
            raise ValueError("pixels must be >= 8")
        if self.frames_per_chunk < 1:
            raise ValueError("frames_per_chunk must be >= 1")
        if self.conditions < 1:
            raise ValueError("conditions must be >= 1")

    @property
    def chunk_dim(self) -> int:
        return self.pixels * self.frames_per_chunk

    def interior_margin(self) -> float:
        """Distance from a wall (in position units) below which the bump is
        visibly clipped: two pixel sigmas."""
        return 2.0 * self.sigma_px / (self.pixels - 1)


@dataclass(frozen=True)
class WorldState:
    position: float
    velocity: float


@dataclass(frozen=True)
class Episode:
    condition: int
    frames: np.ndarray  # (num_frames, pixels)
    seed: int


def restitution(condition: int) -> float:
    return 1.0 if condition == 0 else _DAMPED_RESTITUTION


def step_state(state: WorldState, condition) -> WorldState:
    """Advance one frame step with wall reflection at 0 and 1.

    Damped conditions scale both the rebound distance and the velocity by
    the restitution factor at each wall contact.
    """
    if condition is None:
        raise ContractViolation("step_state requires a concrete condition, not NULL")
    e = restitution(condition)
    p = state.position + state.velocity
    v = state.velocity
    while p < 0.0 or p > 1.0:
        if p > 1.0:
            p = 1.0 - (p - 1.0) * e
        else:
            p = -p * e
        v = -v * e
    return WorldState(p, v)


def render_frame(state: WorldState, pixels: int, sigma_px: float = DEFAULT_SIGMA_PX):
    """Gaussian bump centered at position*(pixels-1), peak +1 on -1 ground."""
    if pixels < 8:
        raise ValueError("pixels must be >= 8")
    center = state.position * (pixels - 1)
    grid = np.arange(pixels, dtype=np.float64)
    return -1.0 + 2.0 * np.exp(-0.5 * ((grid - center) / sigma_px) ** 2)


def _draw_initial_state(rng, v_max):
    position = rng.uniform(0.1, 0.9)
    speed = rng.uniform(0.05, 0.2)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    velocity = sign * min(speed, v_max)
    return WorldState(position, velocity)


def _simulate(state, condition, num_frames):
    positions = np.empty(num_frames)
    for k in range(num_frames):
        positions[k] = state.position
        state = step_state(state, condition)
    return positions


def make_episode(
    cfg: WorldConfig, seed: int, condition: int, num_frames: int
) -> Episode:
    """Simulate and render one episode, deterministic in (seed, condition).

    Initial states whose first chunk ends within two pixel sigmas of a wall
    are redrawn, so the final two frames of the leading (context) chunk are
    always cleanly decodable.
    """
    if condition is None:
        raise ContractViolation("make_episode requires a concrete condition")
    if num_frames % cfg.frames_per_chunk != 0:
        raise ValueError(
            f"num_frames={num_frames} is not a multiple of "
            f"frames_per_chunk={cfg.frames_per_chunk}"
        )
    rng = np.random.default_rng(seed)
    margin = cfg.interior_margin()
    lo, hi = margin, 1.0 - margin
    for _ in range(1000):
        state = _draw_initial_state(rng, cfg.v_max)
        positions = _simulate(state, condition, num_frames)
        f = cfg.frames_per_chunk
        if lo <= positions[f - 2] <= hi and lo <= positions[f - 1] <= hi:
            break
    else:
        raise RuntimeError(f"no interior-context start found for seed {seed}")
    frames = np.stack(
        [
            render_frame(WorldState(p, 0.0), cfg.pixels, cfg.sigma_px)
            for p in positions
        ]
    )
    return Episode(condition=condition, frames=frames, seed=seed)


def chunk_episode(episode: Episode, frames_per_chunk: int) -> list[np.ndarray]:
    """Consecutive non-overlapping chunks of frames, order preserved."""
    frames = episode.frames
    if len(frames) % frames_per_chunk != 0:
        raise ValueError("episode length is not a whole number of chunks")
    return [
        frames[k : k + frames_per_chunk].copy()
        for k in range(0, len(frames), frames_per_chunk)
    ]


def decode_position(frame: np.ndarray) -> float:
    """Intensity centroid of the frame, normalized to [0, 1].

    Pixels are clamped to [-1, 1] first so raw sampler output decodes too.
    """
    frame = np.clip(np.asarray(frame, dtype=np.float64), -1.0, 1.0)
    mass = (frame + 1.0) / 2.0
    total = mass.sum()
    if total < _DECODE_MASS_FLOOR:
        raise UndecodableFrameError("frame has no intensity above background")
    centroid = float(mass @ np.arange(frame.size)) / total
    return centroid / (frame.size - 1)


def plausibility_error(generated, context, condition) -> float:
    """RMSE between decoded generated positions and a re-simulation.

    The last two context frames fix (position, velocity); the simulation
    then advances one step per generated frame. Undecodable generated
    frames contribute an error of 1.0 each.
    """
    context = np.asarray(context, dtype=np.float64)
    if len(context) < 2:
        raise ValueError("plausibility_error needs at least two context frames")
    p_prev = decode_position(context[-2])
    p_last = decode_position(context[-1])
    state = WorldState(p_last, p_last - p_prev)
    sq_sum = 0.0
    generated = np.asarray(generated, dtype=np.float64)
    for frame in generated:
        state = step_state(state, condition)
        try:
            decoded = decode_position(frame)
        except UndecodableFrameError:
            sq_sum += 1.0
            continue
        sq_sum += (decoded - state.position) ** 2
    return float(np.sqrt(sq_sum / len(generated)))


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(path, cfg: WorldConfig, episodes) -> None:
    """Write episodes to the v1 dataset format.

    Header line declares D/F/C; each record is seed (int64), condition id
    (int32), frame count (int32), then the frames as little-endian float32.
    """
    header = (
        f"{DATASET_MAGIC}, D={cfg.pixels}, F={cfg.frames_per_chunk}, "
        f"C={cfg.conditions}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for ep in episodes:
            fh.write(struct.pack("<qii", ep.seed, ep.condition, len(ep.frames)))
            fh.write(np.asarray(ep.frames, dtype="<f4").tobytes())


def load_dataset(path):
    """Read a v1 dataset file; returns ((D, F, C), list of Episodes).

    Loaded frames are float32 values widened to float64.
    """
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").rstrip("\n")
        parts = [p.strip() for p in header.split(",")]
        if len(parts) != 4 or parts[0] != DATASET_MAGIC:
            raise DatasetFormatError(f"{path}: bad dataset header {header!r}")
        try:
            fields = dict(p.split("=", 1) for p in parts[1:])
            pixels = int(fields["D"])
            frames_per_chunk = int(fields["F"])
            conditions = int(fields["C"])
        except (KeyError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: bad dataset header {header!r}") from exc
        episodes = []
        record = struct.Struct("<qii")
        while True:
            head = fh.read(record.size)
            if not head:
                break
            if len(head) < record.size:
                raise DatasetFormatError(f"{path}: truncated record header")
            seed, condition, num_frames = record.unpack(head)
            payload = fh.read(4 * num_frames * pixels)
            if len(payload) < 4 * num_frames * pixels:
                raise DatasetFormatError(f"{path}: truncated frame payload")
            frames = (
                np.frombuffer(payload, dtype="<f4")
                .astype(np.float64)
                .reshape(num_frames, pixels)
            )
            episodes.append(Episode(condition=condition, frames=frames, seed=seed))
    return (pixels, frames_per_chunk, conditions), episodes
