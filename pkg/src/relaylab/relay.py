"""Analogue relay: transition database, exact retrieval, rollouts.

A RelayDatabase stores encoded source states next to the raw-field
transitions observed from them. Rollouts follow the ride schedule: a fresh
nearest-neighbour match on steps with t mod N_ride = 1 (every step when
N_ride = 1), otherwise the previous match advances along its source
trajectory; running off the end of a source trajectory forces a re-match.

Oracle variants are target-informed diagnostic probes, not deployable
methods: oracle matching retrieves with the true current state, oracle
magnitude rescales each borrowed delta to the true delta norm, and oracle
history swaps the predicted history window for the true one.
"""

from dataclasses import dataclass, field

import numpy as np

from .encoders import EncoderSpec, encode_frames
from .errors import DimensionMismatchError, EncodingError, RelayLabError


@dataclass(frozen=True)
class RelayDatabase:
    """Encoded source states paired with their observed transitions.

    Entries are ordered trajectory-major then frame-major; that order is
    the retrieval tie-break. successor[j] is the entry index holding the
    same trajectory's next frame, or -1 at trajectory ends. For history
    matching (history_length > 1) the encoded rows are the concatenation
    of the per-frame latents over the trailing window, oldest first.
    """

    encoded: np.ndarray        # (n, D) float64
    deltas: np.ndarray         # (n, nx, ny) float32
    next_frames: np.ndarray    # (n, nx, ny) float32
    provenance: np.ndarray     # (n, 2) int64 rows (trajectory_id, frame_id)
    successor: np.ndarray      # (n,) int64, -1 where absent
    history_length: int = 1
    norms: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.encoded.shape[0]
        if not (len(self.deltas) == len(self.next_frames)
                == len(self.provenance) == len(self.successor) == n):
            raise ValueError("database columns disagree in length")
        if self.norms is None:
            norms = np.linalg.norm(self.encoded, axis=1)
            if n and norms.min() <= 1e-12:
                bad = int(np.argmin(norms))
                raise EncodingError(
                    f"database entry {bad} (provenance "
                    f"{tuple(self.provenance[bad])}) has zero-norm encoding")
            object.__setattr__(self, "norms", norms)

    def __len__(self):
        return self.encoded.shape[0]

    @property
    def dim(self) -> int:
        return self.encoded.shape[1]


def build_database(trajectories, spec: EncoderSpec, frame_lo: int,
                   frame_hi: int, history_length: int = 1) -> RelayDatabase:
    """Harvest (encoded state, transition) pairs from source trajectories.

    One entry per frame f in [frame_lo, frame_hi - 1] of each trajectory;
    its delta and next frame come from frame f + 1. frame_hi must not
    exceed the last recorded frame index.
    """
    if frame_hi - frame_lo < 1:
        raise ValueError("need frame_hi - frame_lo >= 1")
    if history_length < 1:
        raise ValueError("history_length must be >= 1")
    if frame_lo - (history_length - 1) < 0:
        raise ValueError(
            f"history_length={history_length} needs frames before frame_lo")

    encoded_parts, delta_parts, next_parts, prov_parts, succ_parts = \
        [], [], [], [], []
    offset = 0
    for traj in trajectories:
        if frame_hi > traj.n_frames - 1:
            raise ValueError(
                f"trajectory {traj.trajectory_id} has {traj.n_frames} frames, "
                f"frame_hi={frame_hi} is out of range")
        frames = traj.frames
        n_entries = frame_hi - frame_lo
        lo_enc = frame_lo - (history_length - 1)
        keys = [(traj.trajectory_id, f) for f in range(lo_enc, frame_hi)]
        per_frame = encode_frames(spec, frames[lo_enc:frame_hi], keys=keys)
        if history_length == 1:
            enc = per_frame
        else:
            enc = np.concatenate(
                [per_frame[j:j + n_entries]
                 for j in range(history_length)], axis=1)
        encoded_parts.append(enc)
        delta_parts.append(frames[frame_lo + 1:frame_hi + 1]
                           - frames[frame_lo:frame_hi])
        next_parts.append(frames[frame_lo + 1:frame_hi + 1])
        prov = np.empty((n_entries, 2), dtype=np.int64)
        prov[:, 0] = traj.trajectory_id
        prov[:, 1] = np.arange(frame_lo, frame_hi)
        prov_parts.append(prov)
        succ = np.arange(offset + 1, offset + n_entries + 1, dtype=np.int64)
        succ[-1] = -1
        succ_parts.append(succ)
        offset += n_entries

    if not encoded_parts:
        raise ValueError("no trajectories supplied")
    return RelayDatabase(
        encoded=np.concatenate(encoded_parts),
        deltas=np.concatenate(delta_parts),
        next_frames=np.concatenate(next_parts),
        provenance=np.concatenate(prov_parts),
        successor=np.concatenate(succ_parts),
        history_length=history_length)


def nearest(db: RelayDatabase, query) -> int:
    """Exact argmin of cosine distance; ties go to the lowest entry index."""
    if len(db) == 0:
        raise RelayLabError("cannot search an empty database")
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.size != db.dim:
        raise DimensionMismatchError(
            f"query dimension {q.size} does not match database {db.dim}")
    qn = np.linalg.norm(q)
    if qn <= 1e-12:
        raise EncodingError("query has (near-)zero norm")
    scores = db.encoded @ (q / qn)
    distances = 1.0 - scores / db.norms
    return int(np.argmin(distances))


@dataclass(frozen=True)
class RolloutConfig:
    """Knobs of the relay rollout (Algorithm-style schedule plus probes)."""

    horizon: int
    ride_length: int = 3
    update_rule: str = "delta"
    alpha: float = 1.0
    oracle_matching: bool = False
    oracle_magnitude: bool = False
    history_length: int = 1
    oracle_history: bool = False

    def __post_init__(self):
        if self.horizon < 1 or self.ride_length < 1 or self.history_length < 1:
            raise ValueError("horizon, ride_length, history_length must be >= 1")
        if self.update_rule not in ("delta", "copy"):
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.oracle_magnitude and self.update_rule != "delta":
            raise ValueError("oracle_magnitude is defined for the delta rule")

    @property
    def needs_truth(self) -> bool:
        return self.oracle_matching or self.oracle_magnitude or self.oracle_history


@dataclass
class RolloutResult:
    """Predictions plus the per-step bookkeeping diagnostics read."""

    predictions: np.ndarray       # (T, nx, ny)
    matched_indices: np.ndarray   # (T,) int64
    borrowed_deltas: np.ndarray   # (T, nx, ny)
    rematch_steps: set            # 1-based steps with a fresh match
    forced_rematch_steps: set     # subset forced by trajectory ends

    def __post_init__(self):
        t = self.predictions.shape[0]
        if not (len(self.matched_indices) == len(self.borrowed_deltas) == t):
            raise ValueError("result columns disagree in length")
        if not self.forced_rematch_steps <= self.rematch_steps:
            raise ValueError("forced rematches must be rematch steps")


def _encode_window(spec, fields, keys):
    latents = encode_frames(spec, np.asarray(fields), keys=keys)
    return latents.ravel()  # oldest first, matching build_database


def relay_rollout(context, db: RelayDatabase, spec: EncoderSpec,
                  cfg: RolloutConfig, truth=None,
                  query_provenance=None) -> RolloutResult:
    """Autoregressive relay rollout from the last context frame.

    context holds the observed frames (at least history_length of them);
    truth, when supplied, holds the T target frames that follow and feeds
    the oracle probes. query_provenance = (trajectory_id, first_context
    frame_id) names the context frames so external encoders can look their
    latents up; external matching reads stored true-frame latents and
    therefore requires the corresponding oracle flag to be set explicitly.
    """
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 3 or context.shape[0] < cfg.history_length:
        raise ValueError("context must hold at least history_length frames")
    if cfg.history_length != db.history_length:
        raise DimensionMismatchError(
            f"rollout history_length={cfg.history_length} but database was "
            f"built with {db.history_length}")
    t_total = cfg.horizon
    if cfg.needs_truth and truth is None:
        raise ValueError("oracle probes need truth frames")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        if truth.shape[0] < t_total:
            raise ValueError(f"need {t_total} truth frames, got {truth.shape[0]}")

    uses_truth_queries = (cfg.oracle_matching if cfg.history_length == 1
                          else cfg.oracle_history)
    if spec.kind == "external":
        if not uses_truth_queries:
            raise EncodingError(
                "external latents cover stored frames only, so matching "
                "queries read true-frame latents; set oracle_matching "
                "(or oracle_history for history matching) to acknowledge")
        if query_provenance is None:
            raise EncodingError("external encoding requires query_provenance")

    n_ctx = context.shape[0]
    if query_provenance is not None:
        query_tid, ctx_start = query_provenance

    def state_at(j, predictions):
        """Field at step position j: j <= 0 reaches into the context window,
        j >= 1 is the j-th rollout position (true or predicted)."""
        if j <= 0:
            return context[n_ctx - 1 + j]
        return truth[j - 1] if uses_truth_queries else predictions[j - 1]

    def truth_state(i):
        """True field at the time position of prediction step i (0-based)."""
        return context[-1] if i == 0 else truth[i - 1]

    def query_vector(i, predictions):
        window = np.asarray([state_at(j, predictions)
                             for j in range(i - cfg.history_length + 1, i + 1)])
        keys = None
        if spec.kind == "external":
            last_fid = ctx_start + n_ctx - 1 + i
            keys = [(query_tid, last_fid - cfg.history_length + 1 + j)
                    for j in range(cfg.history_length)]
        return _encode_window(spec, window, keys)

    nx, ny = context.shape[1:]
    predictions = np.empty((t_total, nx, ny))
    borrowed = np.empty((t_total, nx, ny))
    matched = np.empty(t_total, dtype=np.int64)
    rematch_steps, forced_steps = set(), set()

    state = context[-1].copy()
    j_star = -1
    for t in range(1, t_total + 1):
        i = t - 1
        scheduled = cfg.ride_length == 1 or t % cfg.ride_length == 1
        if not scheduled:
            j_next = int(db.successor[j_star])
            if j_next < 0:
                scheduled = True
                forced_steps.add(t)
        if scheduled:
            j_star = nearest(db, query_vector(i, predictions))
            rematch_steps.add(t)
        else:
            j_star = j_next
        matched[i] = j_star

        if cfg.update_rule == "delta":
            delta = cfg.alpha * db.deltas[j_star].astype(np.float64)
            if cfg.oracle_magnitude:
                target = truth[i] - truth_state(i)
                dn = np.linalg.norm(delta)
                if dn > 0:
                    delta *= np.linalg.norm(target) / dn
            state = state + delta
            borrowed[i] = delta
        else:
            nxt = db.next_frames[j_star].astype(np.float64)
            borrowed[i] = db.deltas[j_star]
            state = nxt
        predictions[i] = state

    return RolloutResult(predictions=predictions, matched_indices=matched,
                         borrowed_deltas=borrowed,
                         rematch_steps=rematch_steps,
                         forced_rematch_steps=forced_steps)


def persistence_rollout(context, horizon: int):
    """Repeat the last context frame for the whole horizon."""
    context = np.asarray(context, dtype=np.float64)
    if context.ndim != 3 or context.shape[0] < 1:
        raise ValueError("context must hold at least one frame")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return np.repeat(context[-1][None], horizon, axis=0)
