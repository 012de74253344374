"""Gait post-processing: stance/swing segmentation, duty and period metrics,
velocity statistics, and CSV trace export.

All functions operate on immutable traces sampled at the 100 Hz policy
rate.  Duty ratio is mean stance duration over mean swing duration (the
reported values exceed 1 because stance lasts longer than swing in a
healthy quadruped gait); it is NOT the classical stance/period fraction.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .kinematics import TrajectoryShape, foot_target_from_cpg

LEG_KEYS = ("fl", "fr", "hl", "hr")
TRANSIENT_CUT_S = 1.0
MIN_SEGMENT_S = 0.02


@dataclass
class GaitTrace:
    """Time-aligned telemetry series for one episode."""

    timestamps: np.ndarray                  # (T,)
    contacts: np.ndarray                    # (T, 4) bool
    body_velocity: np.ndarray               # (T, 3) body frame
    commands: np.ndarray                    # (T, 3) vx*, vy*, yaw*
    r: np.ndarray                           # (T, 4)
    theta: np.ndarray                       # (T, 4)
    phi: np.ndarray                         # (T, 4)
    foot_positions: np.ndarray              # (T, 4, 3) leg frame
    shape: TrajectoryShape = field(default_factory=TrajectoryShape)
    fell: bool = False
    trunk_height: np.ndarray = None         # (T,) optional, world z

    def __post_init__(self):
        t = len(self.timestamps)
        for name in ("contacts", "body_velocity", "commands", "r", "theta",
                     "phi", "foot_positions"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"{name} length does not match timestamps")
        if t > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    @property
    def dt(self):
        if len(self.timestamps) < 2:
            return 0.01
        return float(np.median(np.diff(self.timestamps)))

    @classmethod
    def from_rows(cls, rows, shape=None, fell=False):
        """Build from telemetry dict rows (see VectorEnv.telemetry_row)."""
        t = np.array([row["time"] for row in rows])
        get = lambda fmt: np.array(
            [[row[fmt.format(leg)] for leg in LEG_KEYS] for row in rows])
        feet = np.stack([
            get("foot_x_{}"), get("foot_y_{}"), get("foot_z_{}")], axis=-1)
        if shape is None and rows and "shape_h" in rows[0]:
            last = rows[-1]
            shape = TrajectoryShape(d_step=last["shape_dstep"], h=last["shape_h"],
                                    g_c=last["shape_gc"], g_p=last["shape_gp"])
        trunk = np.array([row.get("trunk_z", np.nan) for row in rows]) \
            if rows and "trunk_z" in rows[0] else None
        return cls(
            timestamps=t,
            contacts=get("contact_{}").astype(bool),
            body_velocity=np.array([[row["vx"], row["vy"], row["vz"]] for row in rows]),
            commands=np.array([[row["cmd_vx"], row["cmd_vy"], row["cmd_yaw"]]
                               for row in rows]),
            r=get("r_{}"), theta=get("theta_{}"), phi=get("phi_{}"),
            foot_positions=feet,
            shape=shape or TrajectoryShape(), fell=fell, trunk_height=trunk)


@dataclass
class Segment:
    phase: str       # "stance" | "swing"
    start: float     # s
    duration: float  # s


@dataclass
class GaitMetrics:
    duty_ratio: float = np.nan            # mean stance / mean swing duration
    phase_duty_ratio: float = np.nan      # same ratio from sin(theta) sign
    period: float = np.nan                # s
    mean_velocity: tuple = (np.nan,) * 3  # body frame, transient cut
    tracking_rmse: float = np.nan         # m/s, vx
    falls: int = 0
    available: bool = True

    def as_dict(self):
        return {
            "duty_ratio": self.duty_ratio,
            "phase_duty_ratio": self.phase_duty_ratio, "period": self.period,
            "mean_vx": self.mean_velocity[0], "mean_vy": self.mean_velocity[1],
            "mean_vz": self.mean_velocity[2],
            "tracking_rmse": self.tracking_rmse, "falls": self.falls,
            "available": self.available,
        }


def segment_contacts(contacts, dt=0.01, min_segment=MIN_SEGMENT_S):
    """Split per-leg boolean contact series into alternating stance/swing
    segments, merging runs shorter than min_segment into their neighbors.

    Returns (per-leg list of Segment, degenerate flags per leg).
    """
    contacts = np.asarray(contacts, dtype=bool)
    min_len = max(int(round(min_segment / dt)), 1)
    all_segments = []
    degenerate = []
    for leg in range(contacts.shape[1]):
        series = contacts[:, leg]
        runs = _run_lengths(series)
        runs = _merge_short_runs(runs, min_len)
        degenerate.append(len(runs) == 1)
        segs = []
        pos = 0
        for value, length in runs:
            segs.append(Segment("stance" if value else "swing", pos * dt, length * dt))
            pos += length
        all_segments.append(segs)
    return all_segments, np.array(degenerate)


def _run_lengths(series):
    runs = []
    start = 0
    for i in range(1, len(series) + 1):
        if i == len(series) or series[i] != series[start]:
            runs.append([bool(series[start]), i - start])
            start = i
    return runs


def _merge_short_runs(runs, min_len):
    runs = [list(r) for r in runs]
    while len(runs) > 1:
        lengths = [r[1] for r in runs]
        shortest = int(np.argmin(lengths))
        if lengths[shortest] >= min_len:
            break
        if shortest == 0:
            runs[1][1] += runs[0][1]
            del runs[0]
        elif shortest == len(runs) - 1:
            runs[-2][1] += runs[-1][1]
            del runs[-1]
        else:
            # absorbing an interior glitch joins its two neighbors
            runs[shortest - 1][1] += runs[shortest][1] + runs[shortest + 1][1]
            del runs[shortest:shortest + 2]
    return [(bool(v), l) for v, l in runs]


def duty_ratio_from_segments(all_segments):
    """Mean stance duration / mean swing duration across legs, interior
    segments only (edge segments are truncated by the observation window)."""
    stance, swing = [], []
    for segs in all_segments:
        interior = segs[1:-1] if len(segs) > 2 else []
        for seg in interior:
            (stance if seg.phase == "stance" else swing).append(seg.duration)
    if not stance or not swing:
        return np.nan
    return float(np.mean(stance) / np.mean(swing))


def phase_wrap_period(theta, dt=0.01):
    """Mean interval between phase wrap events (theta dropping by > pi)."""
    theta = np.asarray(theta)
    intervals = []
    for leg in range(theta.shape[1]):
        wraps = np.flatnonzero(np.diff(theta[:, leg]) < -np.pi)
        if len(wraps) >= 2:
            intervals.extend(np.diff(wraps) * dt)
    if not intervals:
        return np.nan
    return float(np.mean(intervals))


def contact_onset_period(all_segments):
    """Fallback period estimate: mean interval between stance onsets."""
    intervals = []
    for segs in all_segments:
        onsets = [s.start for s in segs if s.phase == "stance"]
        if len(onsets) >= 2:
            intervals.extend(np.diff(onsets))
    if not intervals:
        return np.nan
    return float(np.mean(intervals))


def gait_metrics(trace, transient_cut=TRANSIENT_CUT_S):
    """Evaluation quantities for one trace; needs at least 2 gait cycles."""
    dt = trace.dt
    cut = np.searchsorted(trace.timestamps, trace.timestamps[0] + transient_cut)
    if len(trace.timestamps) - cut < 10:
        return GaitMetrics(available=False, falls=int(trace.fell))
    contacts = trace.contacts[cut:]
    segments, degenerate = segment_contacts(contacts, dt)
    duty = duty_ratio_from_segments(segments)
    period = phase_wrap_period(trace.theta[cut:], dt)
    if not np.isfinite(period):
        period = contact_onset_period(segments)
    vel = trace.body_velocity[cut:]
    cmd = trace.commands[cut:]
    rmse = float(np.sqrt(np.mean((cmd[:, 0] - vel[:, 0]) ** 2)))
    # swing by oscillator phase (sin(theta) > 0); reported next to the
    # contact-based ratio since the two can disagree
    phase_stance = np.sin(trace.theta[cut:]) <= 0
    phase_segments, _ = segment_contacts(phase_stance, dt)
    phase_duty = duty_ratio_from_segments(phase_segments)
    cycles_seen = np.isfinite(period) and period > 0 \
        and (trace.timestamps[-1] - trace.timestamps[cut]) >= 2 * period
    return GaitMetrics(
        duty_ratio=duty, phase_duty_ratio=phase_duty, period=period,
        mean_velocity=tuple(float(x) for x in vel.mean(axis=0)),
        tracking_rmse=rmse, falls=int(trace.fell),
        available=bool(cycles_seen and np.isfinite(duty)))


CPG_HEADER = ["time"] + [f"{q}_{leg}" for q in ("r", "theta", "phi")
                         for leg in LEG_KEYS]
FOOT_XZ_HEADER = ["time"] + [f"{a}_{leg}" for a in ("x", "z") for leg in LEG_KEYS]
FOOT_REF_HEADER = ["theta", "x", "z"]
GAIT_DIAGRAM_HEADER = ["leg", "phase", "start", "duration"]


def export_traces(trace, what="all", path="."):
    """Write pinned-header CSV files; returns the list of paths written.

    foot_xz also gets a companion reference file: the nominal task-space
    curve at the trace's converged amplitude (one cycle, dense in theta).
    """
    import os
    os.makedirs(path, exist_ok=True)
    wanted = ("cpg_states", "foot_xz", "gait_diagram") if what == "all" else (what,)
    written = []
    for kind in wanted:
        if kind == "cpg_states":
            out = os.path.join(path, "cpg_states.csv")
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(CPG_HEADER)
                for i, t in enumerate(trace.timestamps):
                    w.writerow([repr(float(t))]
                               + [repr(float(v)) for v in trace.r[i]]
                               + [repr(float(v)) for v in trace.theta[i]]
                               + [repr(float(v)) for v in trace.phi[i]])
            written.append(out)
        elif kind == "foot_xz":
            out = os.path.join(path, "foot_xz.csv")
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(FOOT_XZ_HEADER)
                for i, t in enumerate(trace.timestamps):
                    w.writerow([repr(float(t))]
                               + [repr(float(v)) for v in trace.foot_positions[i, :, 0]]
                               + [repr(float(v)) for v in trace.foot_positions[i, :, 2]])
            written.append(out)
            written.append(_export_reference_curve(trace, path))
        elif kind == "gait_diagram":
            out = os.path.join(path, "gait_diagram.csv")
            segments, _ = segment_contacts(trace.contacts, trace.dt) \
                if len(trace.timestamps) else ([[] for _ in LEG_KEYS], None)
            with open(out, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(GAIT_DIAGRAM_HEADER)
                for leg, segs in zip(LEG_KEYS, segments):
                    for seg in segs:
                        w.writerow([leg, seg.phase, repr(seg.start), repr(seg.duration)])
            written.append(out)
        else:
            raise ValueError(f"unknown export kind {kind!r}")
    return written


def _export_reference_curve(trace, path, points=200):
    """Nominal open-loop foot curve at the converged amplitude."""
    import os
    r_bar = float(np.mean(trace.r)) if len(trace.r) else 1.5
    grid = np.linspace(0.0, 2.0 * np.pi, points, endpoint=False)
    pts = foot_target_from_cpg(np.full_like(grid, r_bar), grid,
                               np.zeros_like(grid), trace.shape)
    out = os.path.join(path, "foot_xz_ref.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FOOT_REF_HEADER)
        for th, p in zip(grid, pts):
            w.writerow([repr(float(th)), repr(float(p[0])), repr(float(p[2]))])
    return out


def load_trace_csv(path):
    """Re-parse an exported cpg_states/foot_xz CSV into column arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows) if rows else np.zeros((0, len(header)))
    return header, data
