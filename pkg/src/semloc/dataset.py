"""Text formats for localizer datasets and trajectories.

Dataset records, one frame after another::

    FRAME <id> <timestamp>
    ODO <tx> <ty> <tz> <qx> <qy> <qz> <qw>
    ATT <roll> <pitch> <yaw>
    C <u> <v>
    PL <a> <b> <c> <v_min> <v_max>

Trajectory lines: ``<timestamp> <tx> <ty> <tz> <qx> <qy> <qz> <qw>``.
Lines starting with ``#`` are comments in both formats.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import FormatError
from .geometry import ImageLine, Pose
from .ipm import AttitudeAngles
from .localizer import DatasetFrame, PoleLineObservation

DATASET_COMMENT = "# semloc dataset: FRAME/ODO/ATT/C/PL records\n"
TRAJECTORY_COMMENT = "# timestamp tx ty tz qx qy qz qw\n"


def _pose_fields(p: Pose) -> str:
    return " ".join(f"{v:.9f}" for v in (*p.translation, *p.rotation))


def dumps_dataset(frames) -> str:
    out = [DATASET_COMMENT]
    for fr in frames:
        out.append(f"FRAME {fr.frame_id} {fr.timestamp:.6f}\n")
        out.append(f"ODO {_pose_fields(fr.odometry)}\n")
        a = fr.attitude
        out.append(f"ATT {a.roll:.9f} {a.pitch:.9f} {a.yaw:.9f}\n")
        out.extend(f"C {u:.3f} {v:.3f}\n" for u, v in np.asarray(fr.lane_pixels).tolist())
        for pl in fr.pole_lines:
            a_, b_, c_ = pl.line.coeffs()
            out.append(f"PL {a_:.9f} {b_:.9f} {c_:.6f} {pl.v_min:.3f} {pl.v_max:.3f}\n")
    return "".join(out)


def save_dataset(frames, path: os.PathLike | str) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_dataset(frames).encode("ascii"))


def _nums(fields, n, no):
    if len(fields) != n:
        raise FormatError(f"expected {n} values, got {len(fields)}", no)
    try:
        vals = [float(f) for f in fields]
    except ValueError:
        raise FormatError(f"non-numeric value in {fields}", no) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError("non-finite value", no)
    return vals


def loads_dataset(text: str) -> list[DatasetFrame]:
    frames = []
    cur = None

    def close():
        if cur is None:
            return
        if cur["odo"] is None:
            raise FormatError(f"frame {cur['id']} has no ODO record", cur["line"])
        frames.append(DatasetFrame(cur["id"], cur["ts"], cur["odo"], cur["att"],
                                   np.array(cur["px"], dtype=float).reshape(-1, 2), cur["pl"]))

    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, *f = line.split()
        if tag == "FRAME":
            close()
            if len(f) != 2:
                raise FormatError("FRAME needs <id> <timestamp>", no)
            try:
                fid = int(f[0])
            except ValueError:
                raise FormatError(f"bad frame id {f[0]!r}", no) from None
            ts = _nums(f[1:], 1, no)[0]
            if frames and ts <= frames[-1].timestamp or cur is not None and ts <= cur["ts"]:
                raise FormatError("timestamps must increase", no)
            cur = {"id": fid, "ts": ts, "odo": None, "att": AttitudeAngles(), "px": [], "pl": [],
                   "line": no}
            continue
        if cur is None:
            raise FormatError(f"{tag} record before the first FRAME", no)
        if tag == "ODO":
            v = _nums(f, 7, no)
            try:
                cur["odo"] = Pose(np.array(v[3:]), np.array(v[:3]))
            except ValueError as exc:
                raise FormatError(str(exc), no) from None
        elif tag == "ATT":
            try:
                cur["att"] = AttitudeAngles(*_nums(f, 3, no))
            except ValueError as exc:
                raise FormatError(str(exc), no) from None
        elif tag == "C":
            cur["px"].append(_nums(f, 2, no))
        elif tag == "PL":
            a, b, c, vmin, vmax = _nums(f, 5, no)
            try:
                cur["pl"].append(PoleLineObservation(ImageLine(a, b, c), vmin, vmax))
            except ValueError as exc:
                raise FormatError(str(exc), no) from None
        else:
            raise FormatError(f"unknown record type {tag!r}", no)
    close()
    return frames


def load_dataset(path: os.PathLike | str) -> list[DatasetFrame]:
    with open(path, "rb") as fh:
        return loads_dataset(fh.read().decode("ascii"))


def dumps_trajectory(timestamps, poses) -> str:
    lines = [TRAJECTORY_COMMENT]
    lines.extend(f"{t:.6f} {_pose_fields(p)}\n" for t, p in zip(timestamps, poses))
    return "".join(lines)


def save_trajectory(timestamps, poses, path: os.PathLike | str) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_trajectory(timestamps, poses).encode("ascii"))


def loads_trajectory(text: str) -> tuple[list[float], list[Pose]]:
    stamps, poses = [], []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        v = _nums(line.split(), 8, no)
        try:
            poses.append(Pose(np.array(v[4:]), np.array(v[1:4])))
        except ValueError as exc:
            raise FormatError(str(exc), no) from None
        stamps.append(v[0])
    return stamps, poses


def load_trajectory(path: os.PathLike | str) -> tuple[list[float], list[Pose]]:
    with open(path, "rb") as fh:
        return loads_trajectory(fh.read().decode("ascii"))
