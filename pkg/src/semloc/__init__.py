"""Monocular semantic localization toolkit.

Lane-marking pixels are lifted to the ground with a rotation-compensated
inverse perspective mapping, matched against a tiled semantic map of lane
points and poles, and the 6-DoF vehicle pose is refined by nonlinear least
squares. A deterministic simulator and an offline map builder close the loop.
"""

from .geometry import ImageLine, Line3D, PixelPoint, Pose
from .ipm import AttitudeAngles, CameraIntrinsics, MountCalibration
from .semantic_map import SemanticMap, map_load, map_save

__version__ = "0.1.0"

__all__ = ["AttitudeAngles", "CameraIntrinsics", "ImageLine", "Line3D", "MountCalibration",
           "PixelPoint", "Pose", "SemanticMap", "map_load", "map_save"]
