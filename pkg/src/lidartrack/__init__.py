"""Motion-centric single-object tracking in LiDAR point clouds.

The package is organized around the stages of the tracker:

- :mod:`lidartrack.geometry` -- oriented boxes, rigid motions, rotated IoU.
- :mod:`lidartrack.pointcloud` -- two-frame spatial-temporal clouds and their
  prior/box-aware feature channels.
- :mod:`lidartrack.nn` -- a minimal numpy-based differentiable network library.
- :mod:`lidartrack.pipeline` -- segmentation, two-stage box prediction, the
  frame-by-frame tracking loop, the training loss and loop.
- :mod:`lidartrack.augment` -- training-time box and motion perturbations.
- :mod:`lidartrack.data` -- synthetic scene generation, the native on-disk
  format, and KITTI tracking-format ingestion.
- :mod:`lidartrack.evaluation` -- one-pass evaluation metrics, classical
  baselines, and the distractor robustness protocol.
- :mod:`lidartrack.cli` -- the ``lidartrack`` command.
"""

from lidartrack.geometry import RTM, Box3D

__all__ = ["Box3D", "RTM"]
__version__ = "0.1.0"
