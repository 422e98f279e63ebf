"""Build a minimal annotated sequence for the frontend integration tests.

A box of points slides along x over three frames; the semantic image labels
everything as car, so the whole cloud lands in the dynamic map and leaves a
trail for the annotator to work against.
"""

import json
import sys
from pathlib import Path

import numpy as np

from occlab.core import Pose, default_label_set
from occlab.formats import (
    FORMAT_VERSION,
    write_calibration,
    write_label_set,
    write_point_cloud,
    write_poses,
    write_semantic_image,
)
from occlab.projection import CameraModel, SemanticImage

FRAME_TIMES = (0, 1_000_000, 2_000_000)
BOX_X = (4.0, 6.0, 8.0)
BOX_Y = 0.8
CAR = 5


def main(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    cam = CameraModel(80.0, 80.0, 32.0, 32.0, 64, 64, Pose(rot, np.zeros(3)))
    write_calibration(root / "calib.json", cam)
    write_label_set(root / "labels.json", default_label_set())
    write_poses(root / "poses.txt", [Pose.identity()] * 3)

    rng = np.random.default_rng(0)
    shape = rng.uniform([-0.8, -0.5, -1.8], [0.8, 0.5, -0.8], size=(200, 3))
    all_car = SemanticImage(np.full((64, 64), CAR, dtype=np.uint16))

    frames = []
    for f, t in enumerate(FRAME_TIMES):
        pts = shape + np.array([BOX_X[f], BOX_Y, 0.0])
        write_point_cloud(root / f"{f:06d}.bin", pts)
        write_semantic_image(root / f"{f:06d}.sem", all_car)
        frames.append(
            {
                "frame_time": t,
                "cloud": f"{f:06d}.bin",
                "pose_index": f,
                "semantic_image": f"{f:06d}.sem",
            }
        )

    (root / "manifest.json").write_text(
        json.dumps(
            {
                "version": FORMAT_VERSION,
                "sequence": "ui_scene",
                "calibration": "calib.json",
                "labelset": "labels.json",
                "poses": "poses.txt",
                "frames": frames,
            }
        )
    )
    print(root / "manifest.json")


if __name__ == "__main__":
    main(Path(sys.argv[1]))
