import numpy as np
import pytest


def _write_clip(path, n_frames, fps, size=(32, 32), seed=0):
    import cv2

    rng = np.random.default_rng(seed)
    writer = cv2.VideoWriter(
        str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, size
    )
    assert writer.isOpened(), "OpenCV cannot create the fixture clip"
    for _ in range(n_frames):
        frame = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
        writer.write(frame)
    writer.release()
    return path


@pytest.fixture(scope="session")
def clips(tmp_path_factory):
    """Two fixture clips: a 1-second clip and a 2-second clip (8 fps)."""
    root = tmp_path_factory.mktemp("clips")
    one = _write_clip(root / "one_second.mp4", n_frames=8, fps=8, seed=1)
    two = _write_clip(root / "two_seconds.mp4", n_frames=16, fps=8, seed=2)
    return [one, two]


@pytest.fixture(scope="session")
def captions_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("caps") / "captions.tsv"
    path.write_text(
        "c1\ta dog runs on the beach\n"
        "c2\ta dog runs on the beach\n"
        "c3\ttwo people cook dinner together\n",
        encoding="utf-8",
    )
    return path
