import pytest

from tiny_fixtures import paint_annotation, paint_image


@pytest.fixture
def image_workspace(tmp_path):
    """Two images (landscape + portrait), annotations, and a classes file."""
    images = tmp_path / "images"
    ann = tmp_path / "ann"
    images.mkdir()
    ann.mkdir()
    paint_image(images / "scene_a.png", 500, 375, seed=5)
    paint_image(images / "scene-b.png", 400, 640, seed=6)
    paint_annotation(ann / "scene_a.png", 500, 375, seed=7)
    paint_annotation(ann / "scene-b.png", 400, 640, seed=8)
    classes = tmp_path / "classes.txt"
    classes.write_text("ground\nwater\nsky\n", encoding="utf-8")
    return tmp_path
