"""Access to the bundled network descriptors and synthetic environment specs."""

from importlib.resources import as_file, files
from pathlib import Path

BUNDLED_NETS = ("resnet56.net", "mobilenetv1.net", "mobilenetv2.net", "vgg16.net")
BUNDLED_SPECS = (
    "synth28_blocks.json",
    "synth13_blocks.json",
    "synth18_uncorrelated.json",
    "synth12_blocks.json",
)


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled data file."""
    resource = files("prunebo") / "data" / name
    with as_file(resource) as path:
        return Path(path)
