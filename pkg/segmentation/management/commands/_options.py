from django.core.management.base import CommandError

from segmentation.data_io import OrganId
from segmentation.exceptions import SegmentationError


def parse_shape(value):
    """'SxHxW' -> (S, H, W)."""
    try:
        shape = tuple(int(part) for part in value.lower().split('x'))
    except ValueError:
        raise CommandError(f"shape '{value}' is not of the form SxHxW", returncode=2) from None
    if len(shape) != 3:
        raise CommandError(f"shape '{value}' is not of the form SxHxW", returncode=2)
    return shape


def parse_organ(value):
    try:
        return OrganId.from_name(value)
    except SegmentationError as exc:
        raise CommandError(str(exc), returncode=2) from exc
