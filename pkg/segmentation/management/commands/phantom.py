"""
Synthetic thoracic phantoms
Writes deterministic CT/label pairs with all six organs, for tests and smoke runs
"""

from django.core.management.base import BaseCommand, CommandError

from segmentation.data_io import synthesize_phantom
from segmentation.exceptions import SegmentationError

from ._options import parse_shape


class Command(BaseCommand):
    help = 'Write synthetic thoracic phantom patients'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Output data directory')
        parser.add_argument('--patients', type=int, default=3)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--shape', default='8x64x64', help='Volume shape as SxHxW')
        parser.add_argument('--format', choices=['raw', 'nifti'], default='raw')

    def handle(self, *args, **options):
        try:
            paths = synthesize_phantom(
                options['out'],
                seed=options['seed'],
                n_patients=options['patients'],
                shape=parse_shape(options['shape']),
                fmt=options['format'],
            )
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=2) from exc
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(paths)} phantom patients to {options['out']}"))
