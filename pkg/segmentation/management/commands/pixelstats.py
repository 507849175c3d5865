from django.core.management.base import BaseCommand, CommandError

from segmentation.data_io import class_pixel_distribution, load_dataset, render_pixel_distribution
from segmentation.exceptions import SegmentationError


class Command(BaseCommand):
    help = 'Class pixel distribution of a dataset, printed and optionally drawn as a pie chart'

    def add_arguments(self, parser):
        parser.add_argument('--data', required=True)
        parser.add_argument('--out', help='PNG path for the pie chart')

    def handle(self, *args, **options):
        try:
            volumes = load_dataset(options['data'])
            fractions = class_pixel_distribution(labels for _, labels in volumes.values())
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        for name, fraction in fractions.items():
            self.stdout.write(f"{name:<12} {100 * fraction:8.4f}%")
        if options['out']:
            render_pixel_distribution(fractions, options['out'])
            self.stdout.write(self.style.SUCCESS(f"Wrote {options['out']}"))
