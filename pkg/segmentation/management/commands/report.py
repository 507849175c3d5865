from django.core.management.base import BaseCommand, CommandError

from segmentation.exceptions import SegmentationError
from segmentation.reports import collect_rows, render_table


class Command(BaseCommand):
    help = 'Print the result table of an experiment directory'

    def add_arguments(self, parser):
        parser.add_argument('--in', dest='directory', required=True)
        parser.add_argument('--format', choices=['csv', 'md'], default='md')

    def handle(self, *args, **options):
        try:
            markdown, csv_text = render_table(collect_rows(options['directory']))
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        self.stdout.write(markdown if options['format'] == 'md' else csv_text, ending='')
