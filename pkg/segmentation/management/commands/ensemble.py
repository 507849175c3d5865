"""
Ensemble evaluation
Fuses six binary organ checkpoints into one multi-class segmentation and scores it
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from segmentation.ensemble import evaluate_ensemble
from segmentation.exceptions import ConfigError, SegmentationError
from segmentation.experiments import load_split_patients
from segmentation.reports import render_ensemble_table
from segmentation.serializers import load_ensemble_manifest


class Command(BaseCommand):
    help = 'Evaluate a six-organ ensemble given a manifest of organ -> checkpoint directory'

    def add_arguments(self, parser):
        parser.add_argument('--members', required=True, help='JSON manifest: organ name -> checkpoint dir')
        parser.add_argument('--data', required=True)
        parser.add_argument('--out', required=True, help='report.csv path')
        parser.add_argument('--split', choices=['train', 'val', 'test', 'all'], default='test')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--name', default='ensemble', help='Column name in the report')

    def handle(self, *args, **options):
        try:
            members = load_ensemble_manifest(options['members'])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        try:
            patients = load_split_patients(options['data'], options['split'], options['seed'])
            report = evaluate_ensemble(members, patients, paradigm=options['name'])
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc

        markdown, csv_text = render_ensemble_table({options['name']: report})
        out = Path(options['out'])
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(csv_text)
        out.with_suffix('.md').write_text(markdown)
        self.stdout.write(markdown)
        self.stdout.write(self.style.SUCCESS(f"Mean DSC {report.mean:.4f} -> {out}"))
