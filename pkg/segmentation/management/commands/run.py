"""
Experiment grid
Runs every (organ, model) cell of a TOML plan; exit code 1 when any cell failed, 2 for an invalid plan
"""

from django.core.management.base import BaseCommand, CommandError

from segmentation.exceptions import ConfigError, SegmentationError
from segmentation.experiments import run_experiment
from segmentation.serializers import load_plan


class Command(BaseCommand):
    help = 'Run an experiment plan (plan.toml)'

    def add_arguments(self, parser):
        parser.add_argument('--plan', required=True)
        parser.add_argument('--no-record', action='store_true', help='Do not store the run in the database')

    def handle(self, *args, **options):
        try:
            plan = load_plan(options['plan'])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        self.stdout.write(self.style.SUCCESS(f"Starting experiment '{plan.name}'..."))
        try:
            result = run_experiment(plan, record=False if options['no_record'] else None)
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc

        for cell in result.cells:
            if cell.failed:
                self.stdout.write(self.style.ERROR(f"{cell.organ} / {cell.model_name}: {cell.error}"))
            else:
                self.stdout.write(f"{cell.organ} / {cell.model_name}: test DSC {cell.row.dsc_mean:.4f}")
        for paradigm, report in result.ensembles.items():
            self.stdout.write(f"{paradigm} ensemble: mean DSC {report.mean:.4f}")

        if not result.ok:
            failures = len(result.failed_cells) + bool(result.ensemble_error)
            raise CommandError(f"{failures} stage(s) failed; see {plan.out_dir}", returncode=1)
        self.stdout.write(self.style.SUCCESS(f"Experiment '{plan.name}' complete: {plan.out_dir}"))
