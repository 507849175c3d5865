from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from segmentation.checkpoints import load_checkpoint
from segmentation.exceptions import SegmentationError
from segmentation.experiments import load_split_patients
from segmentation.metrics import evaluate_model
from segmentation.reports import write_report

from ._options import parse_organ


class Command(BaseCommand):
    help = 'Score a checkpoint on a dataset split and write report.csv / report.md'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--data', required=True)
        parser.add_argument('--organ', help='Defaults to the organ stored in the checkpoint')
        parser.add_argument('--out', required=True, help='report.csv path')
        parser.add_argument('--split', choices=['train', 'val', 'test', 'all'], default='test')
        parser.add_argument('--seed', type=int, help='Split seed; defaults to the training seed')
        parser.add_argument('--jobs', type=int, default=1)

    def handle(self, *args, **options):
        try:
            generator, manifest, _ = load_checkpoint(options['checkpoint'])
            organ = parse_organ(options['organ'] or manifest.get('organ', ''))
            train = manifest.get('train_config', {})
            seed = options['seed'] if options['seed'] is not None else manifest.get('seed', 0)
            patients = load_split_patients(options['data'], options['split'], seed)
            row, _ = evaluate_model(
                generator, patients, organ,
                model_name=manifest.get('model_name') or manifest['architecture'],
                window=tuple(train.get('hu_window', (-1000.0, 1000.0))),
                n_jobs=options['jobs'],
            )
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc

        out = Path(options['out'])
        write_report(out.parent, [row], name=out.stem)
        self.stdout.write(self.style.SUCCESS(
            f"{row.target} / {row.model}: DSC {row.dsc_mean:.4f} over {row.n_patients} patients -> {out}"
        ))
