"""
Train one binary organ model
Splits the dataset, fits the model with early stopping and scores the test split
"""

from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from segmentation.data_io import load_dataset, split_dataset
from segmentation.exceptions import ConfigError, SegmentationError
from segmentation.experiments import cell_config
from segmentation.metrics import evaluate_model
from segmentation.networks import MODEL_NAMES, build_model
from segmentation.reports import write_report
from segmentation.serializers import load_train_config
from segmentation.trainer import fit, prepare_data

from ._options import parse_organ


class Command(BaseCommand):
    help = 'Train one (organ, model) pair and write checkpoint, history.csv and report.csv'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML run config with a [train] table')
        parser.add_argument('--organ', required=True)
        parser.add_argument('--model', required=True, choices=list(MODEL_NAMES))
        parser.add_argument('--data', required=True)
        parser.add_argument('--out', required=True)
        parser.add_argument('--seed', type=int)
        parser.add_argument('--max-epochs', type=int)
        parser.add_argument('--progress', action='store_true', default=None)

    def handle(self, *args, **options):
        organ = parse_organ(options['organ'])
        model_name = options['model']
        try:
            config = cell_config(
                load_train_config(
                    options['config'],
                    seed=options['seed'],
                    max_epochs=options['max_epochs'],
                    progress=options['progress'],
                ),
                model_name,
            )
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        out_dir = Path(options['out'])
        try:
            volumes = load_dataset(options['data'])
            split = split_dataset(volumes, config.seed)
            generator, critic = build_model(
                model_name, config.seed, config.generator, config.critic, config.torch_dtype
            )
            best, state = fit(
                generator, prepare_data(volumes, split, organ, config), config, organ,
                critic, out_dir, model_name,
            )
            test = [volumes[pid] for pid in split.test_ids]
            row, _ = evaluate_model(generator, test, organ, model_name, config.hu_window)
            write_report(out_dir, [row])
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc

        if state.stopped_early:
            self.stdout.write(self.style.WARNING(f"Stopped early at epoch {state.epoch}"))
        self.stdout.write(self.style.SUCCESS(
            f"{organ.label} / {model_name}: best epoch {best.epoch}, val DSC {best.val_dsc:.4f}, "
            f"test DSC {row.dsc_mean:.4f}"
        ))
