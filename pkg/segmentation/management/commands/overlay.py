from django.core.management.base import BaseCommand, CommandError

from segmentation.checkpoints import load_checkpoint
from segmentation.data_io import OrganId, load_dataset, normalize_slice
from segmentation.exceptions import SegmentationError
from segmentation.metrics import threshold_logits
from segmentation.networks import generator_forward
from segmentation.reports import OverlaySpec, render_overlay


class Command(BaseCommand):
    help = 'Overlay prediction and ground truth of one slice: yellow overlap, green FP, red FN'

    def add_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--data', required=True)
        parser.add_argument('--patient', required=True)
        parser.add_argument('--slice', type=int, required=True)
        parser.add_argument('--out', required=True, help='PNG path')
        parser.add_argument('--opacity', type=float, default=0.5)

    def handle(self, *args, **options):
        try:
            spec = OverlaySpec(opacity=options['opacity'])
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        try:
            generator, manifest, _ = load_checkpoint(options['checkpoint'])
            organ = OrganId.from_name(manifest.get('organ', ''))
            ct, labels = load_dataset(options['data'], [options['patient']])[options['patient']]
            k = options['slice']
            if not 0 <= k < ct.shape[0]:
                raise CommandError(f"slice {k} outside 0..{ct.shape[0] - 1}", returncode=2)
            window = tuple(manifest.get('train_config', {}).get('hu_window', (-1000.0, 1000.0)))
            image = normalize_slice(ct.voxels[k], window)
            pred = threshold_logits(generator_forward(generator, image))
            path = render_overlay(image, pred, labels.indicator(organ)[k], options['out'], spec)
        except SegmentationError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        self.stdout.write(self.style.SUCCESS(f"Wrote {path}"))
