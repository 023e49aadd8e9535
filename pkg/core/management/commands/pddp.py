from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from core.config import EXPERIMENTS, load_config
from core.exceptions import ConfigError, PDDPError
from core.services import ExperimentService


class Command(BaseCommand):
    help = (
        "Run a PDDP experiment and write its CSV tables and JSON summary. "
        "Exit status: 0 converged, 1 configuration error, 2 line-search failure, 3 iteration limit."
    )

    def add_arguments(self, parser):
        parser.add_argument('experiment', choices=EXPERIMENTS)
        parser.add_argument('--config', help="JSON config file; bare names are looked up in configs/")
        parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                            help="override a config value, e.g. --set solver.scheme=alternating")
        parser.add_argument('--out', help="output directory (default: PDDP_OUTPUT_DIR)")
        parser.add_argument('--seed', type=int)
        parser.add_argument('--threads', type=int, help="worker threads for sweeps")

    def resolve_config(self, name):
        if name is None:
            return None
        path = Path(name)
        if path.exists():
            return path
        fallback = Path(settings.PDDP['CONFIG_DIR']) / path.name
        if fallback.exists():
            return fallback
        if fallback.with_suffix('.json').exists():
            return fallback.with_suffix('.json')
        return path

    def handle(self, *args, **options):
        if options['threads'] is not None and options['threads'] < 1:
            raise CommandError("--threads must be at least 1", returncode=1)
        try:
            config = load_config(self.resolve_config(options['config']), options['experiment'],
                                 options['overrides'])
            service = ExperimentService(config, out_dir=options['out'], threads=options['threads'],
                                        seed=options['seed'])
            outcome = service.run()
        except ConfigError as exc:
            raise CommandError(f"invalid config: {exc}", returncode=1) from exc
        except PDDPError as exc:
            raise CommandError(str(exc), returncode=2) from exc

        for name, path in outcome.artifacts.items():
            self.stdout.write(f"{name}: {path}")
        message = f"{outcome.kind} on {outcome.system}: {outcome.status} after {outcome.iterations} iterations"
        if outcome.final_cost is not None:
            message += f", cost {outcome.final_cost:.10g}"
        if outcome.exit_code == 0:
            self.stdout.write(self.style.SUCCESS(message))
            return
        raise CommandError(message, returncode=outcome.exit_code)
