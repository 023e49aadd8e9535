import tempfile
from io import StringIO
from pathlib import Path

from django.conf import settings
from django.contrib.admin.sites import site
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import RequestFactory, TestCase, override_settings

from core.models import ExperimentRun
from core.reports import read_csv, read_summary

PDDP_SETTINGS = {**settings.PDDP, 'RECORD_RUNS': True, 'THREADS': 1}


@override_settings(PDDP=PDDP_SETTINGS)
class PDDPCommandTests(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name)

    def run_command(self, *args):
        stdout = StringIO()
        call_command('pddp', *args, '--out', str(self.out), stdout=stdout)
        return stdout.getvalue()

    def test_solve_lti_converges_and_is_recorded(self):
        output = self.run_command('solve', '--config', 'solve_lti')
        self.assertIn('converged', output)
        for name in ('solve_iterations.csv', 'solve_trajectory.csv', 'solve_summary.json'):
            self.assertTrue((self.out / name).exists(), name)
        summary = read_summary(self.out / 'solve_summary.json')
        self.assertEqual(summary['status'], 'converged')
        self.assertEqual(summary['accepted_iterations'], 1)

        run = ExperimentRun.objects.get()
        self.assertEqual(run.kind, ExperimentRun.Kind.SOLVE)
        self.assertEqual(run.system, 'lti')
        self.assertTrue(run.succeeded)
        self.assertEqual(run.output_dir, str(self.out))
        self.assertEqual(run.config['experiment'], 'solve')
        self.assertEqual(len(run.final_params), 2)

    def test_configuration_errors_exit_with_one(self):
        for args in (['solve', '--config', 'solve_lti', '--set', 'solver.scheme=random'],
                     ['solve', '--config', 'solve_lti', '--threads', '0'],
                     ['solve', '--config', 'solve_lti', '--set', 'solver.max_iterations=null'],
                     ['sto', '--config', 'solve_lti'],
                     ['mhe-mpc', '--set', 'system=lti']):
            with self.subTest(args=args), self.assertRaises(CommandError) as caught:
                self.run_command(*args)
            self.assertEqual(caught.exception.returncode, 1)
        self.assertFalse(ExperimentRun.objects.exists())

    def test_iteration_limit_exits_with_three(self):
        with self.assertRaises(CommandError) as caught:
            self.run_command('solve', '--config', 'solve_lti', '--set', 'solver.max_iterations=1')
        self.assertEqual(caught.exception.returncode, 3)
        run = ExperimentRun.objects.get()
        self.assertEqual(run.exit_code, 3)
        self.assertEqual(run.status, 'max_iterations')
        self.assertFalse(run.succeeded)

    def test_empty_sweep_writes_header_only_table(self):
        self.run_command('sto-sweep', '--set', 'sto.task=double_integrator', '--set', 'sweep.samples=0')
        lines = (self.out / 'sweep_simultaneous.csv').read_text().splitlines()
        self.assertEqual(lines, ['index,theta0_0,theta_final_0,final_cost,iterations,status'])
        summary = read_summary(self.out / 'sweep_summary.json')
        self.assertEqual(summary['schemes']['simultaneous']['samples'], 0)
        self.assertEqual(summary['status'], 'completed')

    def test_diagnostics_table(self):
        self.run_command('diagnostics', '--set', 'system=lti', '--set', 'horizon=10',
                         '--set', 'diagnostics.epsilons=[0.1, 0.01]')
        frame = read_csv(self.out / 'diagnostics_epsilon.csv')
        self.assertEqual(frame['epsilon'].tolist(), [0.1, 0.01])
        self.assertIn('descent_inner', frame.columns)
        summary = read_summary(self.out / 'diagnostics_summary.json')
        self.assertEqual(set(summary['slopes']), {'gap', 'max_du', 'max_dx', 'dtheta'})

    @override_settings(PDDP={**PDDP_SETTINGS, 'RECORD_RUNS': False})
    def test_recording_can_be_switched_off(self):
        self.run_command('solve', '--config', 'solve_lti')
        self.assertFalse(ExperimentRun.objects.exists())


class ExperimentRunAdminTests(TestCase):
    def test_ledger_is_read_only(self):
        model_admin = site._registry[ExperimentRun]
        request = RequestFactory().get('/admin/')
        self.assertFalse(model_admin.has_add_permission(request))
        self.assertFalse(model_admin.has_change_permission(request))

    def test_str(self):
        run = ExperimentRun.objects.create(kind='sto', system='cartpole', status='converged', output_dir='runs')
        self.assertEqual(str(run), 'sto on cartpole (converged)')
