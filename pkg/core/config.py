"""
Experiment configuration files.

A config is one JSON object::

    {
      "experiment": "solve",
      "system": "cartpole",
      "horizon": 100,
      "solver": {"scheme": "alternating", "max_iterations": 200},
      "system_params": {"pole_mass": 0.5},
      "cost": {"control": 0.01},
      "estimation": {...}, "sto": {...}, "sweep": {...}, "diagnostics": {...}
    }

Each section is validated by its own Django form; keys a form does not
declare are rejected. ``--set section.key=value`` overrides are applied
before validation and parse ``value`` as JSON, falling back to a string.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

from django import forms

from .exceptions import ConfigError
from .solver import Scheme, SolverConfig

EXPERIMENTS = ('solve', 'mhe-mpc', 'sto', 'sto-sweep', 'diagnostics')
SYSTEM_NAMES = ('cartpole', 'quadrotor', 'lti')
STO_TASK_NAMES = ('cartpole', 'quadrotor', 'double_integrator')


def _choices(values):
    return [(v, v) for v in values]


class NumberListField(forms.JSONField):
    """A JSON list of numbers, optionally of a fixed length."""

    def __init__(self, *args, length=None, **kwargs):
        self.length = length
        kwargs.setdefault('required', False)
        super().__init__(*args, **kwargs)

    def validate(self, value):
        super().validate(value)
        if value in self.empty_values:
            return
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise forms.ValidationError("expected a list of numbers")
        if self.length is not None and len(value) != self.length:
            raise forms.ValidationError(f"expected {self.length} numbers, got {len(value)}")


class WeightField(forms.JSONField):
    """A scalar weight or a list of per-component weights."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault('required', False)
        super().__init__(*args, **kwargs)

    def validate(self, value):
        super().validate(value)
        if value in self.empty_values:
            return
        items = value if isinstance(value, list) else [value]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 for v in items):
            raise forms.ValidationError("weights must be nonnegative numbers")


class ExperimentForm(forms.Form):
    experiment = forms.ChoiceField(choices=_choices(EXPERIMENTS))
    system = forms.ChoiceField(choices=_choices(SYSTEM_NAMES), required=False)
    horizon = forms.IntegerField(min_value=1, required=False)
    seed = forms.IntegerField(min_value=0, required=False)
    theta0 = NumberListField()


class SolverForm(forms.Form):
    max_iterations = forms.IntegerField(min_value=1, required=False)
    rho = forms.FloatField(min_value=0.0, max_value=1.0, required=False)
    epsilon_min = forms.FloatField(min_value=0.0, max_value=1.0, required=False)
    kappa = forms.FloatField(min_value=0.0, required=False)
    tolerance = forms.FloatField(min_value=0.0, required=False)
    scheme = forms.ChoiceField(choices=_choices([s.value for s in Scheme]), required=False)
    inner_tolerance = forms.FloatField(min_value=0.0, required=False)
    warm_start_control_only_iters = forms.IntegerField(min_value=0, required=False)
    full_second_order = forms.BooleanField(required=False)
    mu_init = forms.FloatField(min_value=0.0, required=False)
    nu_init = forms.FloatField(min_value=0.0, required=False)


class CartpoleParamsForm(forms.Form):
    cart_mass = forms.FloatField(min_value=0.0, required=False)
    pole_mass = forms.FloatField(min_value=0.0, required=False)
    pole_length = forms.FloatField(min_value=0.0, required=False)
    gravity = forms.FloatField(min_value=0.0, required=False)


class QuadrotorParamsForm(forms.Form):
    mass = forms.FloatField(min_value=0.0, required=False)
    Jx = forms.FloatField(min_value=0.0, required=False)
    Jy = forms.FloatField(min_value=0.0, required=False)
    Jz = forms.FloatField(min_value=0.0, required=False)
    gravity = forms.FloatField(min_value=0.0, required=False)


class LTIParamsForm(forms.Form):
    n_x = forms.IntegerField(min_value=1, required=False)
    n_u = forms.IntegerField(min_value=1, required=False)
    n_theta = forms.IntegerField(min_value=0, required=False)


class CartpoleCostForm(forms.Form):
    state = WeightField()
    control = WeightField()
    terminal = WeightField()
    param = WeightField()


class QuadrotorCostForm(forms.Form):
    position = WeightField()
    attitude = WeightField()
    velocity = WeightField()
    rates = WeightField()
    control = WeightField()
    terminal = WeightField()
    param = WeightField()
    target = NumberListField(length=3)
    heading = forms.FloatField(required=False)


class EmptyForm(forms.Form):
    pass


class EstimationForm(forms.Form):
    estimation_horizon = forms.IntegerField(min_value=1, required=False)
    mpc_horizon = forms.IntegerField(min_value=1, required=False)
    total_steps = forms.IntegerField(min_value=0, required=False)
    noise_seed = forms.IntegerField(min_value=0, required=False)
    noise_scale = forms.FloatField(min_value=0.0, required=False)
    estimate_initial_state = forms.BooleanField(required=False)
    residual_form = forms.ChoiceField(choices=_choices(('chain', 'one_step')), required=False)
    noise_std = forms.FloatField(min_value=0.0, required=False)
    param_std = forms.FloatField(min_value=0.0, required=False)
    state_std = forms.FloatField(min_value=0.0, required=False)
    true_params = NumberListField()
    min_param = forms.FloatField(required=False)
    max_iterations_per_step = forms.IntegerField(min_value=1, required=False)


class STOForm(forms.Form):
    task = forms.ChoiceField(choices=_choices(STO_TASK_NAMES), required=False)
    steps_per_mode = forms.IntegerField(min_value=1, required=False)
    dt = forms.FloatField(min_value=0.0, required=False)
    durations = NumberListField()
    exit_weight = forms.FloatField(min_value=0.0, required=False)
    control_weight = forms.FloatField(min_value=0.0, required=False)
    time_weight = forms.FloatField(min_value=0.0, required=False)


class SweepForm(forms.Form):
    samples = forms.IntegerField(min_value=0, required=False)
    low = forms.FloatField(min_value=0.0, required=False)
    high = forms.FloatField(min_value=0.0, required=False)
    seed = forms.IntegerField(min_value=0, required=False)
    schemes = forms.JSONField(required=False)

    def clean(self):
        cleaned = super().clean()
        low, high = cleaned.get('low'), cleaned.get('high')
        if low is not None and high is not None and low > high:
            raise forms.ValidationError("low must not exceed high")
        schemes = cleaned.get('schemes')
        if schemes not in (None, ''):
            valid = {s.value for s in Scheme}
            if not isinstance(schemes, list) or not set(schemes) <= valid:
                self.add_error('schemes', f"expected a list drawn from {sorted(valid)}")
        return cleaned


class DiagnosticsForm(forms.Form):
    epsilons = NumberListField()
    warmup_iterations = forms.IntegerField(min_value=0, required=False)


SECTION_FORMS = {
    'solver': SolverForm,
    'estimation': EstimationForm,
    'sto': STOForm,
    'sweep': SweepForm,
    'diagnostics': DiagnosticsForm,
}
SYSTEM_PARAM_FORMS = {'cartpole': CartpoleParamsForm, 'quadrotor': QuadrotorParamsForm, 'lti': LTIParamsForm}
COST_FORMS = {'cartpole': CartpoleCostForm, 'quadrotor': QuadrotorCostForm, 'lti': EmptyForm}
TOP_LEVEL_KEYS = set(ExperimentForm.base_fields) | set(SECTION_FORMS) | {'system_params', 'cost'}


@dataclass
class ExperimentConfig:
    experiment: str
    system: str
    horizon: int = None
    seed: int = 0
    theta0: list = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    system_params: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    estimation: dict = field(default_factory=dict)
    sto: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    # the validated document, stored with the run
    document: dict = field(default_factory=dict)


def _line_of(text, key):
    if not text:
        return None
    needle = f'"{key}"'
    for number, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return number
    return None


def parse_override(assignment):
    """``"a.b=value"`` -> ``(["a", "b"], value)`` with ``value`` decoded as JSON when possible."""
    if '=' not in assignment:
        raise ConfigError(f"override '{assignment}' is not of the form key=value")
    key, raw = assignment.split('=', 1)
    path = [part for part in key.strip().split('.') if part]
    if not path:
        raise ConfigError(f"override '{assignment}' has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(document, overrides):
    for assignment in overrides or ():
        path, value = parse_override(assignment)
        target = document
        for part in path[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set '{'.'.join(path)}': '{part}' is not a section", field=part)
            target = node
        target[path[-1]] = value
    return document


def _validate_section(form_class, data, prefix, text):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("expected an object", field=prefix, line=_line_of(text, prefix))
    unknown = sorted(set(data) - set(form_class.base_fields))
    if unknown:
        name = f'{prefix}.{unknown[0]}' if prefix else unknown[0]
        raise ConfigError("unknown key", field=name, line=_line_of(text, unknown[0]))
    nulls = sorted(key for key, value in data.items() if value is None)
    if nulls:
        name = f'{prefix}.{nulls[0]}' if prefix else nulls[0]
        raise ConfigError("null is not a valid value; leave the key out for the default", field=name,
                          line=_line_of(text, nulls[0]))
    form = form_class(data=data)
    if not form.is_valid():
        key, errors = next(iter(form.errors.items()))
        if key == '__all__':
            raise ConfigError('; '.join(errors), field=prefix or None, line=_line_of(text, prefix))
        name = f'{prefix}.{key}' if prefix else key
        raise ConfigError('; '.join(errors), field=name, line=_line_of(text, key))
    return {key: form.cleaned_data[key] for key in data}


def parse_config(text, experiment=None, overrides=(), source='<config>'):
    """Parse and validate a config document, returning an :class:`ExperimentConfig`."""
    if text and text.strip():
        try:
            document = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from exc
    else:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError(f"{source}: the top level must be a JSON object", line=1)
    apply_overrides(document, overrides)

    if experiment is not None:
        declared = document.get('experiment')
        if declared is not None and declared != experiment:
            raise ConfigError(f"config is for '{declared}', not '{experiment}'", field='experiment',
                              line=_line_of(text, 'experiment'))
        document['experiment'] = experiment

    unknown = sorted(set(document) - TOP_LEVEL_KEYS)
    if unknown:
        raise ConfigError("unknown key", field=unknown[0], line=_line_of(text, unknown[0]))
    top = _validate_section(ExperimentForm, {k: document[k] for k in ExperimentForm.base_fields if k in document},
                            '', text)
    kind = top['experiment']
    system = top.get('system') or ''
    if kind in ('solve', 'mhe-mpc', 'diagnostics') and not system:
        raise ConfigError(f"experiment '{kind}' needs a system", field='system')

    sections = {name: _validate_section(form, document.get(name), name, text)
                for name, form in SECTION_FORMS.items()}
    system_params = _validate_section(SYSTEM_PARAM_FORMS.get(system, EmptyForm), document.get('system_params'),
                                      'system_params', text)
    cost = _validate_section(COST_FORMS.get(system, EmptyForm), document.get('cost'), 'cost', text)

    try:
        solver = SolverConfig(**sections['solver'])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field='solver') from exc

    return ExperimentConfig(
        experiment=kind, system=system, horizon=top.get('horizon'),
        seed=top.get('seed') if top.get('seed') is not None else 0, theta0=top.get('theta0'),
        solver=solver, system_params=system_params, cost=cost,
        estimation=sections['estimation'], sto=sections['sto'], sweep=sections['sweep'],
        diagnostics=sections['diagnostics'], document=document,
    )


def load_config(path, experiment=None, overrides=()):
    """Read ``path`` (or start from an empty document when ``path`` is None) and validate it."""
    if path is None:
        return parse_config('', experiment, overrides)
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, experiment, overrides, source=str(path))
