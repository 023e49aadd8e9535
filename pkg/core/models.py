from django.db import models


class ExperimentRun(models.Model):
    """One invocation of the ``pddp`` management command."""

    class Kind(models.TextChoices):
        SOLVE = 'solve', 'Solve'
        MHE_MPC = 'mhe-mpc', 'MHE + MPC'
        STO = 'sto', 'Switching-time optimization'
        STO_SWEEP = 'sto-sweep', 'Switching-time sweep'
        DIAGNOSTICS = 'diagnostics', 'Diagnostics'

    kind = models.CharField(max_length=20, choices=Kind.choices)
    system = models.CharField(max_length=50)
    scheme = models.CharField(max_length=20, blank=True)
    status = models.CharField(max_length=30)
    exit_code = models.PositiveSmallIntegerField(default=0)
    final_cost = models.FloatField(null=True, blank=True)
    final_params = models.JSONField(default=list, blank=True)
    iterations = models.PositiveIntegerField(default=0)
    wall_time = models.FloatField(default=0.0, help_text="Seconds")
    output_dir = models.CharField(max_length=500)
    config = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"

    def __str__(self):
        return f"{self.kind} on {self.system} ({self.status})"

    @property
    def succeeded(self):
        return self.exit_code == 0
