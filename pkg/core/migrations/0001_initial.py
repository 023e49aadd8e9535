# Generated by Django 6.0 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('kind', models.CharField(choices=[('solve', 'Solve'), ('mhe-mpc', 'MHE + MPC'), ('sto', 'Switching-time optimization'), ('sto-sweep', 'Switching-time sweep'), ('diagnostics', 'Diagnostics')], max_length=20)),
                ('system', models.CharField(max_length=50)),
                ('scheme', models.CharField(blank=True, max_length=20)),
                ('status', models.CharField(max_length=30)),
                ('exit_code', models.PositiveSmallIntegerField(default=0)),
                ('final_cost', models.FloatField(blank=True, null=True)),
                ('final_params', models.JSONField(blank=True, default=list)),
                ('iterations', models.PositiveIntegerField(default=0)),
                ('wall_time', models.FloatField(default=0.0, help_text='Seconds')),
                ('output_dir', models.CharField(max_length=500)),
                ('config', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at'],
            },
        ),
    ]
