# Generated by Django 5.2.6 on 2026-10-19 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("name", models.CharField(blank=True, max_length=120)),
                (
                    "controller",
                    models.CharField(
                        choices=[
                            ("QMPC_QRef", "Quadratic MPC, quadratic reference"),
                            ("QMPC_LRef", "Quadratic MPC, linear reference"),
                            ("LMPC_QRef", "Linear MPC, quadratic reference"),
                            ("LMPC_LRef", "Linear MPC, linear reference"),
                            ("IARR", "Improved adaptive real-time rebalancing"),
                        ],
                        max_length=16,
                    ),
                ),
                ("step_minutes", models.FloatField()),
                ("demand_seed", models.IntegerField()),
                ("rounding_seed", models.IntegerField()),
                ("perturbation_seed", models.IntegerField()),
                ("config", models.JSONField(default=dict)),
                ("summary", models.JSONField(default=dict)),
                ("diagnostics", models.JSONField(blank=True, default=list)),
                ("arrival_hash", models.CharField(db_index=True, max_length=64)),
                ("output_dir", models.CharField(blank=True, max_length=500)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
            ],
            options={
                "ordering": ["-created_at"],
                "indexes": [
                    models.Index(
                        fields=["controller", "demand_seed"],
                        name="harness_run_ctrl_seed_idx",
                    )
                ],
            },
        ),
    ]
