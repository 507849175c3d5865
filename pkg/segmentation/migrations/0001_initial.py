import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=200)),
                ('out_dir', models.CharField(max_length=500)),
                ('data_dir', models.CharField(max_length=500)),
                ('seed', models.IntegerField(default=0)),
                ('status', models.CharField(choices=[('running', 'Running'), ('completed', 'Completed'), ('partial', 'Completed With Failed Cells'), ('failed', 'Failed')], default='running', max_length=20)),
                ('plan', models.JSONField(blank=True, null=True)),
                ('ensemble', models.JSONField(blank=True, help_text='Per-paradigm ensemble DSC by organ', null=True)),
                ('started_at', models.DateTimeField(auto_now_add=True)),
                ('finished_at', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-started_at'],
            },
        ),
        migrations.CreateModel(
            name='ExperimentCell',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('organ', models.CharField(max_length=20)),
                ('model_name', models.CharField(max_length=20)),
                ('status', models.CharField(choices=[('completed', 'Completed'), ('failed', 'Failed')], max_length=20)),
                ('error', models.TextField(blank=True, default='')),
                ('best_epoch', models.IntegerField(blank=True, null=True)),
                ('epochs_run', models.IntegerField(blank=True, null=True)),
                ('val_loss', models.FloatField(blank=True, null=True)),
                ('val_dsc', models.FloatField(blank=True, null=True)),
                ('checkpoint', models.CharField(blank=True, default='', max_length=500)),
                ('metrics', models.JSONField(blank=True, null=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='cells', to='segmentation.experimentrun')),
            ],
            options={
                'verbose_name': 'Experiment Cell',
                'verbose_name_plural': 'Experiment Cells',
                'ordering': ['run', 'organ', 'model_name'],
                'unique_together': {('run', 'organ', 'model_name')},
            },
        ),
    ]
