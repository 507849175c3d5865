from django.db import models


# ========================================
# EXPERIMENT RUN MODEL
# ========================================
class ExperimentRun(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('partial', 'Completed With Failed Cells'),
        ('failed', 'Failed'),
    ]

    name = models.CharField(max_length=200)
    out_dir = models.CharField(max_length=500)
    data_dir = models.CharField(max_length=500)
    seed = models.IntegerField(default=0)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    plan = models.JSONField(blank=True, null=True)
    ensemble = models.JSONField(blank=True, null=True, help_text='Per-paradigm ensemble DSC by organ')

    started_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(blank=True, null=True)

    def __str__(self):
        return f"{self.name} - {self.status}"

    @property
    def failed_cells(self):
        return self.cells.filter(status='failed').count()

    class Meta:
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        ordering = ['-started_at']


# ========================================
# EXPERIMENT CELL MODEL
# ========================================
class ExperimentCell(models.Model):
    STATUS_CHOICES = [
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='cells')
    organ = models.CharField(max_length=20)
    model_name = models.CharField(max_length=20)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES)
    error = models.TextField(blank=True, default='')

    # Training outcome
    best_epoch = models.IntegerField(blank=True, null=True)
    epochs_run = models.IntegerField(blank=True, null=True)
    val_loss = models.FloatField(blank=True, null=True)
    val_dsc = models.FloatField(blank=True, null=True)
    checkpoint = models.CharField(max_length=500, blank=True, default='')

    # Test metrics (MetricRow fields)
    metrics = models.JSONField(blank=True, null=True)

    def __str__(self):
        return f"{self.run.name} - {self.organ} / {self.model_name} - {self.status}"

    class Meta:
        verbose_name = 'Experiment Cell'
        verbose_name_plural = 'Experiment Cells'
        ordering = ['run', 'organ', 'model_name']
        unique_together = ['run', 'organ', 'model_name']
