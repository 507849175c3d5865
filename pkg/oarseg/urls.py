"""
URL configuration for the oarseg project.

Only the admin is routed; it lists recorded experiment runs and cells.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
