"""
WSGI config for the oarseg project.

Serves the admin used to browse recorded experiment runs.
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'oarseg.settings')

application = get_wsgi_application()
