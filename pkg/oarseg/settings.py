"""
Django settings for the oarseg project.

The project is a training-and-evaluation harness for organ-at-risk
segmentation; Django provides the command surface, the ORM used to record
experiment runs and the admin used to browse them.
"""

from pathlib import Path
import os

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')


SECRET_KEY = os.environ.get('OARSEG_SECRET_KEY', 'oarseg-local-harness-key')

DEBUG = os.environ.get('OARSEG_DEBUG', '0') == '1'

ALLOWED_HOSTS = ['localhost', '127.0.0.1']


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'rest_framework',
    'segmentation',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'oarseg.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'oarseg.wsgi.application'


# Database
# Experiment runs and grid cells are recorded here; artifacts stay on disk.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('OARSEG_DATABASE', BASE_DIR / 'db.sqlite3'),
    }
}


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ========================================
# REST FRAMEWORK CONFIGURATION
# ========================================
# Only the serializer layer is used (config and plan validation).
REST_FRAMEWORK = {
    'UNAUTHENTICATED_USER': None,
}

# ========================================
# HARNESS CONFIGURATION
# ========================================
OARSEG = {
    # Fixed HU window mapped onto [0, 1].
    'HU_WINDOW': (-1000.0, 1000.0),
    # Keep only slices where the target organ is present.
    'ROI_ONLY': False,
    # Grid cells trained concurrently by `run`.
    'MAX_WORKERS': int(os.environ.get('OARSEG_MAX_WORKERS', '1')),
    'DEFAULT_SEED': 0,
    # Batch-assembly workers of the training DataLoader.
    'LOADER_WORKERS': int(os.environ.get('OARSEG_LOADER_WORKERS', '0')),
    'CHECKPOINT_DTYPE': os.environ.get('OARSEG_CHECKPOINT_DTYPE', 'float32'),
}

# ========================================
# LOGGING CONFIGURATION
# ========================================
LOG_LEVEL = os.environ.get('OARSEG_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'colored': {
            '()': 'coloredlogs.ColoredFormatter',
            'fmt': '%(asctime)s %(name)s %(levelname)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'colored',
        },
    },
    'loggers': {
        'segmentation': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
