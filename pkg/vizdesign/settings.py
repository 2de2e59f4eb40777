import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing in the engine signs data.
SECRET_KEY = os.getenv('SECRET_KEY', 'vizdesign-local-only')

DEBUG = os.getenv('DEBUG') == 'True'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Third party apps
    'rest_framework',

    # Local apps
    'core.apps.CoreConfig'
]

# No database: relations live in memory for the lifetime of a command.
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

PVD_LOG_LEVEL = os.getenv('PVD_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'core': {
            'handlers': ['console'],
            'level': PVD_LOG_LEVEL,
            'propagate': True,
        },
    },
}

# Physical visualization design engine

# Cross product of an interaction's choice domains before enumeration gives up
PVD_BINDING_CAP = 10 ** 6
# Physical plan candidates produced before the search is truncated
PVD_CANDIDATE_CAP = 10 ** 5
# Cells a single prefix-sum cube may allocate
PVD_CUBE_CELL_CAP = 10 ** 8
# Bindings drawn per interaction when verification has to sample
PVD_SAMPLE_SIZE = 1000

PVD_CALIBRATION_ROWS = 10 ** 6
PVD_CALIBRATION_RUNS = 5

PVD_FLOAT_REL_TOL = 1e-9

# ms per unit on the reference machine; `manage.py calibrate` measures local ones
PVD_DEFAULT_CALIBRATION = {
    'c_scan': 2.0e-5,
    'c_hash': 1.0e-4,
    'c_probe': 2.0e-3,
    'c_sort': 4.0e-5,
    'c_cell': 5.0e-5,
    'c_op': 0.05,
}

# LAN between client and server, datacenter link to the cloud DBMS
PVD_DEFAULT_DEPLOYMENT = {
    'sites': [
        {'id': 'client', 'memory_budget_bytes': 256 * 1024 * 1024, 'compute_scale': 2.0},
        {'id': 'server', 'memory_budget_bytes': 4 * 1024 * 1024 * 1024, 'compute_scale': 1.0},
        {'id': 'cloud', 'memory_budget_bytes': None, 'compute_scale': 1.0},
    ],
    'links': [
        {'endpoints': ['client', 'server'], 'latency_ms': 2.0, 'bandwidth_bytes_per_ms': 12500.0},
        {'endpoints': ['server', 'cloud'], 'latency_ms': 10.0, 'bandwidth_bytes_per_ms': 125000.0},
    ],
}

PVD_OUTPUT_DIR = BASE_DIR / 'runs'
