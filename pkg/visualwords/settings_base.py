# Default settings for the visual words pipeline. A Django project that
# installs the app can star-import this module in its settings.py and
# override any VV_* value there.

DEBUG = False

INSTALLED_APPS = (
    'visualwords',
)

DATABASES = {}

# Representation: one of 'sbovw', 'sbovw_tfidf', 'sbovw_rcm', 'impbovw', 'sp'.
VV_MODE = 'impbovw'

# Keypoints: 'harris', 'dog' or 'dense'.
VV_DETECTOR = 'harris'

VV_HARRIS = {
    'k': 0.04,
    'sigma': 1.5,
    'sigma_d': 1.0,
    'threshold_rel': 0.01,
    'max_points': 500,
}

VV_DOG = {
    'scales': 3,
    'octaves': 4,
    'sigma': 1.6,
    'contrast': 0.03,
    'edge_ratio': 10.0,
}

VV_DENSE_STEP = 5
VV_DENSE_SCALE = 1.6

# Codebook.
VV_VOCAB_SIZE = 2000
VV_CLUSTERING = 'kmeans++'
VV_KMEANS_MAX_ITER = 100
VV_KMEANS_TOL = 1e-4
# Pooled descriptors above this count are subsampled with the run seed.
VV_MAX_DESCRIPTORS = 200000

# Relative conjunction matrix.
VV_NEIGHBORS = 5
VV_GROUPING_THRESHOLD = 0.6
VV_RCM_FLAT = False

# Spatial pyramid baseline. 0 channels reuses the vocabulary size.
VV_PYRAMID_LEVEL = 2
VV_SP_CHANNELS = 200

# Classifier.
VV_KERNEL = 'intersection'
VV_C = 10.0
VV_SVM_TOL = 1e-3
VV_SVM_MAX_ITER = 100000
# None means 1 / feature dimension.
VV_RBF_GAMMA = None

# Protocol.
VV_TRAIN_FRACTION = 0.7
VV_SEED = 0
VV_CV_GRID = {
    'C': [0.1, 1.0, 10.0, 100.0],
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'level': 'DEBUG',
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'visualwords': {
            'handlers': ['console'],
            'level': 'INFO',
            'propagate': False,
        },
    },
}
