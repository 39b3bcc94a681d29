"""Attribute-query hashing.

Learnable per-bit attribute queries decode multi-scale image features
into binary hash codes; training uses a relaxed pairwise inner-product
objective with circular-shift auxiliary branches, retrieval runs on
bit-packed Hamming distances, and the analysis toolkit covers coherence,
its lower bound, and loss-landscape slices.
"""

from .analysis import (coherence_mu, coherence_report, cosine_objective,
                       landscape_grid, minimize_coherence, verify_bound,
                       welch_lower_bound)
from .autodiff import Tensor, grad_check, no_grad
from .checkpoint import CheckpointMeta, load_checkpoint, save_checkpoint
from .decoder import init_queries, sign_codes, transform_query
from .errors import (AQHashError, CheckpointError, ConfigError, DataError,
                     ManifestError, NumericalError, ShapeError)
from .extractor import FeaturePyramid, LevelSpec, positional_table
from .manifest import Dataset, Manifest, ingest
from .model import HashModel, ModelConfig
from .retrieval import (PackedCodes, encode_database, hamming, load_codes,
                        mean_average_precision, pack, rank_query, save_codes,
                        unpack)
from .synthgen import SynthSpec, build, generate, split
from .training import (TrainConfig, pipeline_grad_check, sample_omega, train,
                       update_database_codes)

__version__ = "0.1.0"
