"""Bit-scalable deep hashing: weighted binary codes from a small network,
trained with a regularized triplet objective and served by a chunked
lookup-table weighted-Hamming search."""

from .data import Dataset, load_idx, load_vector_csv, synthetic_clusters
from .index import CodeDatabase, encode, load_db, query_bruteforce, query_lut, save_db, select_bits
from .metrics import RelevanceJudge, evaluate, mean_average_precision
from .nn import Model, build_model, load_checkpoint, save_checkpoint
from .objective import ObjectiveConfig, batch_loss, image_gradient
from .trainer import TrainConfig, beta_schedule, train
from .triplets import max_triplet_count, sample_batch

__version__ = "0.1.0"
