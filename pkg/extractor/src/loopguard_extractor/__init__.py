"""loopguard-extractor: frozen-encoder audio embedding extraction to EMB1."""

__version__ = "0.1.0"

from .audio import AudioDecodeError, load_waveform
from .backends import FrozenClapBackend, OfflineReferenceBackend, make_backend
from .config import EMBEDDING_DIM, ExtractorConfig
from .emb1 import write_emb1
from .extract import extract_batch, extract_one
