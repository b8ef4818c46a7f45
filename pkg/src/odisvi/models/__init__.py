from .base import ContractError, LatentGroup, Model
from .corpus import BowCorpus, load_bundled_corpus, read_corpus, read_stopwords, read_vocab, write_vocab
from .gnts import GNTSData, GNTSHyper, GNTSModel, gnts_generate, n_hidden, read_gnts, write_gnts
from .poisson_def import DEFHyper, PoissonDEF, def_perplexity
from .toy import ToyData, ToyHyper, ToyModel

__all__ = [
    "BowCorpus",
    "ContractError",
    "DEFHyper",
    "GNTSData",
    "GNTSHyper",
    "GNTSModel",
    "LatentGroup",
    "Model",
    "PoissonDEF",
    "ToyData",
    "ToyHyper",
    "ToyModel",
    "def_perplexity",
    "gnts_generate",
    "load_bundled_corpus",
    "n_hidden",
    "read_corpus",
    "read_gnts",
    "read_stopwords",
    "read_vocab",
    "write_gnts",
    "write_vocab",
]
