"""Open-set face re-identification pipeline: track mining, cosine galleries, evaluation protocols."""

__version__ = "0.1.0"
