"""Graph-based biaffine dependency parser with projective decoding."""

from arcparse.conllx import Relation, Sentence, Token, parse_conllx, validate, write_conllx

__all__ = ["Relation", "Sentence", "Token", "parse_conllx", "validate", "write_conllx"]
__version__ = "0.1.0"
