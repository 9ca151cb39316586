"""mimlab: desk-scale masked-image-modeling laboratory for pyramid
transformers with uniform masking, equivalence certification, and
efficiency benchmarking."""

__version__ = "0.1.0"
