"""Greek legal text modeling pipeline.

Subpackages cover the full desk-scale workflow: raw-byte normalization
(`textnorm`), byte-level BPE (`tokenizer`), dataset handling (`corpus`),
dynamic MLM masking (`masking`), a compact transformer encoder (`model`),
training harnesses (`training`), span and label scoring (`metrics`), and a
subcommand CLI (`cli`).
"""

__version__ = "0.1.0"
