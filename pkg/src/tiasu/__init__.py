"""tiasu: speech-modality imputation with multi-expert TTS generation.

Library + CLI for training and evaluating speech-understanding classifiers
when a fraction of the training (p) or testing (q) speech is missing, with
text-to-speech imputation, zero-filling and dropout baselines, a synthetic
desk-scale benchmark, and adapters for full-scale pretrained components.
"""

__version__ = "0.1.0"
