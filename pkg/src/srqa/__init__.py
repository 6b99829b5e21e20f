"""Self-supervised toolkit for no-reference super-resolution image quality assessment.

Pipeline: forge a pretext dataset from LR sources with a bank of
degradation operators, pretrain an encoder with a same-method contrastive
objective plus an auxiliary scale regressor, then score images with a
ridge probe over frozen multiscale features.
"""

__version__ = "0.1.0"
