"""Silent-speech decoding stack for four-channel surface EMG.

Submodules cover the full path from raw signal to word label: synthetic data
generation (synth), band-pass filtering and spectral features (dsp), training
augmentations (augment), a small autodiff layer set (nn), the squeeze-and-
excitation residual network (model), training and evaluation (traineval),
streaming capture and online decoding (stream), figures (plots), and the
command line front end (cli).
"""

__version__ = "0.1.0"
