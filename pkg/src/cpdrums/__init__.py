"""Conditional drum-track generation with compound-word token streams.

Subpackages/modules:

- ``midi``: standard MIDI file reader/writer and grid quantization
- ``preprocess``: role selection, percussion mapping, phrase segmentation
- ``codec``: compound-word tokenization of conditions and drum tracks
- ``metrics``: rhythm descriptors (density, syncopation, groove, ...)
- ``patterns``: SIA-family geometric pattern compression
- ``nn``: numpy autodiff, sequence model, training and sampling
- ``cli``: command-line pipeline entry points
"""

__version__ = "0.1.0"
