"""Multi-task sequence-to-sequence semantic parsing at desk scale.

Subpackages build on each other roughly bottom-up: `tensor` (autodiff core),
`model` (GRU encoder, attention, decoder step), `actions` (joint write/copy
softmax, loss, greedy decoding), `data` (vocabulary, corpora, synthetic
grammar), `multitask` (parameter sharing architectures), `training` and
`experiment` (loop, metrics, transfer study), `cli` (command line front end).
"""

__version__ = "0.1.0"
