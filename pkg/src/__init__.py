"""SparseCSE lab - contrastive sentence encoder with head/neuron pruning and rewinding."""

__version__ = "0.1.0"
