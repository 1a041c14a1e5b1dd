"""Adversarial dropout for recurrent neural networks."""
from .core import TapeGraph
from .masks import AdvConfig, DropoutMask, adversarial_mask
from .models import Lstm, SequenceBatch, SimpleRnn

__author__ = 'advdrop contributors'
__version__ = '0.1.0'
