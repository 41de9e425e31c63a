"""
bcrf
---------

Bipartite conditional random fields for panoptic segmentation: joint
mean-field inference over semantic labels and instance labels, with an
exact oracle, reverse-mode gradients and panoptic-quality metrics.

"""

__version__ = '0.1.0'

from bcrf.exceptions import *
from bcrf.types import *
from bcrf.kernels import *
from bcrf.energy import *
from bcrf.inference import *
from bcrf.oracle import *
from bcrf.diff import *
from bcrf.panoptic import *
from bcrf.metrics import *
from bcrf.serializers import *
from bcrf.config import *
