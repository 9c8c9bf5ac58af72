"""hetseg: dataset-side machinery for heterogeneous multi-dataset
semantic and panoptic segmentation.

Subpackages by concern:

* taxonomy          unified semantic-atom taxonomy over dataset label spaces
* raster_io         PGM16 / UIR1 / PRB1 codecs, confusion matrices
* conversion        group-sum probability conversion, losses, exact gradient
* weak_supervision  pseudo-labels from boxes/tags, refinement, mixed loss
* metrics           mIoU/mPA, Knowledgeability, PQ, PartPQ, PartIoU, Impact
* panoptic_uid      hierarchical 7-digit uid codec and projections
* data_selection    GMM similarity ranking, diversity scoring, BIC
* toy_trainer       desk-scale end-to-end multi-dataset training check
* cli               the ``hetseg`` command-line entry point
"""

from .errors import FormatError, HetsegError, NumericError, ValidationError

__version__ = "0.1.0"

__all__ = ["HetsegError", "FormatError", "ValidationError", "NumericError", "__version__"]
