"""Group activity feature learning at desk scale.

Pipeline: scripted scene generation -> person features -> masked person
modeling -> dual-branch spatial-temporal network -> compact group activity
feature -> location-guided attribute prediction, plus the retrieval
evaluation protocol (action IoU, AF-ISF, Hit@K, mAP, KNN) used to judge
the learned embeddings.
"""

from gaflab.backend import backend_name, use_backend

__version__ = "0.1.0"

__all__ = ["backend_name", "use_backend", "__version__"]
