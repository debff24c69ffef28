"""Individual brain parcellation on surface meshes via graph attention and
minimax-entropy domain adaptation.

The package is organised around a small pipeline: build a vertex graph from a
triangular surface mesh (`mesh`, `graph`), turn vertex time series into
PCA-reduced connectivity fingerprints (`connectome`), train an attention-based
parcellation model with semi-supervised adversarial adaptation (`autodiff`,
`model`, `training`), and score the result (`metrics`, `report`).  `synth`
generates ground-truth-bearing synthetic corpora; `cli` ties everything into
reproducible runs.
"""

__version__ = "0.1.0"

from .errors import DivergenceError, InputError, ArtifactIOError

__all__ = ["__version__", "DivergenceError", "InputError", "ArtifactIOError"]
