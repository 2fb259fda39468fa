"""physgen: PDE field datasets, score-based generative models, and
physically-consistent sampling with imputation / POD baselines."""

__version__ = "0.1.0"
