"""Graph neural networks for binary molecular property prediction with
reliability and calibration diagnostics."""

__version__ = "0.1.0"

from . import errors
from .smiles import Molecule, parse_smiles

__all__ = ["errors", "Molecule", "parse_smiles", "__version__"]
