"""proofloop: a desk-scale verify-generate-learn-correct pipeline over an
equational Peano-arithmetic calculus."""

__version__ = "0.1.0"
