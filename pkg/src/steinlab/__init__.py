"""Small-dimension numerics for binary quantum hypothesis testing.

Subpackages and modules:

``opcore``
    Density matrices, PVMs/POVMs, pinching, relative entropies.
``symmetry``
    Symmetric-group characters, isotypic projectors, Stein measurements.
``testing``
    Neyman-Pearson tests, optimal type-II error, Stein-rate runs, audits.
``spectrum``
    Classical log-likelihood-ratio spectra and the ``sum p (log p)^2`` maximum.
``harness``
    Configuration, reports and the ``stein-lab`` command line.
"""
