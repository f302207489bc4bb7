"""higgslab: spectral laboratory for harmonic metrics, Higgs bundle
deformations, and Betti maps on flat tori."""

__version__ = "0.1.0"

from .torus import (  # noqa: F401
    BeltramiField,
    DegreeError,
    Field,
    SpectralGrid,
    TorusModulus,
    contract,
    contract_conj,
    deformed_modulus,
    dolbeault,
    dolbeault_adjoint,
    inner_product,
    norm,
    random_band_limited,
)
