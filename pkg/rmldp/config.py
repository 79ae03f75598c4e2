"""Configuration management for rmldp."""

from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Numerical defaults and runtime settings.

    Every value can be overridden from the environment with the ``RMLDP_``
    prefix (``RMLDP_SEED``, ``RMLDP_RESOLUTION``, ...) or from a ``.env`` file.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="RMLDP_",
        case_sensitive=False,
        extra="ignore",
    )

    # Ensemble validation
    search_depth: int = Field(6, description="Maximal product length searched by validate")
    proximal_gap: float = Field(1e-6, description="Relative gap between top eigenvalue moduli")
    rational_tolerance: float = Field(1e-9, description="Distance to p/q counted as rational")
    rational_max_denominator: int = Field(64, description="Largest q tried in the rationality test")
    singular_tolerance: float = Field(1e-14, description="|det| below which an atom is singular")
    iota_grid_size: int = Field(4096, description="Directions scanned before local descent in iota")
    iota_tolerance: float = Field(1e-8, description="Local descent tolerance for iota")

    # Spectral solver
    resolution: int = Field(512, description="Default sphere grid resolution")
    eigen_tolerance: float = Field(1e-12, description="Relative eigenvalue change accepted")
    residual_tolerance: float = Field(1e-12, description="Eigen-residual sup-norm accepted")
    max_iterations: int = Field(100_000, description="Power iteration cap")
    dense_check_limit: int = Field(1024, description="Grids below this size get a dense cross-check")
    refinement_attempts: int = Field(3, description="Resolution doublings tried on non-convergence")
    degenerate_gap: float = Field(1e-3, description="Spectral gap below which a warning is logged")

    # Cumulant layer
    n_cheb: int = Field(33, description="Chebyshev nodes for the interpolant of log kappa")
    s_min: float = Field(-0.5, description="Lower end of the s range")
    s_max: float = Field(3.0, description="Upper end of the s range")
    eta0: float = Field(0.5, description="Largest admissible |s| for negative tilts")
    saddle_factor: float = Field(0.25, description="delta = factor * sigma^2 * distance to range edge")
    newton_max_iter: int = Field(100, description="Newton iteration cap")

    # Smoothing
    kernel_half_width: float = Field(200.0, description="Half width of the unscaled rho grid")
    kernel_points: int = Field(16385, description="Samples of the unscaled rho grid")
    kernel_quadrature_nodes: int = Field(256, description="Gauss-Legendre nodes for the transforms")
    fourier_points: int = Field(16384, description="Samples of the Fourier route t-grid")

    # Monte Carlo
    block_size: int = Field(4096, description="Replicates per counter-based stream")
    enumeration_guard: int = Field(2**24, description="Largest number of enumerated paths")
    log_weight_guard: float = Field(700.0, description="Largest admissible centred log-weight spread")
    renormalization_warning: float = Field(1e-3, description="Off-grid weight correction flagged above this")

    # Runtime
    seed: Optional[int] = Field(None, description="Seed fallback when no seed is configured")
    workers: int = Field(1, description="Worker threads for parallel stages")
    log_level: str = Field("INFO", description="Logging level")
    json_logs: bool = Field(False, description="Render logs as JSON")

    def resolve_seed(self, seed: Optional[int] = None) -> int:
        """Pick the explicit seed, then the configured fallback, then 0."""
        if seed is not None:
            return seed
        if self.seed is not None:
            return self.seed
        return 0


# Global settings instance
settings = Settings()


def get_settings() -> Settings:
    """Get the global settings instance."""
    return settings
