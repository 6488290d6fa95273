"""coilnav: planar magnetic robot control toolkit.

Analytic Zernike coil-field models fitted to a field oracle, a
current-space nonlinear MPC, Kalman-filtered pose estimation under
degraded feedback, baseline controllers, and a closed-loop experiment
harness with a CLI (``coilnav --help``).
"""

from ._kernels import compiled_available, default_backend

__version__ = "0.1.0"

__all__ = ["compiled_available", "default_backend", "__version__"]
