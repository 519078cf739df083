"""Planning and simulation of hybrid AC / multi-terminal HVDC grids with offshore wind.

Modules: ``netmodel`` (case data), ``acpf`` and ``dcgrid`` (network solves),
``converter`` (VSC loss model), ``opf`` (AC/DC optimal power flow on a
primal-dual interior-point solver in ``ipm``), ``forecast`` (random-forest
wind forecasting), ``control`` (converter droop laws), ``simulator``
(quasi-dynamic strategy comparison) and ``cli``.
"""

from .errors import AcMtdcError
from .netmodel import NetworkCase, load_bundled_case, load_case

__version__ = "0.1.0"
__all__ = ["AcMtdcError", "NetworkCase", "load_bundled_case", "load_case", "__version__"]
