"""Grid oracle for the value function and numerical jet tests."""

from ._backend import COMPILED_AVAILABLE, default_name as default_backend
from .grid import (
    GridSpec,
    GridValueFunction,
    sample_directions,
    solve_value_function,
    write_grid,
)
from .jets import JetCandidate, probe_directions, probe_radii, test_first_order, test_jet
