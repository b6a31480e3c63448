"""Error taxonomy shared by the engine, service, and CLI.

Each category maps to one CLI exit code and one HTTP status, so a thin
client can translate failures without parsing messages.
"""


class VoxshapError(Exception):
    """Base class; carries the CLI exit code for its category."""

    exit_code = 1
    category = "internal"


class ValidationError(VoxshapError):
    """Bad inputs: missing files, dimension mismatches, empty ROI, bad config."""

    exit_code = 2
    category = "validation"


class PredictorError(VoxshapError):
    """Predictor launch, protocol, or inference failure."""

    exit_code = 3
    category = "predictor"


class NumericalError(VoxshapError):
    """Solver rank deficiency or other numerical failure."""

    exit_code = 4
    category = "numerical"
