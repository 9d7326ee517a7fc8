"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``code`` so the CLI can emit a
single ``error=<code> reason=<message>`` line on failure.
"""


class GledError(Exception):
    code = "error"


class ConfigurationError(GledError, ValueError):
    code = "config"


class ContractError(GledError, ValueError):
    code = "contract"


class NumericalError(GledError, FloatingPointError):
    code = "numerical"


class NumericalBlowupError(NumericalError):
    code = "blowup"


class TrainingDivergedError(NumericalError):
    code = "diverged"


class PersistenceError(GledError, OSError):
    code = "persistence"


class IngestionError(PersistenceError):
    code = "ingestion"
