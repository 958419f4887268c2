"""Exception hierarchy shared by every stage of the test pipeline."""


class HybridTestError(Exception):
    """Base class; the CLI turns any subclass into a JSON error body."""

    kind = "error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class InvalidDataError(HybridTestError, ValueError):
    kind = "invalid_data"


class IllPosedError(HybridTestError, ValueError):
    kind = "ill_posed"


class DivergedError(HybridTestError, ArithmeticError):
    kind = "diverged"


class RankDeficiencyError(HybridTestError, ArithmeticError):
    kind = "rank_deficiency"


class DegenerateVarianceError(HybridTestError, ArithmeticError):
    kind = "degenerate_variance"


class InsufficientSampleError(HybridTestError, ValueError):
    kind = "insufficient_sample"


class ContractViolation(HybridTestError, ValueError):
    kind = "contract_violation"


class SimulationFailure(HybridTestError, RuntimeError):
    kind = "simulation_failure"
