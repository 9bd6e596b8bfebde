"""Exception hierarchy.

Every solver failure derives from ``CPnPError`` so callers (and the CLI) can
tell numerical failures apart from bad input. ``stage`` names the pipeline
step that raised, when known.
"""


class CPnPError(Exception):
    stage = None

    def __init__(self, message="", stage=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage

    def __str__(self):
        msg = super().__str__()
        prefix = type(self).__name__
        if self.stage:
            prefix = f"{prefix} [{self.stage}]"
        return f"{prefix}: {msg}" if msg else prefix


class NonPositiveDepth(CPnPError):
    def __init__(self, index, depth, stage=None):
        self.index = index
        self.depth = depth
        super().__init__(f"point {index} has non-positive depth {depth:.3e}", stage)


class DegenerateMatrix(CPnPError):
    pass


class TooFewPoints(CPnPError):
    pass


class IllConditionedSystem(CPnPError):
    def __init__(self, condition, stage=None):
        self.condition = condition
        super().__init__(f"normal matrix condition number {condition:.3e} exceeds limit", stage)


class NoRealRoot(CPnPError):
    pass


class CorrectedMatrixNotPD(CPnPError):
    def __init__(self, min_eigenvalue, stage=None):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"bias-corrected normal matrix is not positive definite "
            f"(smallest eigenvalue {min_eigenvalue:.3e})",
            stage,
        )


class DegenerateTheta(CPnPError):
    pass


class SingularNormalMatrix(CPnPError):
    pass


class RegionNotVisible(CPnPError):
    pass


class EmptyInput(CPnPError, ValueError):
    pass
