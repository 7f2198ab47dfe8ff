"""Exception types raised by the simulator and analysis code."""


class UndefinedBeforeFirstMeeting(LookupError):
    """``tau_last`` queried before the client's first server meeting."""

    kind = "undefined-before-first-meeting"


class NumericalDivergence(FloatingPointError):
    kind = "numerical-divergence"

    def __init__(self, slot, message="non-finite model values"):
        self.slot = slot
        super().__init__(f"{message} at slot {slot}")


class ProtocolViolation(RuntimeError):
    """Base class for exactly-once / bookkeeping violations."""

    kind = "protocol-violation"

    def __init__(self, message, *, slot=None, context=None):
        self.slot = slot
        self.context = context or {}
        prefix = f"[{self.kind}]" if slot is None else f"[{self.kind} @ slot {slot}]"
        super().__init__(f"{prefix} {message}")


class DuplicateStep(ProtocolViolation):
    kind = "duplicate-step"


class DuplicateDelivery(ProtocolViolation):
    kind = "duplicate-delivery"


class StepSizeViolatesTheorem(ValueError):
    kind = "step-size-violates-theorem"


class AnalyticFormUnavailable(ValueError):
    kind = "analytic-form-unavailable"
