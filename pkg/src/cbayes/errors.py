"""Exception hierarchy shared by every module.

Each error carries the module that raised it, the offending value and a
remediation hint, so the CLI can print a useful message and pick an exit
code without inspecting the message text.
"""

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE = 3
EXIT_SAMPLER = 4


class CBayesError(Exception):
    exit_code = 1

    def __init__(self, message, *, module=None, value=None, hint=None):
        super().__init__(message)
        self.module = module
        self.value = value
        self.hint = hint

    def describe(self):
        parts = [f"[{self.module}] {self}" if self.module else str(self)]
        if self.value is not None:
            parts.append(f"offending value: {self.value!r}")
        if self.hint:
            parts.append(f"hint: {self.hint}")
        return "; ".join(parts)


class InputError(CBayesError, ValueError):
    """Malformed data, draws, configuration or arguments."""

    exit_code = EXIT_INPUT


class DegenerateWeightsError(CBayesError, FloatingPointError):
    """Every importance weight vanished at some plug-in outcome."""

    exit_code = EXIT_DEGENERATE


class SamplerError(CBayesError, RuntimeError):
    exit_code = EXIT_SAMPLER
