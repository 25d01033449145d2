"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Bad geometric input (coincident points, non-finite coordinates)."""


class PlanValidationError(ValueError):
    """An action plan violates the plan invariants."""


class GenerationError(RuntimeError):
    """Scene or episode generation could not satisfy its constraints."""


class MalformedEpisodeError(ValueError):
    """An episode fails its own internal consistency checks."""


class ParseError(ValueError):
    """Base class for wire-format parse failures."""


class PolicyParseError(ParseError):
    """Base class for policy-output parse failures."""


class JsonSyntaxError(PolicyParseError):
    """Policy output is not valid JSON."""


class SchemaFieldError(PolicyParseError):
    """Policy JSON has unknown or missing fields (strict mode)."""


class DecisionDomainError(PolicyParseError):
    """Policy decision is outside the closed {skip, call_wm} set."""


class ActionTypeError(PolicyParseError):
    """An action entry names an unknown action type."""


class ActionValueError(PolicyParseError):
    """An action entry value is not a positive integer."""


class SkipWithActionsError(PolicyParseError):
    """Decision is skip but the actions list is nonempty."""


class VerifierParseError(ParseError):
    """Verifier output is not a bare integer in [0, 9]."""


class AnswerParseError(ParseError):
    """Answer-backend response is not a valid score distribution."""


class BackendError(RuntimeError):
    """A model backend failed (transport error or unusable response)."""


class ConfigError(ValueError):
    """Base class for configuration problems."""


class ConfigFileError(ConfigError):
    """Config file missing or unreadable."""


class ConfigSchemaError(ConfigError):
    """Config has unknown fields, missing fields, or wrong types."""


class ConfigRangeError(ConfigError):
    """A config value is outside its allowed range."""


class LogError(ValueError):
    """A run log is corrupt or has an incompatible schema."""
