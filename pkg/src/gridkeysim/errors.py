"""Exception hierarchy shared by every gridkeysim module.

Each exception carries a stable ``code`` string so that logs, reports and the
command line can refer to failures without depending on class names.
"""


class GridKeySimError(Exception):
    code = "ERROR"


# bgkm
class NonPrimeField(GridKeySimError):
    code = "NON_PRIME_FIELD"


class InvalidParams(GridKeySimError):
    code = "INVALID_PARAMS"


class DuplicateMember(GridKeySimError):
    code = "DUPLICATE_MEMBER"


class UnknownMember(GridKeySimError):
    code = "UNKNOWN_MEMBER"


class ModulusCollision(GridKeySimError):
    code = "MODULUS_COLLISION"


class RetriesExhausted(GridKeySimError):
    code = "RETRIES_EXHAUSTED"


class BackendMismatch(GridKeySimError):
    code = "BACKEND_MISMATCH"


class MalformedPublicInfo(GridKeySimError):
    code = "MALFORMED_PUBLIC_INFO"


# puf
class DuplicateEnrollment(GridKeySimError):
    code = "DUPLICATE_ENROLLMENT"


class UnknownDevice(GridKeySimError):
    code = "UNKNOWN_DEVICE"


class NoisyPufUnsupported(GridKeySimError):
    code = "NOISY_PUF_UNSUPPORTED"


# aead
class AuthFailure(GridKeySimError):
    code = "AUTH_FAILURE"


class MalformedEnvelope(AuthFailure):
    """A wire envelope that does not parse is treated as a failed open."""


# meter
class BadPassword(GridKeySimError):
    code = "BAD_PASSWORD"


class Denied(GridKeySimError):
    code = "DENIED"

    def __init__(self, message, required_level=None):
        super().__init__(message)
        self.required_level = required_level


class NoPhysicalAccess(GridKeySimError):
    code = "NO_PHYSICAL_ACCESS"


# linkauth
class UnknownImsi(GridKeySimError):
    code = "UNKNOWN_IMSI"


class SimLocked(GridKeySimError):
    code = "SIM_LOCKED"


class BadPin(GridKeySimError):
    code = "BAD_PIN"


# netsim
class BadTopology(GridKeySimError):
    code = "BAD_TOPOLOGY"


class DuplicateMeter(GridKeySimError):
    code = "DUPLICATE"


class UnknownMeter(GridKeySimError):
    code = "UNKNOWN_METER"


class ReplayRejected(GridKeySimError):
    code = "REPLAY_REJECTED"


class ScenarioError(GridKeySimError):
    code = "PARSE_ERROR"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# threats
class UnknownScenario(GridKeySimError):
    code = "UNKNOWN_SCENARIO"
