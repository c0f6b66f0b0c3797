"""Exception types raised across the simulator."""


class CIMError(Exception):
    """Base class; ``module`` names the subsystem that raised."""

    module = "cimtrain"


class DeviceError(CIMError, ValueError):
    module = "device_model"


class DomainError(DeviceError):
    """Argument outside the domain of a device curve or mapping."""


class TopologyError(CIMError, ValueError):
    module = "quant_net"


class StateError(CIMError, RuntimeError):
    module = "quant_net"


class MappingError(CIMError, ValueError):
    module = "mapping"


class CapabilityError(MappingError):
    pass


class CapacityError(MappingError):
    def __init__(self, message, shortfall=None):
        super().__init__(message)
        self.shortfall = shortfall


class TraceError(CIMError, KeyError):
    module = "archsim"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(CIMError, ValueError):
    module = "cli_harness"

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
