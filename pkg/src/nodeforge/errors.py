"""Exception hierarchy shared across nodeforge modules."""


class NodeforgeError(Exception):
    """Base class for all nodeforge failures."""


class PreconditionError(NodeforgeError, ValueError):
    """An operation was called with arguments violating its precondition."""


# node model
class SchemaError(NodeforgeError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class CycleError(NodeforgeError):
    def __init__(self, cycle):
        super().__init__("dependency cycle: " + " -> ".join(cycle))
        self.cycle = list(cycle)


class DanglingDependencyError(NodeforgeError):
    def __init__(self, node, missing):
        super().__init__(f"node {node!r} depends on unknown node {missing!r}")
        self.node = node
        self.missing = missing


class ValidationError(NodeforgeError):
    """A library or blueprint failed validation; carries the report(s)."""

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)


# llm gateway
class ProviderError(NodeforgeError):
    """Transport or provider failure. Retryable."""


class InvalidLogprobError(ProviderError):
    pass


class UnsupportedError(NodeforgeError):
    pass


class MalformedOutputError(NodeforgeError):
    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


# harvest / search
class EmptySourceError(NodeforgeError, ValueError):
    pass


class SearchBackendError(NodeforgeError):
    pass


# runtime
class MissingInputError(NodeforgeError, KeyError):
    def __init__(self, node, key):
        super().__init__(f"node {node!r} is missing input {key!r}")
        self.node = node
        self.key = key

    def __str__(self):
        return self.args[0]


class WiringError(NodeforgeError):
    pass


# reward engine
class EmptyTargetError(NodeforgeError, ValueError):
    pass


class AlphaRangeError(NodeforgeError, ValueError):
    pass


class AlignmentError(NodeforgeError):
    pass


# optimizer
class InterfaceDriftError(NodeforgeError):
    def __init__(self, node, fields):
        super().__init__(f"refinement of {node!r} changed interface fields: {', '.join(fields)}")
        self.node = node
        self.fields = list(fields)


class StorageError(NodeforgeError):
    pass
