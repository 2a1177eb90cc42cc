"""Exception hierarchy.

Every error carries a process exit code so the CLI can map failures to
``ClassName: message`` lines and distinct nonzero statuses.
"""


class KanMcpError(Exception):
    exit_code = 1

    def __str__(self):
        msg = super().__str__()
        return " ".join(msg.split())


# autodiff / numerics (exit 10-19)
class ShapeMismatch(KanMcpError, ValueError):
    exit_code = 10


class NonFiniteInput(KanMcpError, ValueError):
    exit_code = 11


class DomainError(KanMcpError, ValueError):
    exit_code = 12


class NonScalarLoss(KanMcpError, ValueError):
    exit_code = 13


class CycleDetected(KanMcpError, RuntimeError):
    exit_code = 14


class NonDeterministicGraph(KanMcpError, RuntimeError):
    exit_code = 15


class LengthMismatch(ShapeMismatch):
    exit_code = 16


# spline / kan (exit 20-29)
class DegenerateGrid(KanMcpError, ValueError):
    exit_code = 20


class RankDeficient(KanMcpError, ValueError):
    exit_code = 21


class BadWidths(KanMcpError, ValueError):
    exit_code = 22


class EmptyProbe(KanMcpError, ValueError):
    exit_code = 23


# losses / pareto / model (exit 30-39)
class MissingModality(KanMcpError, KeyError):
    exit_code = 30

    def __str__(self):
        return KanMcpError.__str__(self)


class BothZero(KanMcpError, ValueError):
    exit_code = 31


class GroupMismatch(KanMcpError, KeyError):
    exit_code = 32

    def __str__(self):
        return KanMcpError.__str__(self)


class EmptySequence(KanMcpError, ValueError):
    exit_code = 33


class EmptyDataset(KanMcpError, ValueError):
    exit_code = 34


class CorruptCheckpoint(KanMcpError, ValueError):
    exit_code = 35


# data (exit 40-49)
class BadSpec(KanMcpError, ValueError):
    exit_code = 40


class MissingFile(KanMcpError, FileNotFoundError):
    exit_code = 41


class RowCountMismatch(KanMcpError, ValueError):
    exit_code = 42


class ParseError(KanMcpError, ValueError):
    exit_code = 43

    def __init__(self, path, line, col, detail):
        self.path, self.line, self.col = str(path), line, col
        super().__init__(f"{path}:{line}:{col}: {detail}")


class LabelRangeError(KanMcpError, ValueError):
    exit_code = 44


# metrics (exit 50-59)
class NoNonzeroLabels(KanMcpError, ValueError):
    exit_code = 50


# viz / io / cli (exit 60-69)
class IoError(KanMcpError, OSError):
    exit_code = 60


class AttributionShapeMismatch(KanMcpError, ValueError):
    exit_code = 61


class EmptyHistory(KanMcpError, ValueError):
    exit_code = 62


class ConfigError(KanMcpError, ValueError):
    exit_code = 63


class UsageError(KanMcpError, ValueError):
    exit_code = 64
