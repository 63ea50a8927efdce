"""Exception hierarchy; every class carries the CLI exit code it maps to."""


class DLGDDError(Exception):
    exit_code = 1
    kind = "error"

    def record(self):
        return {"error": self.kind, "message": str(self)}


class UsageError(DLGDDError, ValueError):
    exit_code = 2
    kind = "usage"


class BoundsError(UsageError):
    kind = "bounds"


class ShapeError(UsageError):
    kind = "shape"


class ConfigError(UsageError):
    kind = "config"


class DataError(DLGDDError, ValueError):
    exit_code = 3
    kind = "data"


class ParseError(DataError):
    kind = "parse"


class BoxTooSmallError(DataError):
    kind = "box_too_small"


class QuotaShortfallError(DLGDDError):
    exit_code = 4
    kind = "quota_shortfall"

    def __init__(self, message, manifest=None):
        super().__init__(message)
        self.manifest = manifest

    def record(self):
        rec = super().record()
        if self.manifest is not None:
            rec["manifest"] = self.manifest.to_dict()
        return rec


class NumericError(DLGDDError, FloatingPointError):
    exit_code = 5
    kind = "numeric"
