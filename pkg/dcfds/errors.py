from __future__ import annotations

from typing import Any


class DcfdsError(ValueError):
    def __init__(self, code: str, message: str, context: dict[str, Any] | None = None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.context = dict(context or {})

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "context": self.context}


class ConfigError(DcfdsError):
    pass


class FormatError(DcfdsError):
    pass


class ShapeError(DcfdsError):
    pass
