"""
Produce/consume bookkeeping for the named intermediates of a forward pass.

Each symbol is produced exactly once; consumers read it back through the
ledger, so after a pass every symbol should have at least one consumer.
"""

from __future__ import annotations

from collections import Counter, OrderedDict
from typing import Any, List

from ..errors import OceanError


class LedgerError(OceanError):
    pass


class SymbolLedger:
    def __init__(self):
        self._values: "OrderedDict[str, Any]" = OrderedDict()
        self._reads: Counter = Counter()

    def produce(self, name: str, value: Any) -> Any:
        if name in self._values:
            raise LedgerError(f"symbol {name!r} produced twice")
        self._values[name] = value
        return value

    def consume(self, name: str) -> Any:
        if name not in self._values:
            raise LedgerError(f"symbol {name!r} consumed before it was produced")
        self._reads[name] += 1
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    @property
    def produced(self) -> List[str]:
        return list(self._values)

    def reads(self, name: str) -> int:
        return self._reads[name]

    def unconsumed(self) -> List[str]:
        return [name for name in self._values if not self._reads[name]]
