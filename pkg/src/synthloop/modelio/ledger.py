"""Per-role token accounting with optional hard caps.

The ledger is the serialized accumulator every backend call charges into.
Counts only ever grow. A role whose total (input + output) has reached its
cap rejects further charges; the charge that crosses the cap is still
recorded so that ledger deltas always equal the sum of per-call usages.
"""

from __future__ import annotations

import threading
from typing import Optional

from ..errors import BudgetExceededError
from .types import ROLES, TokenUsage


class BudgetLedger:
    def __init__(self, caps: Optional[dict[str, int]] = None):
        self._lock = threading.Lock()
        self._totals = {role: TokenUsage(0, 0) for role in ROLES}
        self.caps = dict(caps or {})

    def total(self, role: str) -> TokenUsage:
        with self._lock:
            return self._totals[role]

    def check(self, role: str) -> None:
        """Raise if the role's cap is already reached; call before spending."""
        with self._lock:
            self._check_locked(role)

    def _check_locked(self, role: str) -> None:
        cap = self.caps.get(role)
        if cap is None:
            return
        total = self._totals[role]
        if total.input_tokens + total.output_tokens >= cap:
            raise BudgetExceededError(
                f"{role} token cap {cap} reached "
                f"({total.input_tokens} in, {total.output_tokens} out)"
            )

    def charge(self, role: str, usage: TokenUsage) -> None:
        """Atomically add usage; rejects only when the cap was already reached."""
        with self._lock:
            self._check_locked(role)
            self._totals[role] = self._totals[role] + usage

    def snapshot(self) -> dict:
        with self._lock:
            return {
                role: {
                    "input_tokens": usage.input_tokens,
                    "output_tokens": usage.output_tokens,
                    "approximate": usage.approximate,
                }
                for role, usage in self._totals.items()
            }

    def restore(self, snapshot: dict) -> None:
        """Reset totals to a previously taken snapshot (resume path)."""
        with self._lock:
            for role in ROLES:
                entry = snapshot.get(role, {})
                self._totals[role] = TokenUsage(
                    int(entry.get("input_tokens", 0)),
                    int(entry.get("output_tokens", 0)),
                    bool(entry.get("approximate", False)),
                )
