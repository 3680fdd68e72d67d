"""Deterministic simulator and audit harness for a fair committee-sequenced ledger.

A committee of players appends transactions to a shared ledger in atomic
epochs (one batch per member, sized by a QoS vector), communicating over a
detectable all-to-all broadcast. A trusted master watches for stalls,
accurately names deviating players, reconfigures the committee, and adjusts
QoS allocations. Everything runs on a single-threaded discrete-event network
so that runs are reproducible byte for byte and can be audited offline.
"""

__version__ = "0.1.0"

from fairchain.types import (
    BatchSchedule,
    NonIntegralSchedule,
    QosVector,
    Transaction,
    batch_schedule_from_qos,
    check_r_fair,
)

__all__ = [
    "BatchSchedule",
    "NonIntegralSchedule",
    "QosVector",
    "Transaction",
    "batch_schedule_from_qos",
    "check_r_fair",
]
