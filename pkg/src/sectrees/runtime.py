"""Run both parties of a protocol inside one process (tests and bench)."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from .protocols import Session
from .sharing import Randomness, TrustedInitializer
from .transport import Channel, Metrics, local_pair, tcp_pair


@dataclass
class PairResult:
    a: Any
    b: Any
    metrics: dict[str, Metrics] = field(default_factory=dict)
    traces: dict[str, list] = field(default_factory=dict)


def run_two_party(fn: Callable[..., Any], args_a: tuple = (), args_b: tuple = (), *,
                  seed: int = 0, transport: str = "local", dealer: TrustedInitializer | None = None,
                  rand: tuple[Randomness, Randomness] | None = None, trace: bool = False,
                  channels: tuple[Channel, Channel] | None = None) -> PairResult:
    """Call ``fn(session, *args)`` for A and B in two threads.

    Randomness comes from ``rand`` if given, else from ``dealer`` (a fresh
    seeded in-process TI by default).  The first exception raised by either
    party is re-raised after both threads stop.
    """
    if channels is None:
        channels = local_pair() if transport == "local" else tcp_pair()
    if rand is None:
        dealer = dealer or TrustedInitializer(seed)
        rand = (dealer.party("A"), dealer.party("B"))
    chans = dict(zip("AB", channels))
    if trace:
        for c in chans.values():
            c.trace = []
    out: dict[str, Any] = {}
    errors: list[BaseException] = []

    def work(role, r, args):
        try:
            out[role] = fn(Session(chans[role], r), *args)
        except BaseException as exc:  # reported to the caller below
            errors.append(exc)
            chans[role].close()

    threads = [threading.Thread(target=work, args=(role, r, args), daemon=True)
               for role, r, args in (("A", rand[0], args_a), ("B", rand[1], args_b))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for c in chans.values():
        c.close()
    if errors:
        raise errors[0]
    return PairResult(out["A"], out["B"], {r: c.metrics for r, c in chans.items()},
                      {r: c.trace for r, c in chans.items()} if trace else {})
