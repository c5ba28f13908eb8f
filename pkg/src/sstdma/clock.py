"""Modular clock values and the slot/frame arithmetic built on them.

All timestamps are integer ticks in ``[0, c-1]``; arithmetic wraps modulo ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class SlotParams:
    """Timeslot length ``xi`` (ticks) and frame length ``tau`` (timeslots).

    ``airtime`` is how long one packet occupies the radio; it defaults to the
    whole slot and is shorter only when emissions carry a guard interval.
    """

    xi: int
    tau: int
    airtime: Optional[int] = None

    def __post_init__(self):
        if self.xi < 1 or self.tau < 1:
            raise ValueError(f"xi and tau must be >= 1, got xi={self.xi}, tau={self.tau}")
        if self.airtime is not None and not 1 <= self.airtime <= self.xi:
            raise ValueError(f"airtime {self.airtime} outside [1, xi={self.xi}]")

    @property
    def span(self) -> int:
        return self.xi if self.airtime is None else self.airtime

    @property
    def frame_ticks(self) -> int:
        return self.xi * self.tau


@dataclass(frozen=True)
class ModularClock:
    value: int
    modulus: int

    def __post_init__(self):
        if self.modulus < 1:
            raise ValueError(f"modulus must be positive, got {self.modulus}")
        if not 0 <= self.value < self.modulus:
            raise ValueError(f"clock value {self.value} outside [0, {self.modulus - 1}]")

    def advance(self, ticks: int) -> ModularClock:
        return advance(self, ticks)


def default_modulus(p: SlotParams) -> int:
    """Clock modulus used when a config does not fix one: ``xi * tau**2 * 1024``."""
    return p.xi * p.tau * p.tau * 1024


def validate_modulus(c: int, p: SlotParams, diam: int) -> None:
    """Reject a modulus that breaks slot alignment across wrap or is too small.

    ``c`` must be a whole multiple of the frame length and much larger than
    ``diam * tau**2`` (we require a factor of at least 16).
    """
    if c % p.frame_ticks:
        raise ValueError(f"clock modulus {c} is not a multiple of xi*tau={p.frame_ticks}")
    if c < 16 * max(diam, 1) * p.tau * p.tau:
        raise ValueError(
            f"clock modulus {c} too small: need c >> diam*tau^2 = {max(diam, 1) * p.tau ** 2}"
        )


def advance(clk: ModularClock, x: int) -> ModularClock:
    return ModularClock((clk.value + x) % clk.modulus, clk.modulus)


def slot_of(t: int, p: SlotParams) -> int:
    """Timeslot number of timestamp ``t``: ``(t // xi) % tau``."""
    return (t // p.xi) % p.tau


def frame_of(t: int, p: SlotParams) -> int:
    """Frame number of timestamp ``t``, itself counted modulo ``tau``."""
    return (t // p.frame_ticks) % p.tau


def age(ts: int, now: int, c: int) -> int:
    return (now - ts) % c


def age_within(ts: int, now: int, timeout: int, c: int) -> bool:
    """True iff ``ts`` is at most ``timeout`` ticks older than ``now`` (mod ``c``)."""
    return (now - ts) % c <= timeout


def strictly_newer(t_local: int, t_remote: int, c: int) -> bool:
    """Windowed "less than": ``t_remote`` is ahead of ``t_local`` by less than half the range.

    A plain integer comparison breaks as soon as the larger clock wraps to zero;
    the half-range window keeps a wrapped-but-ahead clock winning.
    """
    d = (t_remote - t_local) % c
    return 0 < d < c / 2


def signed_offset(t_a: int, t_b: int, c: int) -> int:
    """``t_a - t_b`` as the residue in ``(-c/2, c/2]`` consistent with :func:`strictly_newer`."""
    d = (t_a - t_b) % c
    return d - c if d > c / 2 else d
