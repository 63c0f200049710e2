"""Measurement and attestation reports.

Encoding is length-prefixed everywhere so concatenation is injective:
``lp(x) = u64le(len(x)) || x``. A measurement is

    SHA-256( lp(image) || lp(enc(policy)) || lp(enc(peripherals)) )

with ``enc(policy) = u64le(min_runtime) || u64le(window)`` and
``enc(peripherals)`` the lexicographically sorted names, each UTF-8 and
lp-framed. Reports are authenticated with HMAC-SHA-256 under a per-device
root secret over the lp-framed report fields in declaration order.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Iterable

from .policy import SchedulingPolicy

DIGEST_SIZE = 32
NONCE_SIZE = 32


def lp(data: bytes) -> bytes:
    return struct.pack("<Q", len(data)) + data


def encode_policy(policy: SchedulingPolicy) -> bytes:
    return struct.pack("<QQ", policy.min_runtime_ms, policy.window_ms)


def encode_peripherals(names: Iterable[str]) -> bytes:
    return b"".join(lp(name.encode("utf-8")) for name in sorted(names))


@dataclass(frozen=True)
class Measurement:
    digest: bytes

    def __post_init__(self) -> None:
        if len(self.digest) != DIGEST_SIZE:
            raise ValueError("measurement digest must be 32 bytes")

    def hex(self) -> str:
        return self.digest.hex()


@dataclass(frozen=True)
class AttestationReport:
    measurement: Measurement
    nonce: bytes
    boot_session: int
    mem_size: int
    tag: bytes

    def line(self) -> str:
        """The single-line wire form used in traces and by the CLI."""
        return (
            f"report measurement={self.measurement.hex()} nonce={self.nonce.hex()} "
            f"session={self.boot_session} mem={self.mem_size} tag={self.tag.hex()}"
        )


def measure(image: bytes, policy: SchedulingPolicy, peripherals: Iterable[str]) -> Measurement:
    h = hashlib.sha256()
    h.update(lp(image))
    h.update(lp(encode_policy(policy)))
    h.update(lp(encode_peripherals(peripherals)))
    return Measurement(h.digest())


def _tag_input(measurement: Measurement, nonce: bytes, boot_session: int, mem_size: int) -> bytes:
    return (
        lp(measurement.digest)
        + lp(nonce)
        + lp(struct.pack("<Q", boot_session))
        + lp(struct.pack("<Q", mem_size))
    )


def build_report(
    measurement: Measurement,
    nonce: bytes,
    boot_session: int,
    mem_size: int,
    device_secret: bytes,
) -> AttestationReport:
    if len(nonce) != NONCE_SIZE:
        raise ValueError("nonce must be 32 bytes")
    tag = hmac.new(
        device_secret, _tag_input(measurement, nonce, boot_session, mem_size), hashlib.sha256
    ).digest()
    return AttestationReport(measurement, nonce, boot_session, mem_size, tag)


def verify_report(
    report: AttestationReport,
    image: bytes,
    policy: SchedulingPolicy,
    peripherals: Iterable[str],
    nonce: bytes,
    boot_session: int,
    mem_size: int,
    device_secret: bytes,
) -> bool:
    """True iff the report matches the expected inputs bit for bit.

    Every comparison is evaluated before combining, so the check's shape
    does not depend on which field (if any) was tampered with.
    """
    expected_measurement = measure(image, policy, peripherals)
    expected_tag = hmac.new(
        device_secret,
        _tag_input(report.measurement, report.nonce, report.boot_session, report.mem_size),
        hashlib.sha256,
    ).digest()
    ok_measurement = hmac.compare_digest(report.measurement.digest, expected_measurement.digest)
    ok_nonce = hmac.compare_digest(report.nonce, nonce)
    ok_session = report.boot_session == boot_session
    ok_mem = report.mem_size == mem_size
    ok_tag = hmac.compare_digest(report.tag, expected_tag)
    return ok_measurement & ok_nonce & ok_session & ok_mem & ok_tag
