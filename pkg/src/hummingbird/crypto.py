"""Reservation keys and packet tags.

The per-packet authenticator chain is built from a single PRF, one
AES-128 block encryption:

    A_K        = PRF(SV_K, reservation block)        per-reservation key
    FlyoverMAC = PRF(A_K, DstAddr | PktLen | TS)     per-packet tag
    AggMAC     = HopFieldMAC xor FlyoverMAC          carried in the header

Both PRF inputs are exactly one cipher block (16 bytes), so no mode or
padding is involved.  The hop field MAC itself stands in for the SCION
beaconing MAC: same width, same verification flow, but computed over a
fixed local packing, so it is not interoperable with real SCION ASes.

Everything here is a pure function of its arguments; no state is kept
between calls.
"""

from __future__ import annotations

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .wire import (
    AnyHopField,
    InfoField,
    ReservationInfo,
    mac_input_block,
    resinfo_block,
)

KEY_LEN = 16
TAG_LEN = 6  # default flyover tag width; test profiles may shrink it

# Aliases for readability: a border router's secret value and the
# reservation key derived from it are both raw AES-128 keys.
SecretValue = bytes
ReservationKey = bytes


class CryptoError(ValueError):
    pass


def prf_block(key: bytes, block: bytes) -> bytes:
    """One AES-128 block encryption; the only primitive used here."""
    if len(key) != KEY_LEN:
        raise CryptoError(f"PRF key must be {KEY_LEN} bytes, got {len(key)}")
    if len(block) != 16:
        raise CryptoError(f"PRF input must be one 16-byte block, got {len(block)}")
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor().update(block)


def derive_key(sv: SecretValue, res: ReservationInfo) -> ReservationKey:
    """Per-reservation key, recomputable by the AS from packet fields alone."""
    return prf_block(sv, resinfo_block(res))


def flyover_mac(
    a_key: ReservationKey,
    dst_isd: int,
    dst_as: int,
    pkt_len: int,
    res_start_offset: int,
    millis: int,
    counter: int,
    tag_len: int = TAG_LEN,
) -> bytes:
    """Per-packet tag over destination, length, and the timestamp triple."""
    if not 1 <= tag_len <= 16:
        raise CryptoError(f"tag_len out of range: {tag_len}")
    block = mac_input_block(dst_isd, dst_as, pkt_len, res_start_offset, millis, counter)
    return prf_block(a_key, block)[:tag_len]


def aggregate_mac(hop_mac: bytes, fly_tag: bytes) -> bytes:
    """Bytewise xor; short tags (test profiles) are zero-padded on the right."""
    if len(hop_mac) != TAG_LEN:
        raise CryptoError(f"hop MAC must be {TAG_LEN} bytes, got {len(hop_mac)}")
    if len(fly_tag) > TAG_LEN:
        raise CryptoError(f"tag longer than {TAG_LEN} bytes: {len(fly_tag)}")
    padded = fly_tag.ljust(TAG_LEN, b"\x00")
    return bytes(a ^ b for a, b in zip(hop_mac, padded))


def hop_field_mac(forwarding_key: bytes, info: InfoField, hop: AnyHopField) -> bytes:
    """Stand-in for the SCION hop field MAC.

    Covers the current SegID and the static hop fields in a fixed
    16-byte packing, truncated to 6 bytes:

        SegID (2) | InfoTimestamp (4) | ExpTime (1) | ConsIngress (2) |
        ConsEgress (2) | zero (5)
    """
    block = (
        info.seg_id.to_bytes(2, "big")
        + info.timestamp.to_bytes(4, "big")
        + hop.exp_time.to_bytes(1, "big")
        + hop.cons_ingress.to_bytes(2, "big")
        + hop.cons_egress.to_bytes(2, "big")
        + b"\x00" * 5
    )
    return prf_block(forwarding_key, block)[:TAG_LEN]


def update_seg_id(seg_id: int, hop_mac: bytes) -> int:
    """SegID chaining step, isolated so the real beaconing rule could slot in."""
    return seg_id ^ int.from_bytes(hop_mac[:2], "big")
