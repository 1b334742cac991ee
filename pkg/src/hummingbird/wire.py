"""Wire formats for the Hummingbird path type.

Everything on the wire is big endian.  The path header is laid out as

    PathMetaHdr (12 B) | InfoField * NumINF (8 B each) | hop fields (12 or 20 B)

and rides behind a small fixed packet prefix standing in for the SCION
common and address headers (only the fields the data plane actually
reads are modeled: destination ISD/AS, payload length, header length).

All codec types are immutable; encode and decode validate the same
invariants, so decode(encode(p)) == p and encode(decode(b)) == b on the
valid domain.
"""

from __future__ import annotations

import struct
from bisect import bisect_left
from dataclasses import dataclass

META_LEN = 12
INFO_LEN = 8
HOP_LEN = 12
FLYOVER_HOP_LEN = 20
PACKET_PREFIX_LEN = 12

MAC_LEN = 6
MAX_SEG_LEN = 0x7F
MAX_RES_ID = (1 << 22) - 1
MAX_COUNTER = (1 << 22) - 1
MAX_BW_CODE = (1 << 10) - 1

_WORD = 4  # hop field lengths are multiples of this


class WireError(ValueError):
    """Raised on any encode or decode violation."""


class PktLenOverflow(WireError):
    """PayloadLen + 4 * HdrLen does not fit the 16-bit PktLen field."""


def _check(value: int, bits: int, name: str) -> int:
    if not 0 <= value < (1 << bits):
        raise WireError(f"{name} out of range for {bits}-bit field: {value!r}")
    return value


@dataclass(frozen=True)
class PathMetaHdr:
    """Path meta header.

        0                   1                   2                   3
        0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1 2 3 4 5 6 7 8 9 0 1
       +---+---------------+-+-------------+-------------+-------------+
       | C |    CurrHF     |r|   Seg0Len   |   Seg1Len   |   Seg2Len   |
       +---+---------------+-+-------------+-------------+-------------+
       |                         BaseTimestamp                         |
       +-------------------+-------------------------------------------+
       |  MillisTimestamp  |                  Counter                  |
       +-------------------+-------------------------------------------+

    CurrHF counts in 4-byte words.  Seg lengths count 4-byte words per
    segment, so a plain hop contributes 3 and a flyover hop 5.
    BaseTimestamp is unix seconds; MillisTimestamp the millisecond part
    (< 1000); Counter disambiguates packets within one millisecond.
    """

    curr_inf: int
    curr_hf: int
    seg_len: tuple[int, int, int]
    base_timestamp: int
    millis_timestamp: int
    counter: int

    @property
    def num_inf(self) -> int:
        n = 0
        for length in self.seg_len:
            if length == 0:
                break
            n += 1
        return n

    @property
    def total_hop_words(self) -> int:
        return sum(self.seg_len)

    def validate(self) -> None:
        _check(self.curr_inf, 2, "curr_inf")
        _check(self.curr_hf, 8, "curr_hf")
        if len(self.seg_len) != 3:
            raise WireError("seg_len must have exactly three entries")
        for i, length in enumerate(self.seg_len):
            _check(length, 7, f"seg{i}_len")
        _check(self.base_timestamp, 32, "base_timestamp")
        _check(self.millis_timestamp, 10, "millis_timestamp")
        if self.millis_timestamp >= 1000:
            raise WireError(f"millis_timestamp must be < 1000: {self.millis_timestamp}")
        _check(self.counter, 22, "counter")
        seen_zero = False
        for i, length in enumerate(self.seg_len):
            if length == 0:
                seen_zero = True
            elif seen_zero:
                raise WireError(f"seg{i}_len > 0 after an empty segment")
        if self.num_inf == 0:
            if self.curr_inf != 0 or self.curr_hf != 0:
                raise WireError("empty path requires curr_inf == curr_hf == 0")
        elif self.curr_inf >= self.num_inf:
            raise WireError(f"curr_inf {self.curr_inf} >= num_inf {self.num_inf}")

    def pack(self) -> bytes:
        self.validate()
        w0 = (
            self.curr_inf << 30
            | self.curr_hf << 22
            | self.seg_len[0] << 14
            | self.seg_len[1] << 7
            | self.seg_len[2]
        )
        w2 = self.millis_timestamp << 22 | self.counter
        return struct.pack("!III", w0, self.base_timestamp, w2)

    @classmethod
    def unpack(cls, raw: bytes) -> "PathMetaHdr":
        if len(raw) != META_LEN:
            raise WireError(f"meta header needs {META_LEN} bytes, got {len(raw)}")
        w0, base, w2 = struct.unpack("!III", raw)
        if w0 >> 21 & 0x1:
            raise WireError("reserved bit set in path meta header")
        meta = cls(
            curr_inf=w0 >> 30,
            curr_hf=w0 >> 22 & 0xFF,
            seg_len=(w0 >> 14 & 0x7F, w0 >> 7 & 0x7F, w0 & 0x7F),
            base_timestamp=base,
            millis_timestamp=w2 >> 22,
            counter=w2 & 0x3FFFFF,
        )
        meta.validate()
        return meta


@dataclass(frozen=True)
class InfoField:
    """Segment info field.

        0                   1                   2                   3
       +-----------+-+-+---------------+-------------------------------+
       |  r (6 b)  |P|C|      RSV      |             SegID             |
       +-----------+-+-+---------------+-------------------------------+
       |                           Timestamp                           |
       +---------------------------------------------------------------+

    C is set when hop fields are traversed in construction direction, P
    marks a peering segment.  SegID seeds the per-hop MAC chain and is
    rewritten at every hop; Timestamp (unix seconds) anchors the
    relative hop expiry times of the segment.
    """

    peering: bool
    cons_dir: bool
    seg_id: int
    timestamp: int

    def validate(self) -> None:
        _check(self.seg_id, 16, "seg_id")
        _check(self.timestamp, 32, "info timestamp")

    def pack(self) -> bytes:
        self.validate()
        flags = self.peering << 1 | self.cons_dir
        return struct.pack("!BBHI", flags, 0, self.seg_id, self.timestamp)

    @classmethod
    def unpack(cls, raw: bytes) -> "InfoField":
        if len(raw) != INFO_LEN:
            raise WireError(f"info field needs {INFO_LEN} bytes, got {len(raw)}")
        flags, rsv, seg_id, timestamp = struct.unpack("!BBHI", raw)
        if flags & ~0x03 or rsv:
            raise WireError("reserved bits set in info field")
        return cls(
            peering=bool(flags & 0x02),
            cons_dir=bool(flags & 0x01),
            seg_id=seg_id,
            timestamp=timestamp,
        )


@dataclass(frozen=True)
class HopField:
    """Plain hop field.

        0                   1                   2                   3
       +-+---------+-+-+---------------+-------------------------------+
       |F| r (5 b) |I|E|    ExpTime    |          ConsIngress          |
       +-+---------+-+-+---------------+-------------------------------+
       |          ConsEgress           |          HopFieldMAC          |
       +-------------------------------+                               |
       |                     HopFieldMAC (cont.)                       |
       +---------------------------------------------------------------+

    F is the flyover discriminator and is 0 here.  ExpTime is a
    relative expiry in units of 337.5 s added to the segment info
    timestamp.  The MAC covers the static hop fields and the current
    SegID under the AS forwarding key.
    """

    ingress_alert: bool
    egress_alert: bool
    exp_time: int
    cons_ingress: int
    cons_egress: int
    mac: bytes

    flyover = False
    words = HOP_LEN // _WORD

    def validate(self) -> None:
        _check(self.exp_time, 8, "exp_time")
        _check(self.cons_ingress, 16, "cons_ingress")
        _check(self.cons_egress, 16, "cons_egress")
        if len(self.mac) != MAC_LEN:
            raise WireError(f"hop MAC must be {MAC_LEN} bytes, got {len(self.mac)}")

    def _flags(self, flyover: bool) -> int:
        return flyover << 7 | self.ingress_alert << 1 | self.egress_alert

    def pack(self) -> bytes:
        self.validate()
        return (
            struct.pack(
                "!BBHH",
                self._flags(False),
                self.exp_time,
                self.cons_ingress,
                self.cons_egress,
            )
            + self.mac
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "HopField":
        if len(raw) != HOP_LEN:
            raise WireError(f"hop field needs {HOP_LEN} bytes, got {len(raw)}")
        flags, exp_time, ingress, egress = struct.unpack("!BBHH", raw[:6])
        _check_hop_flags(flags)
        return cls(
            ingress_alert=bool(flags & 0x02),
            egress_alert=bool(flags & 0x01),
            exp_time=exp_time,
            cons_ingress=ingress,
            cons_egress=egress,
            mac=raw[6:12],
        )


@dataclass(frozen=True)
class FlyoverHopField:
    """Hop field extended with an attached reservation.

    Shares the plain hop field layout for its first 12 bytes, with F=1
    and the aggregate MAC (HopFieldMAC xor FlyoverMAC) in the MAC slot,
    followed by

       +-------------------------------------------+-------------------+
       |                 ResID (22 b)              |     BW (10 b)     |
       +-------------------------------------------+-------------------+
       |        ResStartOffset         |          ResDuration          |
       +-------------------------------+-------------------------------+

    ResStartOffset is BaseTimestamp minus the reservation start, in
    seconds, so a packet can only reference reservations that already
    started.  BW is the encoded bandwidth code.
    """

    ingress_alert: bool
    egress_alert: bool
    exp_time: int
    cons_ingress: int
    cons_egress: int
    mac: bytes
    res_id: int
    bw: int
    res_start_offset: int
    res_duration: int

    flyover = True
    words = FLYOVER_HOP_LEN // _WORD

    def validate(self) -> None:
        _check(self.exp_time, 8, "exp_time")
        _check(self.cons_ingress, 16, "cons_ingress")
        _check(self.cons_egress, 16, "cons_egress")
        if len(self.mac) != MAC_LEN:
            raise WireError(f"hop MAC must be {MAC_LEN} bytes, got {len(self.mac)}")
        _check(self.res_id, 22, "res_id")
        _check(self.bw, 10, "bw")
        _check(self.res_start_offset, 16, "res_start_offset")
        _check(self.res_duration, 16, "res_duration")

    def pack(self) -> bytes:
        self.validate()
        flags = 0x80 | self.ingress_alert << 1 | self.egress_alert
        return (
            struct.pack("!BBHH", flags, self.exp_time, self.cons_ingress, self.cons_egress)
            + self.mac
            + struct.pack("!IHH", self.res_id << 10 | self.bw, self.res_start_offset, self.res_duration)
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "FlyoverHopField":
        if len(raw) != FLYOVER_HOP_LEN:
            raise WireError(f"flyover hop field needs {FLYOVER_HOP_LEN} bytes, got {len(raw)}")
        flags, exp_time, ingress, egress = struct.unpack("!BBHH", raw[:6])
        _check_hop_flags(flags)
        res_word, start_offset, duration = struct.unpack("!IHH", raw[12:20])
        return cls(
            ingress_alert=bool(flags & 0x02),
            egress_alert=bool(flags & 0x01),
            exp_time=exp_time,
            cons_ingress=ingress,
            cons_egress=egress,
            mac=raw[6:12],
            res_id=res_word >> 10,
            bw=res_word & 0x3FF,
            res_start_offset=start_offset,
            res_duration=duration,
        )


AnyHopField = HopField | FlyoverHopField


def _check_hop_flags(flags: int) -> None:
    if flags & 0x7C:
        raise WireError("reserved bits set in hop field flags")


@dataclass(frozen=True)
class HummingbirdPath:
    """Full path header: meta, info fields, and the flat hop sequence.

    The meta header's seg_len entries are authoritative for segment
    membership; hops must tile the declared word counts exactly.
    """

    meta: PathMetaHdr
    infos: tuple[InfoField, ...]
    hops: tuple[AnyHopField, ...]

    def byte_length(self) -> int:
        return META_LEN + INFO_LEN * len(self.infos) + _WORD * sum(h.words for h in self.hops)

    def hops_by_segment(self) -> list[list[AnyHopField]]:
        """Partition hops per segment, validating the tiling."""
        segments: list[list[AnyHopField]] = []
        it = iter(self.hops)
        for i in range(self.meta.num_inf):
            words = self.meta.seg_len[i]
            seg: list[AnyHopField] = []
            while words > 0:
                hop = next(it, None)
                if hop is None or hop.words > words:
                    raise WireError(f"hop fields do not tile segment {i}")
                seg.append(hop)
                words -= hop.words
            segments.append(seg)
        if next(it, None) is not None:
            raise WireError("hop fields left over after the last segment")
        return segments

    def hop_boundaries(self) -> list[int]:
        """Word offsets at which each hop starts, plus the total."""
        offsets = [0]
        for hop in self.hops:
            offsets.append(offsets[-1] + hop.words)
        return offsets

    def segment_of_word(self, word: int) -> int:
        acc = 0
        for i in range(self.meta.num_inf):
            acc += self.meta.seg_len[i]
            if word < acc:
                return i
        raise WireError(f"word offset {word} beyond the last segment")

    def current_hop_index(self) -> int:
        try:
            return self.hop_boundaries().index(self.meta.curr_hf)
        except ValueError:
            raise WireError(f"curr_hf {self.meta.curr_hf} is not on a hop boundary") from None

    def validate(self) -> None:
        self.meta.validate()
        if len(self.infos) != self.meta.num_inf:
            raise WireError(
                f"{len(self.infos)} info fields but seg_len declares {self.meta.num_inf}"
            )
        for info in self.infos:
            info.validate()
        self.hops_by_segment()
        total = self.meta.total_hop_words
        if self.meta.curr_hf > total:
            raise WireError(f"curr_hf {self.meta.curr_hf} beyond {total} hop words")
        if self.meta.num_inf > 0:
            idx = self.current_hop_index()  # must land on a hop boundary
            if self.meta.curr_hf == total:
                expect_inf = self.meta.num_inf - 1
            else:
                expect_inf = self.segment_of_word(self.meta.curr_hf)
            if self.meta.curr_inf != expect_inf:
                raise WireError(
                    f"curr_inf {self.meta.curr_inf} does not match hop position"
                    f" (expected {expect_inf})"
                )
            del idx


def encode_path(path: HummingbirdPath) -> bytes:
    path.validate()
    parts = [path.meta.pack()]
    parts.extend(info.pack() for info in path.infos)
    parts.extend(hop.pack() for hop in path.hops)
    return b"".join(parts)


def decode_path(raw: bytes) -> HummingbirdPath:
    if len(raw) < META_LEN:
        raise WireError(f"truncated path: {len(raw)} bytes")
    meta = PathMetaHdr.unpack(raw[:META_LEN])
    pos = META_LEN
    infos = []
    for _ in range(meta.num_inf):
        if pos + INFO_LEN > len(raw):
            raise WireError("truncated path: info field cut short")
        infos.append(InfoField.unpack(raw[pos : pos + INFO_LEN]))
        pos += INFO_LEN
    hops: list[AnyHopField] = []
    for i in range(meta.num_inf):
        words = meta.seg_len[i]
        while words > 0:
            if pos + 1 > len(raw):
                raise WireError("truncated path: hop field cut short")
            flyover = bool(raw[pos] & 0x80)
            size = FLYOVER_HOP_LEN if flyover else HOP_LEN
            if size // _WORD > words:
                raise WireError(f"hop field overruns segment {i}")
            if pos + size > len(raw):
                raise WireError("truncated path: hop field cut short")
            cls = FlyoverHopField if flyover else HopField
            hops.append(cls.unpack(raw[pos : pos + size]))
            pos += size
            words -= size // _WORD
    if pos != len(raw):
        raise WireError(f"{len(raw) - pos} trailing bytes after path")
    path = HummingbirdPath(meta=meta, infos=tuple(infos), hops=tuple(hops))
    path.validate()
    return path


def info_field_offset(meta: PathMetaHdr) -> int:
    """Byte offset of the current info field from the start of the path."""
    meta.validate()
    if meta.num_inf == 0:
        raise WireError("empty path has no info fields")
    return META_LEN + INFO_LEN * meta.curr_inf


def hop_field_offset(meta: PathMetaHdr) -> int:
    """Byte offset of the current hop field from the start of the path."""
    meta.validate()
    return META_LEN + INFO_LEN * meta.num_inf + _WORD * meta.curr_hf


def advance_curr_hf(meta: PathMetaHdr, flyover: bool) -> PathMetaHdr:
    """Step curr_hf past one hop field.  Callers fix curr_inf on segment change."""
    step = FLYOVER_HOP_LEN // _WORD if flyover else HOP_LEN // _WORD
    new = meta.curr_hf + step
    if new > 0xFF:
        raise WireError(f"curr_hf overflow: {meta.curr_hf} + {step}")
    return PathMetaHdr(
        curr_inf=meta.curr_inf,
        curr_hf=new,
        seg_len=meta.seg_len,
        base_timestamp=meta.base_timestamp,
        millis_timestamp=meta.millis_timestamp,
        counter=meta.counter,
    )


# ---------------------------------------------------------------------------
# Bandwidth encoding

def encode_bw(exponent: int, significand: int) -> int:
    """Decoded bits-per-second value of a (exponent, significand) pair."""
    _check(exponent, 5, "bw exponent")
    _check(significand, 5, "bw significand")
    if exponent == 0:
        return significand
    return (32 + significand) << (exponent - 1)


def decode_bw(code: int) -> int:
    """Bits-per-second value of a 10-bit BW code."""
    _check(code, 10, "bw code")
    return encode_bw(code >> 5, code & 0x1F)


_BW_VALUES = [decode_bw(code) for code in range(1024)]
MAX_BW_VALUE = _BW_VALUES[-1]


def quantize_bw(raw_bps: int) -> int:
    """Smallest BW code whose decoded value is >= raw_bps (never undersells)."""
    if raw_bps < 0:
        raise WireError(f"bandwidth must be non-negative: {raw_bps}")
    if raw_bps > MAX_BW_VALUE:
        raise WireError(f"bandwidth {raw_bps} exceeds the encodable maximum {MAX_BW_VALUE}")
    return bisect_left(_BW_VALUES, raw_bps)


# ---------------------------------------------------------------------------
# Reservations and the two fixed PRF input blocks

@dataclass(frozen=True)
class ReservationInfo:
    """Attributes binding a reservation key to one AS hop.

    ingress/egress are the AS interface pair, res_id the per-ingress
    policing index, bw_code the encoded bandwidth, res_start unix
    seconds, duration seconds.
    """

    ingress: int
    egress: int
    res_id: int
    bw_code: int
    res_start: int
    duration: int

    def validate(self) -> None:
        _check(self.ingress, 16, "ingress")
        _check(self.egress, 16, "egress")
        _check(self.res_id, 22, "res_id")
        _check(self.bw_code, 10, "bw_code")
        _check(self.res_start, 32, "res_start")
        _check(self.duration, 16, "duration")


def resinfo_block(res: ReservationInfo) -> bytes:
    """16-byte key-derivation input: In | Eg | ResID | BW | StrT | Dur | pad."""
    res.validate()
    return (
        struct.pack("!HH", res.ingress, res.egress)
        + struct.pack("!I", res.res_id << 10 | res.bw_code)
        + struct.pack("!IH", res.res_start, res.duration)
        + b"\x00\x00"
    )


def parse_resinfo_block(raw: bytes) -> ReservationInfo:
    if len(raw) != 16:
        raise WireError(f"reservation block needs 16 bytes, got {len(raw)}")
    ingress, egress, res_word, res_start, duration = struct.unpack("!HHIIH", raw[:14])
    if raw[14:] != b"\x00\x00":
        raise WireError("reservation block padding must be zero")
    res = ReservationInfo(
        ingress=ingress,
        egress=egress,
        res_id=res_word >> 10,
        bw_code=res_word & 0x3FF,
        res_start=res_start,
        duration=duration,
    )
    res.validate()
    return res


def mac_input_block(
    dst_isd: int,
    dst_as: int,
    pkt_len: int,
    res_start_offset: int,
    millis: int,
    counter: int,
) -> bytes:
    """16-byte flyover MAC input: DstISD | DstAS | PktLen | offset | TS."""
    _check(dst_isd, 16, "dst_isd")
    _check(dst_as, 48, "dst_as")
    _check(pkt_len, 16, "pkt_len")
    _check(res_start_offset, 16, "res_start_offset")
    _check(millis, 10, "millis")
    _check(counter, 22, "counter")
    return (
        dst_isd.to_bytes(2, "big")
        + dst_as.to_bytes(6, "big")
        + struct.pack("!HH", pkt_len, res_start_offset)
        + struct.pack("!I", millis << 22 | counter)
    )


def parse_mac_input_block(raw: bytes) -> tuple[int, int, int, int, int, int]:
    if len(raw) != 16:
        raise WireError(f"MAC input block needs 16 bytes, got {len(raw)}")
    dst_isd = int.from_bytes(raw[0:2], "big")
    dst_as = int.from_bytes(raw[2:8], "big")
    pkt_len, offset, ts = struct.unpack("!HHI", raw[8:16])
    return dst_isd, dst_as, pkt_len, offset, ts >> 22, ts & 0x3FFFFF


# ---------------------------------------------------------------------------
# Packet: pseudo common/address prefix + path header

@dataclass(frozen=True)
class Packet:
    """One data-plane packet header.

    The 12-byte prefix stands in for the SCION common and address
    headers and carries only what forwarding reads:

        DstISD (2 B) | DstAS (6 B) | PayloadLen (2 B) | HdrLen (1 B) | 0 (1 B)

    HdrLen counts 4-byte words of the whole header (prefix plus path)
    and is derived from the path layout.  Payload bytes themselves are
    never materialized; PayloadLen is authoritative.
    """

    dst_isd: int
    dst_as: int
    payload_len: int
    path: HummingbirdPath

    @property
    def hdr_len(self) -> int:
        return (PACKET_PREFIX_LEN + self.path.byte_length()) // _WORD

    @property
    def wire_length(self) -> int:
        """Total bytes this packet occupies on a link."""
        return self.hdr_len * _WORD + self.payload_len

    def pkt_len_for_mac(self) -> int:
        """PktLen as covered by the flyover MAC; raises on 16-bit overflow."""
        total = self.payload_len + _WORD * self.hdr_len
        if total >= 1 << 16:
            raise PktLenOverflow(f"pkt_len {total} does not fit 16 bits")
        return total

    def validate(self) -> None:
        _check(self.dst_isd, 16, "dst_isd")
        _check(self.dst_as, 48, "dst_as")
        _check(self.payload_len, 16, "payload_len")
        if self.hdr_len > 0xFF:
            raise WireError(f"hdr_len {self.hdr_len} does not fit 8 bits")
        self.path.validate()


def encode_packet(packet: Packet) -> bytes:
    packet.validate()
    prefix = (
        packet.dst_isd.to_bytes(2, "big")
        + packet.dst_as.to_bytes(6, "big")
        + struct.pack("!HBB", packet.payload_len, packet.hdr_len, 0)
    )
    return prefix + encode_path(packet.path)


def decode_packet(raw: bytes) -> Packet:
    if len(raw) < PACKET_PREFIX_LEN:
        raise WireError(f"truncated packet prefix: {len(raw)} bytes")
    dst_isd = int.from_bytes(raw[0:2], "big")
    dst_as = int.from_bytes(raw[2:8], "big")
    payload_len, hdr_len, rsv = struct.unpack("!HBB", raw[8:12])
    if rsv:
        raise WireError("reserved prefix byte must be zero")
    if len(raw) != hdr_len * _WORD:
        raise WireError(f"hdr_len declares {hdr_len * _WORD} bytes, got {len(raw)}")
    packet = Packet(
        dst_isd=dst_isd,
        dst_as=dst_as,
        payload_len=payload_len,
        path=decode_path(raw[PACKET_PREFIX_LEN:]),
    )
    packet.validate()
    return packet
