"""End-host packet construction and path reversal.

A source holds a path plan: per segment the info field seed, per hop
the forwarding interfaces, the hop field MAC (obtained out of band
from beaconing, here from the simulation's AS registry), and for hops
with a purchased reservation the reservation attributes plus the
delivered key.

Every packet stamps the current second, millisecond, and a counter
that makes the (base, millis, counter) triple unique per source; the
triple is MAC input, so two distinct packets never share a tag.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

from . import crypto
from .wire import (
    FlyoverHopField,
    HopField,
    HummingbirdPath,
    InfoField,
    Packet,
    PathMetaHdr,
    ReservationInfo,
)

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000
MAX_COUNTER = (1 << 22) - 1


class SourceError(ValueError):
    pass


class Backpressure(SourceError):
    """More than 2**22 packets in one millisecond; the sender must stall."""


class ReservationInactive(SourceError):
    pass


@dataclass(frozen=True)
class HopPlan:
    cons_ingress: int
    cons_egress: int
    hop_mac: bytes
    exp_time: int = 255
    # (attributes, delivered key) for a purchased reservation
    reservation: tuple[ReservationInfo, bytes] | None = None


@dataclass(frozen=True)
class SegmentPlan:
    seg_id: int
    timestamp: int
    hops: tuple[HopPlan, ...]
    cons_dir: bool = True
    peering: bool = False


@dataclass(frozen=True)
class PathPlan:
    dst_isd: int
    dst_as: int
    segments: tuple[SegmentPlan, ...]


@dataclass
class CounterState:
    """Per-source counter, monotone within each millisecond."""

    last_ms: tuple[int, int] | None = None
    value: int = 0

    def next(self, base_timestamp: int, millis: int) -> int:
        ms = (base_timestamp, millis)
        if ms != self.last_ms:
            self.last_ms = ms
            self.value = 0
        if self.value > MAX_COUNTER:
            raise Backpressure(f"counter exhausted within millisecond {ms}")
        counter = self.value
        self.value += 1
        return counter


def build_packet(
    plan: PathPlan,
    payload_len: int,
    clock: Callable[[], int],
    counter_state: CounterState,
    allow_inactive: bool = False,
    tag_len: int = crypto.TAG_LEN,
) -> Packet:
    """Assemble one packet, stamping time and computing flyover tags.

    Refuses reservations that are not active right now unless
    allow_inactive is set (negative tests); an inactive reservation is
    then encoded as well as the wire format permits, which shifts its
    start and makes routers reject it.
    """
    now = clock()
    base = now // NS_PER_S
    if base >= 1 << 32:
        raise SourceError(f"clock beyond 32-bit unix seconds: {base}")
    millis = now % NS_PER_S // NS_PER_MS
    counter = counter_state.next(base, millis)

    infos = []
    hops: list[HopField | FlyoverHopField] = []
    seg_words = []
    offsets: dict[int, int] = {}  # hop index -> res_start_offset
    for segment in plan.segments:
        if not segment.hops:
            raise SourceError("segment without hop fields")
        infos.append(
            InfoField(
                peering=segment.peering,
                cons_dir=segment.cons_dir,
                seg_id=segment.seg_id,
                timestamp=segment.timestamp,
            )
        )
        words = 0
        for hop_plan in segment.hops:
            hop = _assemble_hop(hop_plan, now, base, allow_inactive, offsets, len(hops))
            hops.append(hop)
            words += hop.words
        seg_words.append(words)
    if len(seg_words) > 3:
        raise SourceError(f"at most three segments, got {len(seg_words)}")
    while len(seg_words) < 3:
        seg_words.append(0)

    meta = PathMetaHdr(
        curr_inf=0,
        curr_hf=0,
        seg_len=tuple(seg_words),
        base_timestamp=base,
        millis_timestamp=millis,
        counter=counter,
    )
    packet = Packet(
        dst_isd=plan.dst_isd,
        dst_as=plan.dst_as,
        payload_len=payload_len,
        path=HummingbirdPath(meta=meta, infos=tuple(infos), hops=tuple(hops)),
    )
    if packet.hdr_len > 0xFF:
        raise SourceError(f"path too long: hdr_len {packet.hdr_len}")
    pkt_len = packet.pkt_len_for_mac()  # raises on 16-bit overflow

    # Sizes are fixed now; fill in the per-packet tags.
    final_hops = list(packet.path.hops)
    plan_hops = [hp for segment in plan.segments for hp in segment.hops]
    for index, hop in enumerate(final_hops):
        if not hop.flyover:
            continue
        res, a_key = plan_hops[index].reservation
        tag = crypto.flyover_mac(
            a_key,
            plan.dst_isd,
            plan.dst_as,
            pkt_len,
            offsets[index],
            millis,
            counter,
            tag_len,
        )
        final_hops[index] = replace(hop, mac=crypto.aggregate_mac(hop.mac, tag))
    packet = replace(packet, path=replace(packet.path, hops=tuple(final_hops)))
    packet.validate()
    return packet


def _assemble_hop(
    hop_plan: HopPlan,
    now: int,
    base: int,
    allow_inactive: bool,
    offsets: dict[int, int],
    index: int,
) -> HopField | FlyoverHopField:
    if hop_plan.reservation is None:
        return HopField(
            ingress_alert=False,
            egress_alert=False,
            exp_time=hop_plan.exp_time,
            cons_ingress=hop_plan.cons_ingress,
            cons_egress=hop_plan.cons_egress,
            mac=hop_plan.hop_mac,
        )
    res, _ = hop_plan.reservation
    if (res.ingress, res.egress) != (hop_plan.cons_ingress, hop_plan.cons_egress):
        raise SourceError(
            f"reservation interfaces ({res.ingress}, {res.egress}) do not match "
            f"hop ({hop_plan.cons_ingress}, {hop_plan.cons_egress})"
        )
    active = res.res_start * NS_PER_S <= now <= (res.res_start + res.duration) * NS_PER_S
    if not active and not allow_inactive:
        raise ReservationInactive(
            f"reservation [{res.res_start}, {res.res_start + res.duration}] "
            f"not active at build time"
        )
    offset = min(max(base - res.res_start, 0), 0xFFFF)
    offsets[index] = offset
    return FlyoverHopField(
        ingress_alert=False,
        egress_alert=False,
        exp_time=hop_plan.exp_time,
        cons_ingress=hop_plan.cons_ingress,
        cons_egress=hop_plan.cons_egress,
        mac=hop_plan.hop_mac,  # aggregate written once pkt_len is known
        res_id=res.res_id,
        bw=res.bw_code,
        res_start_offset=offset,
        res_duration=res.duration,
    )


def reverse_path(packet: Packet) -> Packet:
    """Reply-direction packet for a delivered one.

    Flyover hop fields collapse to plain ones (reservations are one
    way); their MAC slots must already hold the plain hop MAC, which is
    true exactly when the packet traveled past them, so every flyover
    must lie behind curr_hf.  Segment and hop order flip, construction
    direction flags invert, and the sender-stamped meta fields reset.
    """
    path = packet.path
    boundaries = path.hop_boundaries()
    for index, hop in enumerate(path.hops):
        if hop.flyover and boundaries[index + 1] > path.meta.curr_hf:
            raise SourceError("packet not in post-forwarding state: live flyover ahead")

    segments = path.hops_by_segment()
    rev_infos = []
    rev_hops: list[HopField] = []
    rev_words = []
    for info, seg_hops in zip(reversed(path.infos), reversed(segments)):
        rev_infos.append(replace(info, cons_dir=not info.cons_dir))
        for hop in reversed(seg_hops):
            rev_hops.append(
                HopField(
                    ingress_alert=hop.ingress_alert,
                    egress_alert=hop.egress_alert,
                    exp_time=hop.exp_time,
                    cons_ingress=hop.cons_ingress,
                    cons_egress=hop.cons_egress,
                    mac=hop.mac,
                )
            )
        rev_words.append(3 * len(seg_hops))
    while len(rev_words) < 3:
        rev_words.append(0)

    meta = PathMetaHdr(
        curr_inf=0,
        curr_hf=0,
        seg_len=tuple(rev_words),
        base_timestamp=0,
        millis_timestamp=0,
        counter=0,
    )
    return replace(
        packet,
        path=HummingbirdPath(meta=meta, infos=tuple(rev_infos), hops=tuple(rev_hops)),
    )
