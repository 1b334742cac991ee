"""Deterministic discrete-event network simulator.

A scenario wires hosts, per-AS border routers, priority-queued links,
and the control-plane ledger into one event loop.  Reserved flows go
through the full economic path at setup: the AS issues and lists
bandwidth assets, the flow's account buys and redeems them in one
atomic block, the AS control service delivers sealed credentials, and
the flow decrypts them into the hop plan its packets are built from.

Determinism rules:
  - one event heap ordered by (time, insertion sequence);
  - every random draw comes from a PRNG namespaced per entity
    (f"{seed}:{entity}"), so adding a flow never perturbs another
    flow's stream;
  - the report is rebuilt from integer counters, so equal (scenario,
    seed) pairs produce byte-identical JSON.

ASes have no internal congestion: a packet leaving a router is queued
only at the next inter-AS link.  Links serve the priority queue
strictly first and give best effort a finite buffer (tail drop).
Demoted reservation packets join the best-effort queue and may drop
there; nothing downgrades the header, so a later AS judges the same
packet independently.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from random import Random
from typing import Callable

from . import crypto
from .ledger import (
    ASControlService,
    AsIdentity,
    Call,
    Direction,
    Ledger,
    PkiRoot,
    Result,
    sealing_keypair,
    unseal_credentials,
)
from .policing import DEFAULT_BURST_NS, TokenBucketArray, size_array
from .router import ForwardDecision, Reason, RouterConfig, Verdict, process_packet
from .source import CounterState, HopPlan, PathPlan, SegmentPlan, build_packet
from .wire import HopField, InfoField, Packet, ReservationInfo, quantize_bw

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000
EPOCH_S = 1_700_000_000  # unix time at simulation instant zero
EPOCH_NS = EPOCH_S * NS_PER_S

ADVERSARY_KINDS = (
    "best_effort_flood",
    "tag_forgery",
    "overuse",
    "replay_on_reservation_set",
)


class ScenarioError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Event loop


class Simulator:
    def __init__(self):
        self.now = 0  # ns since scenario start
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0

    def schedule(self, at_ns: int, fn: Callable[[], None]) -> None:
        if at_ns < self.now:
            raise RuntimeError(f"event scheduled in the past: {at_ns} < {self.now}")
        heapq.heappush(self._heap, (at_ns, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            self.now, _, fn = heapq.heappop(self._heap)
            fn()


# ---------------------------------------------------------------------------
# Data plane entities


@dataclass
class FlowStats:
    offered_packets: int = 0
    offered_bytes: int = 0
    priority_packets: int = 0
    priority_bytes: int = 0
    best_effort_packets: int = 0
    best_effort_bytes: int = 0
    dropped_packets: int = 0
    dropped_bytes: int = 0
    latencies_ns: list[int] = field(default_factory=list)


@dataclass
class _Transit:
    """One packet in flight, with its end-to-end bookkeeping."""

    flow: "Flow"
    packet: Packet
    sent_ns: int
    wire_bytes: int
    hop: int = 0  # index into the flow path's AS list
    clean: bool = True  # PRIORITY verdict at every hop so far


@dataclass
class LinkStats:
    priority_bytes: int = 0
    best_effort_bytes: int = 0
    dropped_packets: int = 0
    dropped_bytes: int = 0


class Link:
    """Directed inter-AS link: strict priority over a finite BE buffer."""

    def __init__(self, sim: Simulator, dst: "BorderAS", dst_iface: int,
                 capacity_bps: int, delay_ns: int, be_buffer_bytes: int):
        self.sim = sim
        self.dst = dst
        self.dst_iface = dst_iface
        self.capacity_bps = capacity_bps
        self.delay_ns = delay_ns
        self.be_buffer_bytes = be_buffer_bytes
        self.stats = LinkStats()
        self._priority: list[_Transit] = []
        self._best_effort: list[_Transit] = []
        self._be_bytes = 0
        self._busy = False

    def enqueue(self, transit: _Transit, priority: bool) -> None:
        if priority:
            self._priority.append(transit)
        else:
            if self._be_bytes + transit.wire_bytes > self.be_buffer_bytes:
                self.stats.dropped_packets += 1
                self.stats.dropped_bytes += transit.wire_bytes
                transit.flow.stats.dropped_packets += 1
                transit.flow.stats.dropped_bytes += transit.wire_bytes
                return
            self._best_effort.append(transit)
            self._be_bytes += transit.wire_bytes
        if not self._busy:
            self._serve()

    def _serve(self) -> None:
        if self._priority:
            transit = self._priority.pop(0)
            self.stats.priority_bytes += transit.wire_bytes
        elif self._best_effort:
            transit = self._best_effort.pop(0)
            self._be_bytes -= transit.wire_bytes
            self.stats.best_effort_bytes += transit.wire_bytes
        else:
            self._busy = False
            return
        self._busy = True
        tx_ns = transit.wire_bytes * 8 * NS_PER_S // self.capacity_bps
        self.sim.schedule(self.sim.now + tx_ns, lambda: self._sent(transit))

    def _sent(self, transit: _Transit) -> None:
        self.sim.schedule(
            self.sim.now + self.delay_ns,
            lambda: self.dst.receive(transit, self.dst_iface),
        )
        self._serve()


class BorderAS:
    """One AS: a router per ingress interface plus shared keys and clock."""

    def __init__(self, as_id: int, sim: Simulator, rng: Random,
                 clock_offset_ns: int, burst_ns: int):
        self.as_id = as_id
        self.sim = sim
        self.clock_offset_ns = clock_offset_ns
        self.burst_ns = burst_ns
        self.sv = rng.randbytes(16)
        self.forwarding_key = rng.randbytes(16)
        self.control = ASControlService(as_id, self.sv, rng)
        self.routers: dict[int, RouterConfig] = {}
        self.links: dict[int, Link] = {}  # next-hop AS id -> link
        self.egress_iface: dict[int, int] = {}  # next-hop AS id -> iface
        self.ingress_iface: dict[int, int] = {}  # previous AS id -> iface
        self.network: "Network | None" = None
        self.replay: dict | None = None

    def clock(self) -> int:
        return EPOCH_NS + self.sim.now + self.clock_offset_ns

    def add_router(self, iface: int, policer_entries: int) -> None:
        self.routers[iface] = RouterConfig(
            sv=self.sv,
            forwarding_key=self.forwarding_key,
            policer=TokenBucketArray(policer_entries, self.burst_ns),
            clock=self.clock,
        )

    def receive(self, transit: _Transit, iface: int) -> None:
        decision, packet = process_packet(self.routers[iface], transit.packet)
        transit.packet = packet
        self.network.count_hop(transit.flow, self.as_id, decision)
        if decision.verdict is Verdict.DROP:
            transit.flow.stats.dropped_packets += 1
            transit.flow.stats.dropped_bytes += transit.wire_bytes
            return
        transit.clean = transit.clean and decision.verdict is Verdict.PRIORITY
        if self.replay is not None:
            self._maybe_replay(transit)
        transit.hop += 1
        path = transit.flow.path
        if transit.hop == len(path):
            self.network.delivered(transit)
            return
        link = self.links[path[transit.hop]]
        link.enqueue(transit, priority=decision.verdict is Verdict.PRIORITY)

    def _maybe_replay(self, transit: _Transit) -> None:
        """On-path adversary: re-emit copies of a forwarded packet."""
        cfg = self.replay
        if transit.flow.name != cfg["flow"]:
            return
        replayer: Flow = cfg["replayer"]
        path = transit.flow.path
        if transit.hop + 1 >= len(path):
            return  # nothing downstream to replay into
        link = self.links[path[transit.hop + 1]]
        for _ in range(cfg["multiplicity"]):
            clone = _Transit(
                flow=replayer,
                packet=transit.packet,  # identical header, same tags
                sent_ns=self.sim.now,
                wire_bytes=transit.wire_bytes,
                hop=transit.hop + 1,
            )
            replayer.stats.offered_packets += 1
            replayer.stats.offered_bytes += clone.wire_bytes
            # The adversary owns its egress scheduling and marks the
            # copies priority; downstream policers are the defense.
            link.enqueue(clone, priority=True)


# ---------------------------------------------------------------------------
# Flows


class Flow:
    def __init__(self, spec: dict, rng: Random):
        self.name = spec["name"]
        self.spec = spec
        self.rng = rng
        self.path: list[int] = list(spec["path"])
        self.account = spec.get("account", self.name)
        self.kind = spec.get("kind", "")
        self.stats = FlowStats()
        self.counter = CounterState()
        self.plan: PathPlan | None = None
        self.payload_len = 0
        self.wire_bytes = 0
        self.credentials: dict[int, tuple] = {}  # as_id -> (ResInfo, key)

    @property
    def sends(self) -> bool:
        return self.kind != "replay_on_reservation_set"

    @property
    def rate_bps(self) -> int:
        return round(self.spec["rate_mbps"] * 1_000_000)


# ---------------------------------------------------------------------------
# The network: scenario realization


_FLOW_CLASSES = ("reserved", "best_effort", "adversary")


def validate_scenario(scenario: dict) -> None:
    """Schema and topology checks; everything fails before the sim starts."""
    def need(mapping, key, where):
        if key not in mapping:
            raise ScenarioError(f"{where} is missing {key!r}")
        return mapping[key]

    need(scenario, "name", "scenario")
    duration = need(scenario, "duration_s", "scenario")
    if not isinstance(duration, (int, float)) or duration <= 0:
        raise ScenarioError(f"duration_s must be positive, got {duration!r}")
    topo = need(scenario, "topology", "scenario")
    as_ids = set()
    for entry in need(topo, "ases", "topology"):
        as_id = need(entry, "id", "AS entry")
        if as_id in as_ids:
            raise ScenarioError(f"duplicate AS id {as_id}")
        as_ids.add(as_id)
    links = set()
    for entry in need(topo, "links", "topology"):
        src, dst = need(entry, "from", "link"), need(entry, "to", "link")
        for end in (src, dst):
            if end not in as_ids:
                raise ScenarioError(f"link endpoint {end} is not a declared AS")
        if (src, dst) in links:
            raise ScenarioError(f"duplicate link {src}->{dst}")
        if need(entry, "capacity_mbps", "link") <= 0:
            raise ScenarioError("link capacity must be positive")
        links.add((src, dst))

    names = set()
    for spec in scenario.get("flows", ()):
        name = need(spec, "name", "flow")
        if name in names:
            raise ScenarioError(f"duplicate flow name {name!r}")
        names.add(name)
        cls = need(spec, "class", f"flow {name}")
        if cls not in _FLOW_CLASSES:
            raise ScenarioError(f"flow {name}: unknown class {cls!r}")
        kind = spec.get("kind", "")
        if cls == "adversary" and kind not in ADVERSARY_KINDS:
            raise ScenarioError(f"flow {name}: unknown adversary kind {kind!r}")
        path = need(spec, "path", f"flow {name}")
        if len(path) < 1:
            raise ScenarioError(f"flow {name}: empty path")
        for hop in path:
            if hop not in as_ids:
                raise ScenarioError(f"flow {name}: path AS {hop} not declared")
        for a, b in zip(path, path[1:]):
            if (a, b) not in links:
                raise ScenarioError(f"flow {name}: no link {a}->{b}")
        if kind == "replay_on_reservation_set":
            at_as = need(spec, "at_as", f"flow {name}")
            if at_as not in path:
                raise ScenarioError(f"flow {name}: at_as {at_as} not on path")
            victim = need(spec, "replays_flow", f"flow {name}")
            if victim not in names:
                raise ScenarioError(
                    f"flow {name}: replays_flow {victim!r} must be declared earlier"
                )
        else:
            need(spec, "rate_mbps", f"flow {name}")
            need(spec, "packet_bytes", f"flow {name}")
        reserves = cls == "reserved" or kind in ("overuse",)
        if reserves and "reserve_mbps" not in spec:
            raise ScenarioError(f"flow {name}: reserve_mbps required")
        for shared_as in spec.get("share", {}):
            if int(shared_as) not in path:
                raise ScenarioError(f"flow {name}: shared AS {shared_as} not on path")
            if spec["share"][shared_as] not in names - {name}:
                raise ScenarioError(
                    f"flow {name}: share source {spec['share'][shared_as]!r} "
                    f"must be an earlier flow"
                )
    needs_market = any(
        s["class"] == "reserved" or s.get("kind") == "overuse"
        for s in scenario.get("flows", ())
    ) or scenario.get("buyouts")
    if needs_market and "market" not in scenario:
        raise ScenarioError("scenario needs a market block for reservations")
    market = scenario.get("market", {})
    if market:
        window = market.get("window_s", 600)
        gran = market.get("granularity_s", 60)
        lead = market.get("lead_s", 0)
        if window % gran:
            raise ScenarioError(f"market window {window}s not a multiple of {gran}s")
        if lead % gran or lead < 0:
            raise ScenarioError(f"market lead {lead}s must be a multiple of {gran}s")
        if lead + duration > window:
            raise ScenarioError(
                f"market window {window}s does not cover lead {lead}s plus "
                f"duration {duration}s"
            )
    for expect in scenario.get("expect", ()):
        for key in ("metric", "op", "value"):
            if key not in expect:
                raise ScenarioError(f"expect entry missing {key!r}: {expect}")
        if expect["op"] not in ("==", "!=", ">=", "<=", ">", "<"):
            raise ScenarioError(f"unknown expect op {expect['op']!r}")


class Network:
    def __init__(self, scenario: dict, seed: int):
        validate_scenario(scenario)
        self.scenario = scenario
        self.seed = seed
        self.sim = Simulator()
        self.market = dict(scenario.get("market", {}))
        self.market.setdefault("granularity_s", 60)
        self.market.setdefault("window_s", 600)
        self.market.setdefault("lead_s", 0)  # issue this far before time zero
        self.market.setdefault("min_bandwidth", 1_000_000)
        self.market.setdefault("unit_price", 1)
        self.host_capacity_bps = round(
            scenario.get("host_capacity_mbps", 10_000) * 1_000_000
        )
        burst_ns = round(scenario.get("burst_ms", 50) * NS_PER_MS)

        self.ases: dict[int, BorderAS] = {}
        for entry in scenario["topology"]["ases"]:
            as_id = entry["id"]
            self.ases[as_id] = BorderAS(
                as_id,
                self.sim,
                self._rng(f"as{as_id}"),
                clock_offset_ns=round(entry.get("clock_offset_ms", 0) * NS_PER_MS),
                burst_ns=burst_ns,
            )
            self.ases[as_id].network = self

        # Interface numbering: 0 is the host side; link endpoints count up
        # from 1 in scenario order, one id per directed link end.
        iface_counter = {as_id: 0 for as_id in self.ases}
        self.iface_capacity: dict[tuple[int, int], int] = {
            (as_id, 0): self.host_capacity_bps for as_id in self.ases
        }
        links = []
        for entry in scenario["topology"]["links"]:
            src, dst = entry["from"], entry["to"]
            capacity = round(entry["capacity_mbps"] * 1_000_000)
            iface_counter[src] += 1
            iface_counter[dst] += 1
            src_iface, dst_iface = iface_counter[src], iface_counter[dst]
            self.ases[src].egress_iface[dst] = src_iface
            self.ases[dst].ingress_iface[src] = dst_iface
            self.iface_capacity[(src, src_iface)] = capacity
            self.iface_capacity[(dst, dst_iface)] = capacity
            buffer_bytes = round(
                entry.get("be_buffer_ms", 50) * NS_PER_MS * capacity / (8 * NS_PER_S)
            )
            link = Link(
                self.sim,
                self.ases[dst],
                dst_iface,
                capacity,
                round(entry.get("delay_ms", 1) * NS_PER_MS),
                buffer_bytes,
            )
            self.ases[src].links[dst] = link
            links.append(((src, dst), link))
        self.links = dict(links)

        entries_for = lambda as_id, iface: size_array(
            self.iface_capacity[(as_id, iface)], self.market["min_bandwidth"]
        )
        for as_id, border in self.ases.items():
            for iface in range(iface_counter[as_id] + 1):
                border.add_router(iface, entries_for(as_id, iface))

        self.flows: dict[str, Flow] = {}
        for spec in scenario.get("flows", ()):
            flow = Flow(spec, self._rng(f"flow:{spec['name']}"))
            self.flows[flow.name] = flow

        self.hop_counts: dict[str, dict[int, dict[str, int]]] = {
            name: {} for name in self.flows
        }
        self._setup_ledger()
        self._setup_plans()

    def _rng(self, name: str) -> Random:
        return Random(f"{self.seed}:{name}")

    # -- control plane -------------------------------------------------------

    def _setup_ledger(self) -> None:
        rng = self._rng("ledger")
        root = PkiRoot(rng)
        funding = self.scenario.get("funding", 10**18)
        genesis = {}
        for as_id in self.ases:
            genesis[f"as{as_id}-ops"] = 0
        accounts = {f.account for f in self.flows.values()}
        accounts.update(b["account"] for b in self.scenario.get("buyouts", ()))
        for account in sorted(accounts):
            genesis[account] = funding
        self.genesis = dict(genesis)
        self.ledger = Ledger(root.public_key, genesis)

        window = self.market["window_s"]
        start = EPOCH_S - self.market["lead_s"]
        end = start + window
        self.window = (start, end)
        for as_id in sorted(self.ases):
            account = f"as{as_id}-ops"
            ident = AsIdentity(as_id, self._rng(f"as{as_id}:ident"))
            cert = root.issue_cert(as_id, ident.public_key)
            token = self.ledger.register_as(account, cert, ident.proof_of_key(account))
            self.ledger.register_seller(account)
            ifaces = sorted(
                iface for (a, iface) in self.iface_capacity if a == as_id
            )
            for iface in ifaces:
                for direction in (Direction.INGRESS, Direction.EGRESS):
                    asset = self.ledger.issue(
                        account,
                        token,
                        bandwidth=self.iface_capacity[(as_id, iface)],
                        start_time=start,
                        expiration_time=end,
                        interface=iface,
                        direction=direction,
                        time_granularity=self.market["granularity_s"],
                        min_bandwidth=self.market["min_bandwidth"],
                    )
                    self.ledger.create_listing(
                        account, asset, self.market["unit_price"]
                    )

        for entry in self.scenario.get("buyouts", ()):
            self._buy_out_as(entry["account"], entry["as"])

        for flow in self.flows.values():
            if self._flow_reserves(flow):
                self._reserve_for_flow(flow)

    def _flow_reserves(self, flow: Flow) -> bool:
        return flow.spec["class"] == "reserved" or flow.kind == "overuse"

    def _find_listing(self, as_id: int, iface: int, direction: Direction,
                      bandwidth: int):
        start, end = self.window
        candidates = []
        for listing in self.ledger.open_listings():
            asset = self.ledger.asset(listing.asset_id)
            if (
                asset.as_id == as_id
                and asset.interface == iface
                and asset.direction is direction
                and asset.start_time <= start
                and asset.expiration_time >= end
                and asset.bandwidth >= bandwidth
            ):
                candidates.append(listing)
        if not candidates:
            raise ScenarioError(
                f"no listing covers AS {as_id} iface {iface} {direction.value} "
                f"{bandwidth} bit/s over {self.window}"
            )
        return min(candidates, key=lambda l: l.listing_id)

    def _hop_interfaces(self, path: list[int], index: int) -> tuple[int, int]:
        as_id = path[index]
        ingress = 0 if index == 0 else self.ases[as_id].ingress_iface[path[index - 1]]
        egress = (
            0
            if index == len(path) - 1
            else self.ases[as_id].egress_iface[path[index + 1]]
        )
        return ingress, egress

    def _reserve_for_flow(self, flow: Flow) -> None:
        """Buy, redeem, and decrypt credentials for every hop of the path."""
        share = {int(k): v for k, v in flow.spec.get("share", {}).items()}
        bandwidth = round(flow.spec["reserve_mbps"] * 1_000_000)
        start, end = self.window
        priv, pub = sealing_keypair(flow.rng)

        calls = []
        own_hops = []
        for index, as_id in enumerate(flow.path):
            if as_id in share:
                continue
            ingress, egress = self._hop_interfaces(flow.path, index)
            l_in = self._find_listing(as_id, ingress, Direction.INGRESS, bandwidth)
            l_eg = self._find_listing(as_id, egress, Direction.EGRESS, bandwidth)
            want = dict(start_time=start, expiration_time=end, bandwidth=bandwidth)
            base = len(calls)
            calls.append(Call("buy", (flow.account, l_in.listing_id), dict(want)))
            calls.append(Call("buy", (flow.account, l_eg.listing_id), dict(want)))
            calls.append(
                Call("redeem", (flow.account, Result(base), Result(base + 1), pub))
            )
            own_hops.append((as_id, base + 2))
        results = self.ledger.execute_atomic(calls)

        for as_id, result_index in own_hops:
            request = results[result_index]
            blob = self.ledger.deliver_reservation(self.ases[as_id].control, request)
            flow.credentials[as_id] = unseal_credentials(priv, blob)
        for as_id, other in share.items():
            donor = self.flows[other]
            if as_id not in donor.credentials:
                raise ScenarioError(
                    f"flow {flow.name}: {other!r} has no credential at AS {as_id}"
                )
            flow.credentials[as_id] = donor.credentials[as_id]

    def _buy_out_as(self, account: str, as_id: int) -> None:
        """Purchase every open listing of one AS in full."""
        for listing in sorted(
            self.ledger.open_listings(), key=lambda l: l.listing_id
        ):
            asset = self.ledger.asset(listing.asset_id)
            if asset.as_id != as_id:
                continue
            self.ledger.buy(
                account,
                listing,
                start_time=asset.start_time,
                expiration_time=asset.expiration_time,
                bandwidth=asset.bandwidth,
            )

    # -- data plane ------------------------------------------------------------

    def _setup_plans(self) -> None:
        for flow in self.flows.values():
            if not flow.sends:
                continue
            flow.plan = self._build_plan(flow)
            words = sum(
                5 if hp.reservation else 3 for hp in flow.plan.segments[0].hops
            )
            overhead = 12 + 12 + 8 + 4 * words  # prefix, meta, info, hops
            flow.payload_len = flow.spec["packet_bytes"] - overhead
            if flow.payload_len < 0:
                raise ScenarioError(
                    f"flow {flow.name}: packet_bytes {flow.spec['packet_bytes']} "
                    f"smaller than the {overhead} byte header"
                )
            flow.wire_bytes = flow.spec["packet_bytes"]

    def _build_plan(self, flow: Flow) -> PathPlan:
        seg_id = flow.rng.randrange(1 << 16)
        info_ts = EPOCH_S - 3600
        info = InfoField(peering=False, cons_dir=True, seg_id=seg_id, timestamp=info_ts)
        hops = []
        current = info
        for index, as_id in enumerate(flow.path):
            ingress, egress = self._hop_interfaces(flow.path, index)
            probe = HopField(
                ingress_alert=False,
                egress_alert=False,
                exp_time=255,
                cons_ingress=ingress,
                cons_egress=egress,
                mac=bytes(6),
            )
            mac = crypto.hop_field_mac(
                self.ases[as_id].forwarding_key, current, probe
            )
            current = replace(
                current, seg_id=crypto.update_seg_id(current.seg_id, mac)
            )
            reservation = None
            if as_id in flow.credentials:
                res, key = flow.credentials[as_id]
                if (res.ingress, res.egress) != (ingress, egress):
                    raise ScenarioError(
                        f"flow {flow.name}: credential at AS {as_id} covers "
                        f"({res.ingress}, {res.egress}), path needs "
                        f"({ingress}, {egress})"
                    )
                reservation = (res, key)
            elif flow.kind == "tag_forgery":
                # Plausible-looking reservation nobody ever bought; the
                # key is junk, so the tags are effectively random.
                res = ReservationInfo(
                    ingress=ingress,
                    egress=egress,
                    res_id=0,
                    bw_code=quantize_bw(flow.rate_bps),
                    res_start=self.window[0],
                    duration=self.market["window_s"],
                )
                reservation = (res, flow.rng.randbytes(16))
            hops.append(
                HopPlan(
                    cons_ingress=ingress,
                    cons_egress=egress,
                    hop_mac=mac,
                    exp_time=255,
                    reservation=reservation,
                )
            )
        return PathPlan(
            dst_isd=1,
            dst_as=flow.rng.randrange(1 << 32),
            segments=(
                SegmentPlan(seg_id=seg_id, timestamp=info_ts, hops=tuple(hops)),
            ),
        )

    def count_hop(self, flow: Flow, as_id: int, decision: ForwardDecision) -> None:
        per_as = self.hop_counts[flow.name].setdefault(as_id, {})
        key = f"{decision.verdict.value}:{decision.reason.value}"
        per_as[key] = per_as.get(key, 0) + 1

    def delivered(self, transit: _Transit) -> None:
        stats = transit.flow.stats
        if transit.clean:
            stats.priority_packets += 1
            stats.priority_bytes += transit.wire_bytes
        else:
            stats.best_effort_packets += 1
            stats.best_effort_bytes += transit.wire_bytes
        stats.latencies_ns.append(self.sim.now - transit.sent_ns)

    def _emit(self, flow: Flow) -> None:
        packet = build_packet(
            flow.plan,
            flow.payload_len,
            lambda: EPOCH_NS + self.sim.now,
            flow.counter,
        )
        if flow.kind == "tag_forgery":
            hops = tuple(
                replace(h, mac=flow.rng.randbytes(6)) if h.flyover else h
                for h in packet.path.hops
            )
            packet = replace(packet, path=replace(packet.path, hops=hops))
        transit = _Transit(
            flow=flow,
            packet=packet,
            sent_ns=self.sim.now,
            wire_bytes=flow.wire_bytes,
        )
        flow.stats.offered_packets += 1
        flow.stats.offered_bytes += transit.wire_bytes
        self.ases[flow.path[0]].receive(transit, 0)

    def _schedule_flow(self, flow: Flow) -> None:
        start_ns = round(flow.spec.get("start_s", 0.0) * NS_PER_S)
        stop_ns = round(
            flow.spec.get("stop_s", self.scenario["duration_s"]) * NS_PER_S
        )
        interval_ns = flow.wire_bytes * 8 * NS_PER_S // flow.rate_bps

        def tick(at_ns: int) -> None:
            if at_ns >= stop_ns:
                return
            self._emit(flow)
            self.sim.schedule(at_ns + interval_ns, lambda: tick(at_ns + interval_ns))

        self.sim.schedule(start_ns, lambda: tick(start_ns))

    def run(self) -> dict:
        for flow in self.flows.values():
            if flow.kind == "replay_on_reservation_set":
                self.ases[flow.spec["at_as"]].replay = {
                    "flow": flow.spec["replays_flow"],
                    "multiplicity": flow.spec.get("multiplicity", 1),
                    "replayer": flow,
                }
                continue
            self._schedule_flow(flow)
        self.sim.run()
        return self._report()

    # -- metrics -------------------------------------------------------------------

    @staticmethod
    def _percentile(sorted_values: list[int], q: int) -> int:
        rank = -(-q * len(sorted_values) // 100)  # nearest-rank, ceil
        return sorted_values[max(rank - 1, 0)]

    def _report(self) -> dict:
        flows = {}
        for name, flow in sorted(self.flows.items()):
            s = flow.stats
            delivered_packets = s.priority_packets + s.best_effort_packets
            delivered_bytes = s.priority_bytes + s.best_effort_bytes
            lat = sorted(s.latencies_ns)
            flows[name] = {
                "class": flow.spec["class"],
                "kind": flow.kind,
                "offered_packets": s.offered_packets,
                "offered_bytes": s.offered_bytes,
                "delivered_packets": delivered_packets,
                "delivered_bytes": delivered_bytes,
                "priority_packets": s.priority_packets,
                "priority_bytes": s.priority_bytes,
                "best_effort_packets": s.best_effort_packets,
                "best_effort_bytes": s.best_effort_bytes,
                "dropped_packets": s.dropped_packets,
                "dropped_bytes": s.dropped_bytes,
                "priority_fraction": (
                    s.priority_bytes / s.offered_bytes if s.offered_bytes else 0.0
                ),
                "delivered_fraction": (
                    delivered_bytes / s.offered_bytes if s.offered_bytes else 0.0
                ),
                "latency_ns": (
                    {
                        "p50": self._percentile(lat, 50),
                        "p90": self._percentile(lat, 90),
                        "p99": self._percentile(lat, 99),
                        "max": lat[-1],
                    }
                    if lat
                    else None
                ),
            }
        hops = {
            flow: {str(as_id): dict(sorted(counts.items()))
                   for as_id, counts in sorted(per_flow.items())}
            for flow, per_flow in sorted(self.hop_counts.items())
        }
        links = {
            f"{src}->{dst}": {
                "priority_bytes": link.stats.priority_bytes,
                "best_effort_bytes": link.stats.best_effort_bytes,
                "dropped_packets": link.stats.dropped_packets,
                "dropped_bytes": link.stats.dropped_bytes,
            }
            for (src, dst), link in sorted(self.links.items())
        }
        open_by_as = {str(as_id): 0 for as_id in sorted(self.ases)}
        for listing in self.ledger.open_listings():
            open_by_as[str(self.ledger.asset(listing.asset_id).as_id)] += 1
        balances = {a: self.ledger.balance(a) for a in sorted(self.genesis)}
        ops_accounts = {f"as{as_id}-ops" for as_id in self.ases}
        spend = {
            a: self.genesis[a] - balances[a]
            for a in sorted(self.genesis)
            if a not in ops_accounts
        }
        return {
            "scenario": self.scenario["name"],
            "seed": self.seed,
            "duration_s": self.scenario["duration_s"],
            "flows": flows,
            "hops": hops,
            "links": links,
            "ledger": {
                "balances": balances,
                "spend": spend,
                "open_listings_by_as": dict(sorted(open_by_as.items())),
                "state_hash": self.ledger.state_hash(),
            },
        }


# ---------------------------------------------------------------------------
# Entry points


def bundled_scenarios() -> dict[str, str]:
    """Scenario name -> JSON text for everything shipped in the package."""
    out = {}
    for entry in resources.files(__package__).joinpath("scenarios").iterdir():
        if entry.name.endswith(".json"):
            out[entry.name[: -len(".json")]] = entry.read_text()
    return dict(sorted(out.items()))


def load_scenario(ref: str) -> dict:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario {ref!r}: {exc}") from exc
    else:
        bundled = bundled_scenarios()
        if ref not in bundled:
            raise ScenarioError(
                f"unknown scenario {ref!r}; bundled: {', '.join(bundled)}"
            )
        text = bundled[ref]
    try:
        scenario = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {ref!r} is not valid JSON: {exc}") from exc
    if not isinstance(scenario, dict):
        raise ScenarioError(f"scenario {ref!r} must be a JSON object")
    validate_scenario(scenario)
    return scenario


def run_scenario(scenario: dict, seed: int) -> dict:
    return Network(scenario, seed).run()


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, separators=(",", ":")) + "\n"


def _lookup(report: dict, dotted: str):
    node = report
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            raise KeyError(dotted)
        node = node[part]
    return node


_OPS = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    ">=": lambda a, b: a >= b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    "<": lambda a, b: a < b,
}


def check_expectations(report: dict, scenario: dict) -> list[str]:
    """Evaluate the scenario's embedded assertions; returns failures."""
    failures = []
    for expect in scenario.get("expect", ()):
        metric, op, value = expect["metric"], expect["op"], expect["value"]
        try:
            actual = _lookup(report, metric)
        except KeyError:
            failures.append(f"{metric}: no such metric")
            continue
        if not _OPS[op](actual, value):
            failures.append(f"{metric}: {actual!r} {op} {value!r} is false")
    return failures
