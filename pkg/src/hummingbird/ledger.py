"""In-memory control-plane ledger: assets, marketplace, atomic blocks.

A single serial state machine stands in for the blockchain.  Bandwidth
assets are issued by registered ASes, traded through escrowed listings,
and redeemed in ingress/egress pairs; redemption destroys the assets
and leaves a request that the issuing AS answers with sealed data-plane
credentials (ReservationInfo plus the reservation key).

Everything that touches ledger state goes through one of the public
operations.  Each mutating call either completes or raises with no
state change; execute_atomic extends that guarantee to a whole list of
calls by running them against a staged copy and swapping it in only on
success.  Credential delivery is deliberately not available inside
atomic blocks: it has side effects outside the ledger (the AS's ResID
allocator) that cannot be rolled back.

Currency is an abstract integer.  An optional flat per-call fee moves
tokens to a treasury account, so the total supply is conserved either
way.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from random import Random

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import crypto
from .residalloc import ResIdAllocator
from .wire import MAX_BW_VALUE, ReservationInfo, parse_resinfo_block, quantize_bw, resinfo_block

MARKET_ACCOUNT = "__market__"
TREASURY_ACCOUNT = "__treasury__"
_REG_CONTEXT = b"hummingbird-as-registration:"
_CERT_CONTEXT = b"hummingbird-as-cert:"
_SEAL_CONTEXT = b"hummingbird-credential-seal"


class LedgerError(ValueError):
    pass


class Direction(Enum):
    INGRESS = "ingress"
    EGRESS = "egress"


# ---------------------------------------------------------------------------
# Domain objects


@dataclass(frozen=True)
class BandwidthAsset:
    asset_id: int
    as_id: int
    bandwidth: int  # bits per second
    start_time: int  # unix seconds
    expiration_time: int
    interface: int  # 16-bit interface id
    direction: Direction
    time_granularity: int  # seconds
    min_bandwidth: int  # bits per second
    owner: str

    def validate(self) -> None:
        if self.time_granularity <= 0 or self.min_bandwidth <= 0:
            raise LedgerError("granularity and minimum bandwidth must be positive")
        if not 0 <= self.start_time < self.expiration_time:
            raise LedgerError(
                f"start {self.start_time} must precede expiration {self.expiration_time}"
            )
        if (self.expiration_time - self.start_time) % self.time_granularity:
            raise LedgerError(
                f"duration {self.expiration_time - self.start_time} not a multiple "
                f"of granularity {self.time_granularity}"
            )
        if self.bandwidth < self.min_bandwidth:
            raise LedgerError(
                f"bandwidth {self.bandwidth} below minimum {self.min_bandwidth}"
            )
        if not 0 <= self.interface < (1 << 16):
            raise LedgerError(f"interface out of range: {self.interface}")

    @property
    def duration(self) -> int:
        return self.expiration_time - self.start_time

    @property
    def area(self) -> int:
        """Bandwidth-time product, the conserved quantity under split/fuse."""
        return self.bandwidth * self.duration


@dataclass(frozen=True)
class AuthToken:
    token_id: int
    as_id: int
    account: str


@dataclass(frozen=True)
class Listing:
    listing_id: int
    asset_id: int
    unit_price: int  # currency per (bit/s x second)
    seller: str


@dataclass(frozen=True)
class RedeemRequest:
    """Snapshot of a destroyed asset pair, awaiting credential delivery."""

    request_id: int
    as_id: int
    owner: str
    ingress_interface: int
    egress_interface: int
    bandwidth: int
    start_time: int
    expiration_time: int
    ephemeral_pubkey: bytes
    delivered: bool = False
    credentials: bytes = b""


@dataclass
class Call:
    """One operation inside a transaction block."""

    op: str
    args: tuple = ()
    kwargs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Result:
    """Reference to an earlier call's result within the same block."""

    index: int
    item: int | None = None


# ---------------------------------------------------------------------------
# PKI stub: one self-signed root certifying AS keys


@dataclass(frozen=True)
class AsCert:
    as_id: int
    public_key: bytes  # raw Ed25519
    signature: bytes  # by the root, over (_CERT_CONTEXT | as_id | public_key)


def _cert_message(as_id: int, public_key: bytes) -> bytes:
    return _CERT_CONTEXT + as_id.to_bytes(8, "big") + public_key


def _proof_message(as_id: int, account: str) -> bytes:
    return _REG_CONTEXT + as_id.to_bytes(8, "big") + account.encode()


class PkiRoot:
    """Certificate authority for the simulation; keys come from the rng."""

    def __init__(self, rng: Random):
        self._key = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        self.public_key = self._key.public_key().public_bytes_raw()

    def issue_cert(self, as_id: int, as_public_key: bytes) -> AsCert:
        return AsCert(
            as_id=as_id,
            public_key=as_public_key,
            signature=self._key.sign(_cert_message(as_id, as_public_key)),
        )


class AsIdentity:
    """An AS's signing key plus helpers to enroll with a ledger."""

    def __init__(self, as_id: int, rng: Random):
        self.as_id = as_id
        self._key = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        self.public_key = self._key.public_key().public_bytes_raw()

    def proof_of_key(self, account: str) -> bytes:
        return self._key.sign(_proof_message(self.as_id, account))


# ---------------------------------------------------------------------------
# Credential sealing (authenticated key encapsulation stand-in)


def sealing_keypair(rng: Random) -> tuple[X25519PrivateKey, bytes]:
    priv = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    return priv, priv.public_key().public_bytes_raw()


def _seal_key(shared: bytes) -> bytes:
    return hashlib.sha256(_SEAL_CONTEXT + shared).digest()[:16]


def seal_credentials(
    rng: Random, recipient_pubkey: bytes, res: ReservationInfo, key: crypto.ReservationKey
) -> bytes:
    """Encrypt (ReservationInfo, A_K) to the requester's ephemeral key."""
    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient_pubkey))
    # Fresh encapsulation key per blob, so a fixed nonce is safe.
    ct = AESGCM(_seal_key(shared)).encrypt(bytes(12), resinfo_block(res) + key, None)
    return eph.public_key().public_bytes_raw() + ct


def unseal_credentials(
    priv: X25519PrivateKey, blob: bytes
) -> tuple[ReservationInfo, crypto.ReservationKey]:
    if len(blob) < 32:
        raise LedgerError("credential blob too short")
    shared = priv.exchange(X25519PublicKey.from_public_bytes(blob[:32]))
    plain = AESGCM(_seal_key(shared)).decrypt(bytes(12), blob[32:], None)
    if len(plain) != 32:
        raise LedgerError(f"unexpected credential payload length {len(plain)}")
    return parse_resinfo_block(plain[:16]), plain[16:]


class ASControlService:
    """The part of an AS that answers redemption requests.

    Owns the secret value the AS's border routers police with and the
    ResID allocator for its ingress interfaces.  Lives outside the
    ledger state on purpose: its allocations are not transactional.
    """

    def __init__(self, as_id: int, sv: bytes, rng: Random):
        self.as_id = as_id
        self.sv = sv
        self._rng = rng
        self.allocator = ResIdAllocator()

    def build_credentials(self, request: RedeemRequest) -> bytes:
        if request.as_id != self.as_id:
            raise LedgerError(
                f"request {request.request_id} addressed to AS {request.as_id}, "
                f"not {self.as_id}"
            )
        res_id = self.allocator.assign(
            request.ingress_interface,
            request.start_time,
            request.expiration_time,
            handle=f"req-{request.request_id}",
        )
        res = ReservationInfo(
            ingress=request.ingress_interface,
            egress=request.egress_interface,
            res_id=res_id,
            bw_code=quantize_bw(request.bandwidth),
            res_start=request.start_time,
            duration=request.expiration_time - request.start_time,
        )
        a_key = crypto.derive_key(self.sv, res)
        return seal_credentials(self._rng, request.ephemeral_pubkey, res, a_key)


# ---------------------------------------------------------------------------
# The ledger


@dataclass
class _State:
    balances: dict[str, int] = field(default_factory=dict)
    assets: dict[int, BandwidthAsset] = field(default_factory=dict)
    listings: dict[int, Listing] = field(default_factory=dict)
    requests: dict[int, RedeemRequest] = field(default_factory=dict)
    tokens: dict[int, AuthToken] = field(default_factory=dict)
    sellers: set[str] = field(default_factory=set)
    next_id: int = 1


class Ledger:
    """Serial, deterministic, replayable control-plane state machine."""

    #: operations allowed inside execute_atomic
    ATOMIC_OPS = (
        "register_as",
        "issue",
        "split_time",
        "split_bandwidth",
        "fuse_time",
        "fuse_bandwidth",
        "register_seller",
        "create_listing",
        "buy",
        "redeem",
    )

    def __init__(
        self,
        root_public_key: bytes,
        genesis: dict[str, int] | None = None,
        fee: int = 0,
    ):
        if fee < 0:
            raise LedgerError("fee must be non-negative")
        self._root = Ed25519PublicKey.from_public_bytes(root_public_key)
        self._fee = fee
        self._state = _State()
        self._log: list[dict] = []
        self._in_block = False
        for account, balance in (genesis or {}).items():
            self.open_account(account, balance)

    # -- setup and readers --------------------------------------------------

    def open_account(self, account: str, balance: int = 0) -> None:
        """Genesis helper; mints currency, so it is not an atomic op."""
        if balance < 0:
            raise LedgerError("balance must be non-negative")
        if account in self._state.balances:
            raise LedgerError(f"account {account!r} already exists")
        self._state.balances[account] = balance

    def balance(self, account: str) -> int:
        return self._state.balances.get(account, 0)

    def asset(self, asset_id: int) -> BandwidthAsset:
        try:
            return self._state.assets[asset_id]
        except KeyError:
            raise LedgerError(f"no such asset: {asset_id}") from None

    def listing(self, listing_id: int) -> Listing:
        try:
            return self._state.listings[listing_id]
        except KeyError:
            raise LedgerError(f"no such listing: {listing_id}") from None

    def request(self, request_id: int) -> RedeemRequest:
        try:
            return self._state.requests[request_id]
        except KeyError:
            raise LedgerError(f"no such redeem request: {request_id}") from None

    def assets_owned_by(self, account: str) -> tuple[BandwidthAsset, ...]:
        return tuple(
            a for a in self._state.assets.values() if a.owner == account
        )

    def open_listings(self) -> tuple[Listing, ...]:
        return tuple(self._state.listings.values())

    def total_supply(self) -> int:
        return sum(self._state.balances.values())

    def reserved_area(self, as_id: int, interface: int, direction: Direction) -> int:
        """Conserved bandwidth-time total across split/fuse, per resource."""
        return sum(
            a.area
            for a in self._state.assets.values()
            if (a.as_id, a.interface, a.direction) == (as_id, interface, direction)
        )

    # -- registration and issuance ------------------------------------------

    def register_as(self, account: str, cert: AsCert, proof_of_key: bytes) -> AuthToken:
        self._require_account(account)
        try:
            self._root.verify(cert.signature, _cert_message(cert.as_id, cert.public_key))
        except InvalidSignature:
            raise LedgerError(f"certificate for AS {cert.as_id} does not verify") from None
        try:
            Ed25519PublicKey.from_public_bytes(cert.public_key).verify(
                proof_of_key, _proof_message(cert.as_id, account)
            )
        except InvalidSignature:
            raise LedgerError(f"proof of key for AS {cert.as_id} does not verify") from None
        self._fee_precheck(account)
        token = AuthToken(token_id=self._fresh_id(), as_id=cert.as_id, account=account)
        self._state.tokens[token.token_id] = token
        self._settle_fee(account)
        self._record("register_as", (account, cert.as_id), f"token:{token.token_id}")
        return token

    def issue(
        self,
        account: str,
        token,
        *,
        bandwidth: int,
        start_time: int,
        expiration_time: int,
        interface: int,
        direction: Direction,
        time_granularity: int,
        min_bandwidth: int,
        as_id: int | None = None,
    ) -> BandwidthAsset:
        token = self._resolve_token(account, token)
        if as_id is not None and as_id != token.as_id:
            raise LedgerError(
                f"token for AS {token.as_id} cannot issue assets for AS {as_id}"
            )
        asset = BandwidthAsset(
            asset_id=0,  # placeholder until validated
            as_id=token.as_id,
            bandwidth=bandwidth,
            start_time=start_time,
            expiration_time=expiration_time,
            interface=interface,
            direction=Direction(direction),
            time_granularity=time_granularity,
            min_bandwidth=min_bandwidth,
            owner=account,
        )
        asset.validate()
        self._fee_precheck(account)
        asset = replace(asset, asset_id=self._fresh_id())
        self._state.assets[asset.asset_id] = asset
        self._settle_fee(account)
        self._record("issue", (account, token.as_id, bandwidth), f"asset:{asset.asset_id}")
        return asset

    # -- split and fuse ------------------------------------------------------

    def split_time(self, account: str, asset, cut: int) -> tuple[BandwidthAsset, BandwidthAsset]:
        asset = self._owned_asset(account, asset)
        self._fee_precheck(account)
        pair = self._split_time(asset, cut)
        self._settle_fee(account)
        self._record("split_time", (account, asset.asset_id, cut),
                     f"assets:{pair[0].asset_id},{pair[1].asset_id}")
        return pair

    def split_bandwidth(
        self, account: str, asset, part: int
    ) -> tuple[BandwidthAsset, BandwidthAsset]:
        asset = self._owned_asset(account, asset)
        self._fee_precheck(account)
        pair = self._split_bandwidth(asset, part)
        self._settle_fee(account)
        self._record("split_bandwidth", (account, asset.asset_id, part),
                     f"assets:{pair[0].asset_id},{pair[1].asset_id}")
        return pair

    def fuse_time(self, account: str, a, b) -> BandwidthAsset:
        a = self._owned_asset(account, a)
        b = self._owned_asset(account, b)
        self._fuse_compatible(a, b)
        if a.bandwidth != b.bandwidth:
            raise LedgerError(
                f"bandwidth differs: {a.bandwidth} vs {b.bandwidth}"
            )
        if a.expiration_time != b.start_time:
            raise LedgerError(
                f"assets not adjacent in time: {a.expiration_time} vs {b.start_time}"
            )
        self._fee_precheck(account)
        fused = replace(a, asset_id=self._fresh_id(), expiration_time=b.expiration_time)
        fused.validate()
        del self._state.assets[a.asset_id]
        del self._state.assets[b.asset_id]
        self._state.assets[fused.asset_id] = fused
        self._settle_fee(account)
        self._record("fuse_time", (account, a.asset_id, b.asset_id), f"asset:{fused.asset_id}")
        return fused

    def fuse_bandwidth(self, account: str, a, b) -> BandwidthAsset:
        a = self._owned_asset(account, a)
        b = self._owned_asset(account, b)
        self._fuse_compatible(a, b)
        if (a.start_time, a.expiration_time) != (b.start_time, b.expiration_time):
            raise LedgerError(
                f"time spans differ: [{a.start_time}, {a.expiration_time}) vs "
                f"[{b.start_time}, {b.expiration_time})"
            )
        self._fee_precheck(account)
        fused = replace(a, asset_id=self._fresh_id(), bandwidth=a.bandwidth + b.bandwidth)
        fused.validate()
        del self._state.assets[a.asset_id]
        del self._state.assets[b.asset_id]
        self._state.assets[fused.asset_id] = fused
        self._settle_fee(account)
        self._record("fuse_bandwidth", (account, a.asset_id, b.asset_id),
                     f"asset:{fused.asset_id}")
        return fused

    # -- marketplace ----------------------------------------------------------

    def register_seller(self, account: str) -> None:
        self._require_account(account)
        if account in self._state.sellers:
            raise LedgerError(f"{account!r} is already a registered seller")
        self._fee_precheck(account)
        self._state.sellers.add(account)
        self._settle_fee(account)
        self._record("register_seller", (account,), "ok")

    def create_listing(self, account: str, asset, unit_price: int) -> Listing:
        if account not in self._state.sellers:
            raise LedgerError(f"{account!r} is not a registered seller")
        if unit_price < 0:
            raise LedgerError("unit price must be non-negative")
        asset = self._owned_asset(account, asset)
        self._fee_precheck(account)
        # Escrow: the market holds the asset while it is listed.
        self._state.assets[asset.asset_id] = replace(asset, owner=MARKET_ACCOUNT)
        listing = Listing(
            listing_id=self._fresh_id(),
            asset_id=asset.asset_id,
            unit_price=unit_price,
            seller=account,
        )
        self._state.listings[listing.listing_id] = listing
        self._settle_fee(account)
        self._record("create_listing", (account, asset.asset_id, unit_price),
                     f"listing:{listing.listing_id}")
        return listing

    def buy(
        self,
        account: str,
        listing,
        *,
        start_time: int,
        expiration_time: int,
        bandwidth: int,
    ) -> BandwidthAsset:
        """Purchase a fraction of a listing; remainders are re-listed.

        The market performs at most two time splits and one bandwidth
        split, so a partial purchase leaves up to three remainder
        listings at the same unit price.
        """
        self._require_account(account)
        listing = self._resolve_listing(listing)
        asset = self._state.assets[listing.asset_id]

        if not asset.start_time <= start_time < expiration_time <= asset.expiration_time:
            raise LedgerError(
                f"wanted [{start_time}, {expiration_time}) outside listed "
                f"[{asset.start_time}, {asset.expiration_time})"
            )
        for name, value in (("start", start_time), ("expiration", expiration_time)):
            if (value - asset.start_time) % asset.time_granularity:
                raise LedgerError(
                    f"wanted {name} {value} not aligned to granularity "
                    f"{asset.time_granularity} from {asset.start_time}"
                )
        if bandwidth > asset.bandwidth:
            raise LedgerError(
                f"wanted bandwidth {bandwidth} exceeds listed {asset.bandwidth}"
            )
        if bandwidth < asset.min_bandwidth:
            raise LedgerError(
                f"wanted bandwidth {bandwidth} below minimum {asset.min_bandwidth}"
            )
        leftover_bw = asset.bandwidth - bandwidth
        if 0 < leftover_bw < asset.min_bandwidth:
            raise LedgerError(
                f"purchase would strand {leftover_bw} bit/s below minimum "
                f"{asset.min_bandwidth}"
            )
        price = listing.unit_price * bandwidth * (expiration_time - start_time)
        if self.balance(account) < price + self._fee:
            raise LedgerError(
                f"{account!r} has {self.balance(account)}, needs {price + self._fee}"
            )

        del self._state.listings[listing.listing_id]
        remainders = []
        want = asset
        if start_time > want.start_time:
            before, want = self._split_time(want, start_time)
            remainders.append(before)
        if expiration_time < want.expiration_time:
            want, after = self._split_time(want, expiration_time)
            remainders.append(after)
        if bandwidth < want.bandwidth:
            rest, want = self._split_bandwidth(want, bandwidth)
            remainders.append(rest)

        self._state.balances[account] -= price
        self._state.balances[listing.seller] = (
            self._state.balances.get(listing.seller, 0) + price
        )
        bought = replace(want, owner=account)
        self._state.assets[bought.asset_id] = bought
        relisted = []
        for remainder in remainders:
            new = Listing(
                listing_id=self._fresh_id(),
                asset_id=remainder.asset_id,
                unit_price=listing.unit_price,
                seller=listing.seller,
            )
            self._state.listings[new.listing_id] = new
            relisted.append(new.listing_id)
        self._settle_fee(account)
        self._record(
            "buy",
            (account, listing.listing_id, start_time, expiration_time, bandwidth),
            f"asset:{bought.asset_id} paid:{price} relisted:{relisted}",
        )
        return bought

    # -- redemption ------------------------------------------------------------

    def redeem(
        self, account: str, ingress_asset, egress_asset, ephemeral_pubkey: bytes
    ) -> RedeemRequest:
        ingress = self._owned_asset(account, ingress_asset)
        egress = self._owned_asset(account, egress_asset)
        if ingress.asset_id == egress.asset_id:
            raise LedgerError("redeem needs two distinct assets")
        if (ingress.direction, egress.direction) != (Direction.INGRESS, Direction.EGRESS):
            raise LedgerError(
                f"directions must be (ingress, egress), got "
                f"({ingress.direction.value}, {egress.direction.value})"
            )
        if ingress.as_id != egress.as_id:
            raise LedgerError(f"AS mismatch: {ingress.as_id} vs {egress.as_id}")
        if (ingress.start_time, ingress.expiration_time) != (
            egress.start_time,
            egress.expiration_time,
        ):
            raise LedgerError("validity periods differ")
        if ingress.bandwidth != egress.bandwidth:
            raise LedgerError(
                f"bandwidth differs: {ingress.bandwidth} vs {egress.bandwidth}"
            )
        # Wire-format limits, checked here so atomic blocks fail early.
        if ingress.duration >= (1 << 16):
            raise LedgerError(
                f"duration {ingress.duration}s does not fit the 16-bit wire field"
            )
        if ingress.expiration_time >= (1 << 32):
            raise LedgerError("expiration beyond 32-bit unix seconds")
        if ingress.bandwidth > MAX_BW_VALUE:
            raise LedgerError(f"bandwidth {ingress.bandwidth} not encodable")
        if len(ephemeral_pubkey) != 32:
            raise LedgerError("ephemeral public key must be 32 bytes")
        self._fee_precheck(account)
        request = RedeemRequest(
            request_id=self._fresh_id(),
            as_id=ingress.as_id,
            owner=account,
            ingress_interface=ingress.interface,
            egress_interface=egress.interface,
            bandwidth=ingress.bandwidth,
            start_time=ingress.start_time,
            expiration_time=ingress.expiration_time,
            ephemeral_pubkey=ephemeral_pubkey,
        )
        # Redemption destroys the assets; the ids are never reused.
        del self._state.assets[ingress.asset_id]
        del self._state.assets[egress.asset_id]
        self._state.requests[request.request_id] = request
        self._settle_fee(account)
        self._record(
            "redeem",
            (account, ingress.asset_id, egress.asset_id),
            f"request:{request.request_id}",
        )
        return request

    def deliver_reservation(self, service: ASControlService, request) -> bytes:
        """Route a redeem request to its AS and store the sealed answer.

        Not allowed inside atomic blocks: the allocator assignment is
        an external side effect that a rollback could not undo.
        """
        if self._in_block:
            raise LedgerError("deliver_reservation cannot run inside an atomic block")
        request = self._resolve_request(request)
        if request.delivered:
            raise LedgerError(f"request {request.request_id} already delivered")
        blob = service.build_credentials(request)
        self._state.requests[request.request_id] = replace(
            request, delivered=True, credentials=blob
        )
        self._record(
            "deliver_reservation",
            (service.as_id, request.request_id),
            f"sealed:{len(blob)}B",
        )
        return blob

    # -- atomic blocks -----------------------------------------------------------

    def execute_atomic(self, block: list[Call]) -> tuple:
        """Run all calls or none: stage on a copy, commit only on success."""
        if self._in_block:
            raise LedgerError("atomic blocks do not nest")
        for call in block:
            if call.op not in self.ATOMIC_OPS:
                raise LedgerError(f"operation not allowed in atomic block: {call.op!r}")
        saved = self._state
        self._state = copy.deepcopy(saved)
        self._in_block = True
        results: list = []
        try:
            for call in block:
                args = tuple(self._resolve_ref(a, results) for a in call.args)
                kwargs = {
                    k: self._resolve_ref(v, results) for k, v in call.kwargs.items()
                }
                results.append(getattr(self, call.op)(*args, **kwargs))
        except Exception:
            self._state = saved
            self._in_block = False
            self._record("execute_atomic", self._block_digest(block), "rolled_back")
            raise
        self._in_block = False
        self._record("execute_atomic", self._block_digest(block), f"ok:{len(results)}")
        return tuple(results)

    @staticmethod
    def _resolve_ref(value, results: list):
        if isinstance(value, Result):
            resolved = results[value.index]
            return resolved if value.item is None else resolved[value.item]
        return value

    @staticmethod
    def _block_digest(block: list[Call]) -> tuple:
        return tuple((c.op, repr(c.args), repr(sorted(c.kwargs.items()))) for c in block)

    # -- integrity ------------------------------------------------------------

    def state_hash(self) -> str:
        """Digest of everything except the call log."""
        state = self._state
        canonical = {
            "balances": dict(sorted(state.balances.items())),
            "assets": {
                str(k): self._asset_dict(v) for k, v in sorted(state.assets.items())
            },
            "listings": {
                str(k): {
                    "asset_id": v.asset_id,
                    "unit_price": v.unit_price,
                    "seller": v.seller,
                }
                for k, v in sorted(state.listings.items())
            },
            "requests": {
                str(k): {
                    "as_id": v.as_id,
                    "owner": v.owner,
                    "ingress_interface": v.ingress_interface,
                    "egress_interface": v.egress_interface,
                    "bandwidth": v.bandwidth,
                    "start_time": v.start_time,
                    "expiration_time": v.expiration_time,
                    "ephemeral_pubkey": v.ephemeral_pubkey.hex(),
                    "delivered": v.delivered,
                    "credentials": v.credentials.hex(),
                }
                for k, v in sorted(state.requests.items())
            },
            "tokens": {
                str(k): {"as_id": v.as_id, "account": v.account}
                for k, v in sorted(state.tokens.items())
            },
            "sellers": sorted(state.sellers),
            "next_id": state.next_id,
        }
        blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @staticmethod
    def _asset_dict(a: BandwidthAsset) -> dict:
        return {
            "as_id": a.as_id,
            "bandwidth": a.bandwidth,
            "start_time": a.start_time,
            "expiration_time": a.expiration_time,
            "interface": a.interface,
            "direction": a.direction.value,
            "time_granularity": a.time_granularity,
            "min_bandwidth": a.min_bandwidth,
            "owner": a.owner,
        }

    def export_log(self) -> tuple[dict, ...]:
        return tuple(dict(r) for r in self._log)

    def format_log(self) -> str:
        lines = []
        for r in self._log:
            lines.append(
                f"{r['seq']:>4}  {r['op']:<20} args={r['args']}  -> {r['result']}  "
                f"state={r['state'][:12]}"
            )
        return "\n".join(lines)

    # -- internals -------------------------------------------------------------

    def _record(self, op: str, args, result: str) -> None:
        if self._in_block:
            return  # the enclosing execute_atomic logs once for the block
        digest = hashlib.sha256(repr(args).encode()).hexdigest()[:16]
        self._log.append(
            {
                "seq": len(self._log),
                "op": op,
                "args": digest,
                "result": result,
                "state": self.state_hash(),
            }
        )

    def _fresh_id(self) -> int:
        value = self._state.next_id
        self._state.next_id += 1
        return value

    def _require_account(self, account: str) -> None:
        if account not in self._state.balances:
            raise LedgerError(f"unknown account: {account!r}")

    def _fee_precheck(self, account: str) -> None:
        """Affordability check, run before any mutation."""
        if self._fee == 0:
            return
        self._require_account(account)
        if self._state.balances[account] < self._fee:
            raise LedgerError(f"{account!r} cannot cover the {self._fee} token fee")

    def _settle_fee(self, account: str) -> None:
        """Fee transfer, run last; the precheck guarantees it cannot fail."""
        if self._fee == 0:
            return
        assert self._state.balances[account] >= self._fee
        self._state.balances[account] -= self._fee
        self._state.balances[TREASURY_ACCOUNT] = (
            self._state.balances.get(TREASURY_ACCOUNT, 0) + self._fee
        )

    def _owned_asset(self, account: str, asset) -> BandwidthAsset:
        asset = self.asset(asset.asset_id if isinstance(asset, BandwidthAsset) else asset)
        if asset.owner != account:
            raise LedgerError(
                f"asset {asset.asset_id} is owned by {asset.owner!r}, not {account!r}"
            )
        return asset

    def _resolve_token(self, account: str, token) -> AuthToken:
        token_id = token.token_id if isinstance(token, AuthToken) else token
        try:
            token = self._state.tokens[token_id]
        except KeyError:
            raise LedgerError(f"no such token: {token_id}") from None
        if token.account != account:
            raise LedgerError(
                f"token {token.token_id} belongs to {token.account!r}, not {account!r}"
            )
        return token

    def _resolve_listing(self, listing) -> Listing:
        return self.listing(
            listing.listing_id if isinstance(listing, Listing) else listing
        )

    def _resolve_request(self, request) -> RedeemRequest:
        return self.request(
            request.request_id if isinstance(request, RedeemRequest) else request
        )

    def _split_time(
        self, asset: BandwidthAsset, cut: int
    ) -> tuple[BandwidthAsset, BandwidthAsset]:
        if not asset.start_time < cut < asset.expiration_time:
            raise LedgerError(
                f"cut {cut} outside ({asset.start_time}, {asset.expiration_time})"
            )
        if (cut - asset.start_time) % asset.time_granularity:
            raise LedgerError(
                f"cut {cut} not aligned to granularity {asset.time_granularity} "
                f"from {asset.start_time}"
            )
        first = replace(asset, asset_id=self._fresh_id(), expiration_time=cut)
        second = replace(asset, asset_id=self._fresh_id(), start_time=cut)
        first.validate()
        second.validate()
        del self._state.assets[asset.asset_id]
        self._state.assets[first.asset_id] = first
        self._state.assets[second.asset_id] = second
        return first, second

    def _split_bandwidth(
        self, asset: BandwidthAsset, part: int
    ) -> tuple[BandwidthAsset, BandwidthAsset]:
        rest = asset.bandwidth - part
        if part <= 0 or rest <= 0:
            raise LedgerError(
                f"part {part} must split {asset.bandwidth} into two positive pieces"
            )
        if part < asset.min_bandwidth or rest < asset.min_bandwidth:
            raise LedgerError(
                f"split ({rest}, {part}) violates minimum bandwidth "
                f"{asset.min_bandwidth}"
            )
        first = replace(asset, asset_id=self._fresh_id(), bandwidth=rest)
        second = replace(asset, asset_id=self._fresh_id(), bandwidth=part)
        first.validate()
        second.validate()
        del self._state.assets[asset.asset_id]
        self._state.assets[first.asset_id] = first
        self._state.assets[second.asset_id] = second
        return first, second

    @staticmethod
    def _fuse_compatible(a: BandwidthAsset, b: BandwidthAsset) -> None:
        for name in ("as_id", "interface", "direction", "time_granularity", "min_bandwidth"):
            if getattr(a, name) != getattr(b, name):
                raise LedgerError(
                    f"{name} differs: {getattr(a, name)} vs {getattr(b, name)}"
                )
