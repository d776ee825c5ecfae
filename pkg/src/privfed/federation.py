"""Role state machines over TCP: compute pair, data partners, dealer, analyst.

Connection handshake: the initiator sends HELLO {version, role, session id,
config hash}; the acceptor echoes the session id in HELLO_ACK or answers
ABORT with a reason code (1 version mismatch, 2 config divergence, 3
duplicate role).  After the handshake every payload on the wire is shares,
masked openings, or dealer triples.
"""

from __future__ import annotations

import secrets
import socket
import struct
import threading
from dataclasses import dataclass

from .config import StudyConfig, parse_endpoint
from .engine import Engine, GateTape, TripleSource
from .errors import (ABORT_CONFIG, ABORT_FRAMING, ABORT_ROLE, ABORT_VERSION,
                     ProtocolAbort, ValidationError)
from .local import LocalDealer
from .records import read_site_csv
from .sharing import ShareFile, TripleBlock
from .study import (build_party_inputs, open_output, prepare_upload,
                    serialize_output_share, study_party)
from .wire import (MSG_BYE, MSG_HELLO, MSG_HELLO_ACK, MSG_OUTPUT_SHARE,
                   MSG_SHARE_UPLOAD, MSG_TRIPLE_BLOCK, PROTOCOL_VERSION,
                   Recorder, SocketChannel, connect_channel)

ROLE_COMPUTE1 = 1
ROLE_COMPUTE2 = 2
ROLE_PARTNER = 3
ROLE_DEALER = 4
ROLE_ANALYST = 5

ROLE_NAMES = {ROLE_COMPUTE1: "compute_1", ROLE_COMPUTE2: "compute_2",
              ROLE_PARTNER: "data_partner", ROLE_DEALER: "dealer",
              ROLE_ANALYST: "analyst"}

_HELLO = struct.Struct(">HB16s32sB")
_UPLOAD_HEAD = struct.Struct(">B")
_UPLOAD_META = struct.Struct(">II")
_UPLOAD_ACK = struct.Struct(">IQ")
_BLOCK_HEAD = struct.Struct(">I")

UPLOAD_CHUNK = 4 * 1024 * 1024


@dataclass
class Session:
    session_id: bytes
    role: int
    config_hash: bytes
    peer_role: int = 0


def hello_payload(role: int, session_id: bytes, config_hash: bytes,
                  partner_id: str = "") -> bytes:
    pid = partner_id.encode()
    return _HELLO.pack(PROTOCOL_VERSION, role, session_id, config_hash, len(pid)) + pid


def handshake_initiate(ch, role: int, config: StudyConfig, session_id: bytes,
                       partner_id: str = "") -> Session:
    ch.send_frame(MSG_HELLO, hello_payload(role, session_id, config.config_hash(), partner_id))
    payload = ch.expect(MSG_HELLO_ACK)
    if payload[:16] != session_id:
        raise ProtocolAbort(ABORT_FRAMING, "acceptor echoed a foreign session id")
    return Session(session_id, role, config.config_hash())


def handshake_accept(ch, config: StudyConfig, taken_roles: set[int]) -> tuple[Session, str]:
    """Validate an inbound HELLO; replies HELLO_ACK or ABORT. Returns (session, partner_id)."""
    payload = ch.expect(MSG_HELLO)
    if len(payload) < _HELLO.size:
        ch.abort(ABORT_FRAMING, "short HELLO")
        raise ProtocolAbort(ABORT_FRAMING, "short HELLO")
    version, role, session_id, config_hash, pid_len = _HELLO.unpack_from(payload)
    partner_id = payload[_HELLO.size:_HELLO.size + pid_len].decode("utf-8", "replace")
    if version != PROTOCOL_VERSION:
        ch.abort(ABORT_VERSION, f"peer speaks version {version}")
        raise ProtocolAbort(ABORT_VERSION, f"peer speaks version {version}")
    if config_hash != config.config_hash():
        ch.abort(ABORT_CONFIG, "study configuration differs")
        raise ProtocolAbort(ABORT_CONFIG, "study configuration differs")
    if role != ROLE_PARTNER and role in taken_roles:
        ch.abort(ABORT_ROLE, f"role {ROLE_NAMES.get(role)} already connected")
        raise ProtocolAbort(ABORT_ROLE, f"duplicate role {role}")
    taken_roles.add(role)
    ch.send_frame(MSG_HELLO_ACK, session_id)
    return Session(session_id, role, config_hash), partner_id


# ---- share upload framing ----------------------------------------------------

def send_table(ch, partner_id: str, sf: ShareFile) -> None:
    """Upload one table record, chunked below the frame cap, and await the ack."""
    pid = partner_id.encode()
    body = sf.to_bytes()
    offset = 0
    while True:
        chunk = body[offset:offset + UPLOAD_CHUNK]
        payload = (_UPLOAD_HEAD.pack(len(pid)) + pid
                   + _UPLOAD_META.pack(len(body), offset) + chunk)
        ch.send_frame(MSG_SHARE_UPLOAD, payload)
        offset += len(chunk)
        if offset >= len(body):
            break
    ack = ch.expect(MSG_SHARE_UPLOAD)
    table_id, row_count = _UPLOAD_ACK.unpack(ack)
    if table_id != sf.table_id or row_count != sf.row_count:
        raise ProtocolAbort(ABORT_FRAMING, "upload ack does not match the table")


def send_upload_done(ch) -> None:
    ch.send_frame(MSG_SHARE_UPLOAD, _UPLOAD_HEAD.pack(0) + _UPLOAD_META.pack(0, 0))


class UploadStore:
    """Receiver side of SHARE_UPLOAD: reassembly, validation, acknowledgment."""

    def __init__(self, party: int, roster: tuple[str, ...]):
        self.party = party
        self.roster = set(roster)
        self.tables: dict[str, dict[int, ShareFile]] = {}
        self._pending: dict[str, tuple[int, bytearray]] = {}

    def handle(self, ch, payload: bytes) -> bool:
        """Process one SHARE_UPLOAD frame; True when it was the done marker."""
        (pid_len,) = _UPLOAD_HEAD.unpack_from(payload)
        pid = payload[1:1 + pid_len].decode("utf-8", "replace")
        total, offset = _UPLOAD_META.unpack_from(payload, 1 + pid_len)
        chunk = payload[1 + pid_len + _UPLOAD_META.size:]
        if pid_len == 0 and total == 0:
            return True
        if pid not in self.roster:
            raise ValidationError(f"upload from unknown partner {pid!r}")
        want, buf = self._pending.get(pid, (total, bytearray()))
        if total != want or offset != len(buf):
            raise ValidationError("upload chunks out of order")
        buf += chunk
        if len(buf) > total:
            raise ValidationError("upload longer than announced")
        self._pending[pid] = (want, buf)
        if len(buf) < total:
            return False
        del self._pending[pid]
        sf, end = ShareFile.from_bytes(bytes(buf))
        if end != len(buf):
            raise ValidationError("trailing bytes after table record")
        if sf.share_index != self.party:
            raise ValidationError(
                f"share index {sf.share_index} sent to compute party {self.party}")
        tabs = self.tables.setdefault(pid, {})
        if sf.table_id in tabs:
            raise ValidationError(f"duplicate table id {sf.table_id} from {pid}")
        tabs[sf.table_id] = sf
        ch.send_frame(MSG_SHARE_UPLOAD, _UPLOAD_ACK.pack(sf.table_id, sf.row_count))
        return False


# ---- dealer -------------------------------------------------------------------

def run_dealer(config: StudyConfig, listen: str | None = None, rng=None,
               block_bits: int = 1 << 16, timeout: float = 600.0) -> None:
    """Serve correlated triple blocks to both compute parties until they leave."""
    host, port = parse_endpoint(listen or config.endpoints["dealer"])
    factory = LocalDealer(rng, block_bits)
    taken: set[int] = set()
    conns = []
    with socket.create_server((host, port), backlog=4) as server:
        server.settimeout(timeout)
        while len(conns) < 2:
            sock, _ = server.accept()
            ch = SocketChannel(sock)
            try:
                session, _ = handshake_accept(ch, config, taken)
            except ProtocolAbort:
                ch.close()
                continue
            if session.role not in (ROLE_COMPUTE1, ROLE_COMPUTE2):
                ch.abort(ABORT_ROLE, "dealer serves compute parties only")
                ch.close()
                continue
            conns.append((ch, session.role))

    def stream(ch: SocketChannel, party: int):
        stop = threading.Event()

        def watch():
            try:
                ftype, _ = ch.recv_frame()
            except Exception:
                pass
            stop.set()
            try:
                ch.sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass

        watcher = threading.Thread(target=watch, daemon=True)
        watcher.start()
        try:
            while not stop.is_set():
                blk = factory.next_block_for(party)
                nbytes = blk.nbits // 8
                payload = (_BLOCK_HEAD.pack(blk.index)
                           + blk.a.to_bytes(nbytes, "little")
                           + blk.b.to_bytes(nbytes, "little")
                           + blk.c.to_bytes(nbytes, "little"))
                ch.send_frame(MSG_TRIPLE_BLOCK, payload)
        except (ProtocolAbort, OSError, ValidationError):
            pass
        finally:
            ch.close()

    threads = [threading.Thread(target=stream, args=(ch, 1 if role == ROLE_COMPUTE1 else 2))
               for ch, role in conns]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def dealer_triple_source(ch) -> TripleSource:
    def next_block() -> TripleBlock:
        payload = ch.expect(MSG_TRIPLE_BLOCK)
        (index,) = _BLOCK_HEAD.unpack_from(payload)
        body = payload[_BLOCK_HEAD.size:]
        nbytes = len(body) // 3
        return TripleBlock(
            index, nbytes * 8,
            int.from_bytes(body[:nbytes], "little"),
            int.from_bytes(body[nbytes:2 * nbytes], "little"),
            int.from_bytes(body[2 * nbytes:], "little"),
        )
    return TripleSource(next_block)


# ---- data partner --------------------------------------------------------------

def run_partner(config: StudyConfig, partner_id: str, files1: list[ShareFile],
                files2: list[ShareFile], alice: str | None = None,
                bob: str | None = None, timeout: float = 120.0) -> None:
    """Upload index-1 tables to the first compute party, index-2 to the second."""
    targets = [
        (alice or config.endpoints["alice"], files1),
        (bob or config.endpoints["bob"], files2),
    ]
    for addr, files in targets:
        host, port = parse_endpoint(addr)
        ch = connect_channel(host, port, timeout=timeout, retry_for=timeout)
        try:
            handshake_initiate(ch, ROLE_PARTNER, config, secrets.token_bytes(16), partner_id)
            for sf in files:
                send_table(ch, partner_id, sf)
            ch.send_frame(MSG_BYE)
        finally:
            ch.close()


# ---- compute party --------------------------------------------------------------

def run_compute(config: StudyConfig, role_name: str, input_csv=None,
                partner_id: str = "", output_share_path=None,
                timeout: float = 300.0, recorder: Recorder | None = None) -> bytes:
    """One compute party end to end: ingest, MPC, output share release.

    Returns the serialized output share (also written/sent as configured).
    """
    if role_name not in ("alice", "bob"):
        raise ValidationError("role must be alice or bob")
    party = 1 if role_name == "alice" else 2
    peer_name = "bob" if party == 1 else "alice"
    host, port = parse_endpoint(config.endpoints[role_name])

    own_upload = None
    if input_csv is not None:
        if not partner_id:
            raise ValidationError("self-ingest needs --partner-id")
        records = read_site_csv(input_csv, config.years)
        own_upload = prepare_upload(records, config)

    store = UploadStore(party, config.partners)
    if own_upload is not None:
        store.tables[partner_id] = {sf.table_id: sf for sf in own_upload.files_for(party)}

    expected = set(config.partners)
    pair_ch = None
    pair_session = None
    taken: set[int] = set()

    my_role = ROLE_COMPUTE1 if party == 1 else ROLE_COMPUTE2
    server = socket.create_server((host, port), backlog=16)
    server.settimeout(timeout)
    try:
        if party == 2:
            peer_host, peer_port = parse_endpoint(config.endpoints[peer_name])
            pair_ch = connect_channel(peer_host, peer_port, recorder, timeout,
                                      retry_for=timeout)
            pair_session = handshake_initiate(pair_ch, ROLE_COMPUTE2, config,
                                              secrets.token_bytes(16))
            # the acceptor pushes its self-ingest tables first, then we do
            _pair_ingest(pair_ch, party, store, own_upload, partner_id)

        while (party == 1 and pair_ch is None) or not expected <= set(store.tables):
            sock, _ = server.accept()
            ch = SocketChannel(sock, timeout=timeout)
            session, pid = handshake_accept(ch, config, taken)
            if session.role == ROLE_COMPUTE2 and party == 1:
                ch.recorder = recorder
                pair_ch = ch
                pair_session = session
                _pair_ingest(pair_ch, party, store, own_upload, partner_id)
            elif session.role == ROLE_PARTNER:
                while True:
                    ftype, payload = ch.recv_frame()
                    if ftype == MSG_BYE:
                        break
                    if ftype != MSG_SHARE_UPLOAD:
                        raise ProtocolAbort(ABORT_FRAMING, "expected SHARE_UPLOAD")
                    store.handle(ch, payload)
                ch.close()
            else:
                ch.abort(ABORT_ROLE, "unexpected role")
                ch.close()

        inputs = build_party_inputs(config, store.tables, party)

        dealer_host, dealer_port = parse_endpoint(config.endpoints["dealer"])
        dealer_ch = connect_channel(dealer_host, dealer_port, timeout=timeout,
                                    retry_for=timeout)
        handshake_initiate(dealer_ch, my_role, config, secrets.token_bytes(16))
        triples = dealer_triple_source(dealer_ch)

        eng = Engine(party, pair_ch, triples, GateTape())
        rows = study_party(eng, config, inputs)
        payload = serialize_output_share(pair_session.session_id, config.config_hash(),
                                         party, rows)

        dealer_ch.send_frame(MSG_BYE)
        dealer_ch.close()

        if "analyst" in config.endpoints:
            a_host, a_port = parse_endpoint(config.endpoints["analyst"])
            a_ch = connect_channel(a_host, a_port, timeout=timeout, retry_for=timeout)
            handshake_initiate(a_ch, my_role, config, secrets.token_bytes(16))
            a_ch.send_frame(MSG_OUTPUT_SHARE, payload)
            a_ch.send_frame(MSG_BYE)
            a_ch.close()

        if output_share_path is not None:
            with open(output_share_path, "wb") as fh:
                fh.write(payload)

        pair_ch.send_frame(MSG_BYE)
        pair_ch.close()
        return payload
    finally:
        server.close()


def _pair_ingest(pair_ch, party: int, store: UploadStore, own_upload, own_pid: str) -> None:
    """Exchange self-ingested tables across the compute pair, alice first."""
    def send_mine():
        if own_upload is not None:
            for sf in own_upload.files_for(2 if party == 1 else 1):
                send_table(pair_ch, own_pid, sf)
        send_upload_done(pair_ch)

    def recv_theirs():
        while True:
            ftype, payload = pair_ch.recv_frame()
            if ftype != MSG_SHARE_UPLOAD:
                raise ProtocolAbort(ABORT_FRAMING, "expected SHARE_UPLOAD during ingest")
            if store.handle(pair_ch, payload):
                break

    if party == 1:
        send_mine()
        recv_theirs()
    else:
        recv_theirs()
        send_mine()


# ---- analyst --------------------------------------------------------------------

def run_analyst(config: StudyConfig, listen: str | None = None,
                timeout: float = 600.0):
    """Collect both output shares over TCP and reconstruct the result tables."""
    host, port = parse_endpoint(listen or config.endpoints["analyst"])
    shares: dict[int, bytes] = {}
    taken: set[int] = set()
    with socket.create_server((host, port), backlog=4) as server:
        server.settimeout(timeout)
        while len(shares) < 2:
            sock, _ = server.accept()
            ch = SocketChannel(sock, timeout=timeout)
            try:
                session, _ = handshake_accept(ch, config, taken)
                if session.role not in (ROLE_COMPUTE1, ROLE_COMPUTE2):
                    ch.abort(ABORT_ROLE, "analyst accepts compute parties only")
                    continue
                payload = ch.expect(MSG_OUTPUT_SHARE)
                shares[session.role] = payload
                try:
                    ch.recv_frame()  # BYE
                except ProtocolAbort:
                    pass
            finally:
                ch.close()
    return open_output(shares[ROLE_COMPUTE1], shares[ROLE_COMPUTE2], config.years)
