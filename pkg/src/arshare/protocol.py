"""Wire protocol and client/server runtime.

Frames are a 4-byte big-endian length followed by a canonical-JSON body
with mandatory "type", "request_id", and "v" fields. The in-process client
routes every call through encode/decode exactly like the TCP path, so both
transports produce field-identical behavior by construction.

Ground-truth provenance never crosses this boundary: observations are
serialized without it.
"""

import json
import socket
import socketserver
import struct
import threading
from collections import OrderedDict

import numpy as np

from .errors import (
    ArShareError,
    ClientError,
    FrameTooLarge,
    ProtocolError,
    error_from_code,
)
from .shared_state import Hologram, SharedStateStore
from .world import ExifRecord, GeoCoord, Observation, Pose, Sample

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
HEADER = struct.Struct(">I")
DEDUP_WINDOW = 4096

REQUEST_TYPES = (
    "HostAnchor", "ResolveAnchor", "LocalizeVps", "PlaceHologram",
    "IngestSequence", "ReadCrowdMap", "AdminSnapshot",
)


# --------------------------------------------------------------------------
# value <-> wire conversions
# --------------------------------------------------------------------------

def observation_to_wire(obs: Observation) -> dict:
    """Serialize an observation as uploaded by a device. The ground-truth
    provenance flag is deliberately not representable on the wire."""
    return {
        "pose": obs.pose.to_dict(),
        "imu": [float(v) for v in obs.imu_orientation],
        "gps": obs.gps.to_dict() if obs.gps is not None else None,
        "exif": obs.exif.to_dict() if obs.exif is not None else None,
        "pixel_size": list(obs.pixel_size),
        "focal_px": float(obs.focal_px),
        "samples": [
            {
                "fid": s.feature_id,
                "desc": [float(v) for v in s.descriptor],
                "px": [float(s.pixel[0]), float(s.pixel[1])],
                "depth": float(s.depth),
                "size_px": float(s.size_px),
                "plane": s.plane_id,
            }
            for s in obs.samples
        ],
    }


def observation_from_wire(d: dict) -> Observation:
    samples = tuple(
        Sample(
            feature_id=s["fid"],
            descriptor=np.array(s["desc"], dtype=float),
            pixel=np.array(s["px"], dtype=float),
            depth=s["depth"],
            size_px=s["size_px"],
            plane_id=s["plane"],
        )
        for s in d["samples"]
    )
    return Observation(
        pose=Pose.from_dict(d["pose"]),
        samples=samples,
        imu_orientation=np.array(d["imu"], dtype=float),
        gps=GeoCoord.from_dict(d["gps"]) if d.get("gps") else None,
        exif=ExifRecord.from_dict(d["exif"]) if d.get("exif") else None,
        pixel_size=tuple(d.get("pixel_size", (640, 480))),
        focal_px=d.get("focal_px", 457.0),
    )


def _quality_to_wire(q) -> dict:
    return dict(q) if isinstance(q, dict) else q.to_dict()


# --------------------------------------------------------------------------
# framing
# --------------------------------------------------------------------------

def encode_frame(body: dict) -> bytes:
    payload = json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"frame of {len(payload)} bytes exceeds 16 MiB")
    return HEADER.pack(len(payload)) + payload


def decode_frame(buf: bytes):
    """Decode one frame from the head of buf.

    Returns (body, bytes_consumed), or None when more bytes are needed
    (the streaming contract: a partial frame is not an error).
    """
    if len(buf) < HEADER.size:
        return None
    (length,) = HEADER.unpack_from(buf)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared frame of {length} bytes exceeds 16 MiB")
    if len(buf) < HEADER.size + length:
        return None
    raw = buf[HEADER.size:HEADER.size + length]
    try:
        body = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"malformed frame body: {e}") from None
    if not isinstance(body, dict) or "type" not in body or "request_id" not in body:
        raise ProtocolError("frame body must carry type and request_id")
    return body, HEADER.size + length


# --------------------------------------------------------------------------
# server-side dispatch
# --------------------------------------------------------------------------

def dispatch(store: SharedStateStore, request: dict) -> dict:
    """Apply one decoded request to the store and build the response body."""
    rtype = request.get("type")
    rid = request.get("request_id")
    base = {"request_id": rid, "v": PROTOCOL_VERSION}
    try:
        if rtype == "HostAnchor":
            observations = [observation_from_wire(o) for o in request["observations"]]
            res = store.host_anchor(
                request["token"], observations,
                Hologram.from_dict(request["hologram"]),
                np.array(request["imu"], dtype=float),
            )
            return {**base, "type": "HostAnchorOk",
                    "anchor_id": res["anchor_id"],
                    "quality": _quality_to_wire(res["quality"]),
                    "verdicts": res["verdicts"]}
        if rtype == "ResolveAnchor":
            res = store.resolve_anchor(
                request["token"], request["anchor_id"],
                observation_from_wire(request["observation"]),
                np.array(request["imu"], dtype=float),
            )
            return {**base, "type": "ResolveAnchorOk",
                    "anchor_id": res.anchor_id,
                    "hologram": res.hologram.to_dict(),
                    "region_pose": res.region_pose.to_dict(),
                    "inlier_count": res.inlier_count,
                    "verdicts": res.verdicts}
        if rtype == "LocalizeVps":
            res = store.localize_vps(
                request["token"], observation_from_wire(request["observation"]))
            return {**base, "type": "LocalizeVpsOk",
                    "region_id": res.region_id,
                    "geo": res.geo.to_dict() if res.geo else None,
                    "inlier_count": res.inlier_count,
                    "holograms": [h.to_dict() for h in res.holograms],
                    "verdicts": res.verdicts}
        if rtype == "PlaceHologram":
            hid = store.place_geospatial_hologram(
                request["token"], request["region_id"],
                Hologram.from_dict(request["hologram"]))
            return {**base, "type": "PlaceHologramOk", "hologram_id": hid}
        if rtype == "IngestSequence":
            sequence = [observation_from_wire(o) for o in request["sequence"]]
            holograms = [Hologram.from_dict(h) for h in request.get("holograms", [])]
            res = store.ingest_sequence(request["token"], sequence, holograms)
            return {**base, "type": "IngestSequenceOk",
                    "region_id": res.region_id,
                    "hologram_ids": list(res.hologram_ids),
                    "object_hologram_ids": list(res.object_hologram_ids),
                    "object_verdicts": [
                        {"object_class": v.object_class, "accepted": v.accepted,
                         "reason": v.reason, "appearances": v.appearances,
                         "position": ([float(x) for x in v.position]
                                      if v.position is not None else None)}
                        for v in res.object_verdicts
                    ]}
        if rtype == "ReadCrowdMap":
            holos = store.read_crowd_map(
                request["token"], observation_from_wire(request["observation"]))
            return {**base, "type": "ReadCrowdMapOk",
                    "holograms": [h.to_dict() for h in holos]}
        if rtype == "AdminSnapshot":
            if request.get("op") == "export":
                return {**base, "type": "AdminSnapshotOk", "state": store.snapshot()}
            if request.get("op") == "import":
                store.load_snapshot(request["state"])
                return {**base, "type": "AdminSnapshotOk", "state": None}
            raise ProtocolError(f"unknown snapshot op: {request.get('op')}")
        raise ProtocolError(f"unknown request type: {rtype}")
    except ArShareError as e:
        return {**base, "type": "Error", "code": e.code, "message": str(e)}


# --------------------------------------------------------------------------
# clients
# --------------------------------------------------------------------------

class StoreClient:
    """Typed operations over a request/response transport.

    Subclasses implement call(); every request flows through the frame
    codec, and error responses re-raise the same typed exceptions the
    store would raise in-process. An audit log of message types records
    which API surface a procedure touched.
    """

    def __init__(self):
        self._next_request = 1
        self.audit_log = []

    def call(self, body: dict) -> dict:
        raise NotImplementedError

    def _request(self, rtype: str, **fields) -> dict:
        rid = f"r{self._next_request}"
        self._next_request += 1
        body = {"type": rtype, "request_id": rid, "v": PROTOCOL_VERSION, **fields}
        self.audit_log.append(rtype)
        response = self.call(body)
        if response.get("request_id") != rid:
            raise ClientError("response does not match request id")
        if response["type"] == "Error":
            raise error_from_code(response["code"], response["message"])
        return response

    # typed operations ------------------------------------------------------

    def host_anchor(self, token, observations, hologram, imu) -> dict:
        return self._request(
            "HostAnchor", token=token,
            observations=[observation_to_wire(o) for o in observations],
            hologram=hologram.to_dict(), imu=[float(v) for v in imu])

    def resolve_anchor(self, token, anchor_id, observation, imu) -> dict:
        return self._request(
            "ResolveAnchor", token=token, anchor_id=int(anchor_id),
            observation=observation_to_wire(observation),
            imu=[float(v) for v in imu])

    def localize_vps(self, token, observation) -> dict:
        return self._request("LocalizeVps", token=token,
                             observation=observation_to_wire(observation))

    def place_hologram(self, token, region_id, hologram) -> dict:
        return self._request("PlaceHologram", token=token, region_id=region_id,
                             hologram=hologram.to_dict())

    def ingest_sequence(self, token, sequence, holograms=()) -> dict:
        return self._request(
            "IngestSequence", token=token,
            sequence=[observation_to_wire(o) for o in sequence],
            holograms=[h.to_dict() for h in holograms])

    def read_crowd_map(self, token, observation) -> dict:
        return self._request("ReadCrowdMap", token=token,
                             observation=observation_to_wire(observation))

    def admin_export(self) -> dict:
        return self._request("AdminSnapshot", op="export")["state"]

    def admin_import(self, state: dict):
        self._request("AdminSnapshot", op="import", state=state)


class InProcessClient(StoreClient):
    """Runs against a store in this process with bit-identical behavior to
    the TCP transport: requests and responses are built from the same wire
    dictionaries (JSON-primitive values only), so serializing them is an
    identity transform. full_codec=True actually routes the bytes through
    encode/decode, for tests that want to prove that equivalence.
    """

    def __init__(self, store: SharedStateStore, full_codec: bool = False):
        super().__init__()
        self.store = store
        self.full_codec = full_codec

    def call(self, body: dict) -> dict:
        if self.full_codec:
            decoded = decode_frame(encode_frame(body))
            assert decoded is not None
            request, _ = decoded
            response = dispatch(self.store, request)
            decoded = decode_frame(encode_frame(response))
            assert decoded is not None
            return decoded[0]
        if "type" not in body or "request_id" not in body:
            raise ProtocolError("frame body must carry type and request_id")
        return dispatch(self.store, body)


class WireClient(StoreClient):
    def __init__(self, address):
        super().__init__()
        host, port = address if isinstance(address, tuple) else _parse_address(address)
        self._sock = socket.create_connection((host, port))
        self._buf = b""

    def call(self, body: dict) -> dict:
        try:
            self._sock.sendall(encode_frame(body))
            while True:
                decoded = decode_frame(self._buf)
                if decoded is not None:
                    response, consumed = decoded
                    self._buf = self._buf[consumed:]
                    return response
                chunk = self._sock.recv(65536)
                if not chunk:
                    raise ClientError("server closed the connection")
                self._buf += chunk
        except OSError as e:
            raise ClientError(f"transport failure: {e}") from None

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_address(address: str):
    host, _, port = address.rpartition(":")
    return host or "127.0.0.1", int(port)


# --------------------------------------------------------------------------
# server
# --------------------------------------------------------------------------

class _ConnectionHandler(socketserver.BaseRequestHandler):
    def handle(self):
        buf = b""
        # idempotency: replay the cached response for a repeated request_id
        seen = OrderedDict()
        while True:
            try:
                decoded = decode_frame(buf)
            except ArShareError as e:
                err = {"type": "Error", "request_id": "", "v": PROTOCOL_VERSION,
                       "code": e.code, "message": str(e)}
                self.request.sendall(encode_frame(err))
                return
            if decoded is None:
                try:
                    chunk = self.request.recv(65536)
                except OSError:
                    return
                if not chunk:
                    return
                buf += chunk
                continue
            request, consumed = decoded
            buf = buf[consumed:]
            rid = request.get("request_id")
            if rid in seen:
                payload = seen[rid]
            else:
                response = dispatch(self.server.store, request)
                payload = encode_frame(response)
                seen[rid] = payload
                while len(seen) > DEDUP_WINDOW:
                    seen.popitem(last=False)
            try:
                self.request.sendall(payload)
            except OSError:
                return


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ServerHandle:
    def __init__(self, server: _Server, thread: threading.Thread):
        self._server = server
        self._thread = thread

    @property
    def address(self):
        return self._server.server_address

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(address, store: SharedStateStore) -> ServerHandle:
    """Start a TCP server for the store; returns a handle with .address."""
    host, port = address if isinstance(address, tuple) else _parse_address(address)
    server = _Server((host, port), _ConnectionHandler)
    server.store = store
    thread = threading.Thread(target=server.serve_forever, name="arshare-server",
                              daemon=True)
    thread.start()
    return ServerHandle(server, thread)
