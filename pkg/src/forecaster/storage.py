"""Object storage for datasets, model artifacts, and results.

Two backends behind one small interface: a local filesystem tree (default,
used by tests and single-machine deployments) and any S3-compatible HTTP
endpoint (AWS Signature V4).  Keys are forward-slash paths like
``{owner}/{filename}`` or ``{job_id}/results.json``.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import threading
import urllib.parse
import xml.etree.ElementTree as ET
from datetime import datetime, timezone
from pathlib import Path

import httpx

from .errors import StoreError


class ObjectStore:
    """Interface: put/get/exists/list_keys/delete over string keys."""

    def put(self, key: str, data: bytes) -> None:
        raise NotImplementedError

    def get(self, key: str) -> bytes:
        raise NotImplementedError

    def exists(self, key: str) -> bool:
        raise NotImplementedError

    def list_keys(self, prefix: str = "") -> list[str]:
        raise NotImplementedError

    def delete(self, key: str) -> None:
        raise NotImplementedError


def _check_key(key: str) -> str:
    if not key or key.startswith("/") or ".." in key.split("/"):
        raise StoreError(f"invalid object key {key!r}")
    return key


class LocalStore(ObjectStore):
    """Filesystem-backed store rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / _check_key(key)

    def put(self, key: str, data: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with self._lock:
            tmp.write_bytes(data)
            os.replace(tmp, path)

    def get(self, key: str) -> bytes:
        path = self._path(key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise StoreError(f"no such object {key!r}")

    def exists(self, key: str) -> bool:
        return self._path(key).is_file()

    def list_keys(self, prefix: str = "") -> list[str]:
        out = []
        for p in self.root.rglob("*"):
            if p.is_file() and not p.name.endswith(".tmp"):
                key = p.relative_to(self.root).as_posix()
                if key.startswith(prefix):
                    out.append(key)
        return sorted(out)

    def delete(self, key: str) -> None:
        try:
            self._path(key).unlink()
        except FileNotFoundError:
            pass


def _hmac_sha256(key: bytes, msg: str) -> bytes:
    return hmac.new(key, msg.encode(), hashlib.sha256).digest()


def sigv4_signing_key(secret_key: str, date_stamp: str, region: str, service: str) -> bytes:
    """AWS Signature V4 key derivation chain."""
    k = _hmac_sha256(("AWS4" + secret_key).encode(), date_stamp)
    k = _hmac_sha256(k, region)
    k = _hmac_sha256(k, service)
    return _hmac_sha256(k, "aws4_request")


def _uri_encode(segment: str) -> str:
    return urllib.parse.quote(segment, safe="-._~")


class S3Store(ObjectStore):
    """Minimal S3 client: PUT/GET/HEAD/DELETE objects and list-objects-v2.

    Path-style addressing (endpoint/bucket/key), which self-hosted
    S3-compatible systems accept.
    """

    def __init__(self, endpoint: str, bucket: str, access_key: str, secret_key: str,
                 region: str = "us-east-1", client: httpx.Client | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.bucket = bucket
        self.access_key = access_key
        self.secret_key = secret_key
        self.region = region
        self._client = client or httpx.Client(timeout=30.0)

    def _signed_headers(self, method: str, path: str, query: list[tuple[str, str]],
                        payload: bytes) -> dict[str, str]:
        now = datetime.now(timezone.utc)
        amz_date = now.strftime("%Y%m%dT%H%M%SZ")
        date_stamp = now.strftime("%Y%m%d")
        host = urllib.parse.urlparse(self.endpoint).netloc
        payload_hash = hashlib.sha256(payload).hexdigest()

        canonical_uri = "/" + "/".join(_uri_encode(s) for s in path.lstrip("/").split("/"))
        canonical_query = "&".join(
            f"{_uri_encode(k)}={_uri_encode(v)}" for k, v in sorted(query))
        headers = {
            "host": host,
            "x-amz-content-sha256": payload_hash,
            "x-amz-date": amz_date,
        }
        signed = ";".join(sorted(headers))
        canonical_headers = "".join(f"{k}:{headers[k]}\n" for k in sorted(headers))
        canonical_request = "\n".join(
            [method, canonical_uri, canonical_query, canonical_headers, signed, payload_hash])

        scope = f"{date_stamp}/{self.region}/s3/aws4_request"
        string_to_sign = "\n".join([
            "AWS4-HMAC-SHA256", amz_date, scope,
            hashlib.sha256(canonical_request.encode()).hexdigest()])
        key = sigv4_signing_key(self.secret_key, date_stamp, self.region, "s3")
        signature = hmac.new(key, string_to_sign.encode(), hashlib.sha256).hexdigest()
        headers["authorization"] = (
            f"AWS4-HMAC-SHA256 Credential={self.access_key}/{scope}, "
            f"SignedHeaders={signed}, Signature={signature}")
        return headers

    def _request(self, method: str, key: str = "", query: list[tuple[str, str]] | None = None,
                 payload: bytes = b"") -> httpx.Response:
        query = query or []
        path = f"/{self.bucket}/{key}" if key else f"/{self.bucket}"
        headers = self._signed_headers(method, path, query, payload)
        url = self.endpoint + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        resp = self._client.request(method, url, headers=headers,
                                    content=payload if method == "PUT" else None)
        return resp

    def put(self, key: str, data: bytes) -> None:
        resp = self._request("PUT", _check_key(key), payload=data)
        if resp.status_code not in (200, 201):
            raise StoreError(f"S3 put {key!r} failed: {resp.status_code}")

    def get(self, key: str) -> bytes:
        resp = self._request("GET", _check_key(key))
        if resp.status_code == 404:
            raise StoreError(f"no such object {key!r}")
        if resp.status_code != 200:
            raise StoreError(f"S3 get {key!r} failed: {resp.status_code}")
        return resp.content

    def exists(self, key: str) -> bool:
        resp = self._request("HEAD", _check_key(key))
        return resp.status_code == 200

    def list_keys(self, prefix: str = "") -> list[str]:
        keys: list[str] = []
        token: str | None = None
        while True:
            query = [("list-type", "2"), ("prefix", prefix)]
            if token:
                query.append(("continuation-token", token))
            resp = self._request("GET", "", query=query)
            if resp.status_code != 200:
                raise StoreError(f"S3 list failed: {resp.status_code}")
            ns = {"s3": "http://s3.amazonaws.com/doc/2006-03-01/"}
            root = ET.fromstring(resp.content)
            for contents in root.findall("s3:Contents", ns) or root.findall("Contents"):
                k = contents.find("s3:Key", ns)
                if k is None:
                    k = contents.find("Key")
                if k is not None and k.text:
                    keys.append(k.text)
            nxt = root.find("s3:NextContinuationToken", ns)
            if nxt is None:
                nxt = root.find("NextContinuationToken")
            if nxt is None or not nxt.text:
                break
            token = nxt.text
        return sorted(keys)

    def delete(self, key: str) -> None:
        resp = self._request("DELETE", _check_key(key))
        if resp.status_code not in (200, 204, 404):
            raise StoreError(f"S3 delete {key!r} failed: {resp.status_code}")


def store_from_url(url: str) -> ObjectStore:
    """Build a store from a path or an s3:// URL.

    ``s3://bucket?endpoint=https://host`` uses STORE_ACCESS_KEY and
    STORE_SECRET_KEY from the environment.  Anything else is a local
    directory path.
    """
    if url.startswith("s3://"):
        parsed = urllib.parse.urlparse(url)
        params = dict(urllib.parse.parse_qsl(parsed.query))
        endpoint = params.get("endpoint")
        if not endpoint:
            raise StoreError("s3 store URL requires ?endpoint=")
        return S3Store(
            endpoint=endpoint,
            bucket=parsed.netloc,
            access_key=os.environ.get("STORE_ACCESS_KEY", ""),
            secret_key=os.environ.get("STORE_SECRET_KEY", ""),
            region=params.get("region", "us-east-1"),
        )
    return LocalStore(url)
