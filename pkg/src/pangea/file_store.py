"""Per-set persistent storage.

Each locality set owns one data file per stripe directory (a stripe stands in
for a disk) plus one meta file indexing page locations. All disk traffic of
the engine flows through here so the byte counters are exact; they are the
benchmark metric.

Meta file layout (little-endian):
    magic "PGMF" | body | crc32(body) u32
    body = version u32 | set_id u64 | page_size u64 | entry_count u64
           | entries: {page_seq u64, stripe u32, offset u64} ...

Durability is flush-based buffered I/O: platform-specific unbuffered modes
are deliberately not relied on, byte counters rather than wall time are the
contract.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import CorruptMeta, IoFailure, PageNotOnDisk, SizeMismatch

META_MAGIC = b"PGMF"
META_VERSION = 1
_HEADER = struct.Struct("<IQQQ")   # version, set_id, page_size, entry_count
_ENTRY = struct.Struct("<QIQ")     # page_seq, stripe, offset


@dataclass
class SetFile:
    """One logical file instance: striped data files plus the page index."""

    set_id: int
    page_size: int
    stripes: list[str]
    index: dict[int, tuple[int, int]] = field(default_factory=dict)
    write_bytes: int = 0
    read_bytes: int = 0
    _stripe_sizes: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self._stripe_sizes:
            self._stripe_sizes = [0] * len(self.stripes)

    def data_path(self, stripe: int) -> str:
        return os.path.join(self.stripes[stripe], f"{self.set_id}.data.{stripe}")

    def meta_path(self) -> str:
        return os.path.join(self.stripes[0], f"{self.set_id}.meta")

    @property
    def pages_on_disk(self) -> int:
        return len(self.index)


class FileStore:
    """Owns the SetFile instances of one node; all I/O and counters live here."""

    def __init__(self, stripe_dirs: list[str],
                 event_hook: Optional[Callable[[str, int, int], None]] = None):
        if not stripe_dirs:
            raise IoFailure("at least one storage directory is required")
        self.stripe_dirs = [os.path.abspath(d) for d in stripe_dirs]
        for d in self.stripe_dirs:
            os.makedirs(d, exist_ok=True)
        self._files: dict[int, SetFile] = {}
        # event_hook(kind, set_id, page_seq) feeds the engine's audit log
        self._event_hook = event_hook
        self.total_write_bytes = 0
        self.total_read_bytes = 0

    def register_set(self, set_id: int, page_size: int) -> SetFile:
        sf = SetFile(set_id=set_id, page_size=page_size, stripes=self.stripe_dirs)
        self._files[set_id] = sf
        return sf

    def get(self, set_id: int) -> SetFile:
        return self._files[set_id]

    def has_set(self, set_id: int) -> bool:
        return set_id in self._files

    def append_page(self, set_id: int, page_seq: int, data: bytes) -> None:
        """Write one page image, placing new pages round-robin across stripes."""
        sf = self._files[set_id]
        if len(data) != sf.page_size:
            raise SizeMismatch(
                f"set {set_id}: page image is {len(data)} bytes, expected {sf.page_size}"
            )
        if page_seq in sf.index:
            stripe, offset = sf.index[page_seq]
        else:
            stripe = page_seq % len(sf.stripes)
            offset = sf._stripe_sizes[stripe]
        try:
            with open(sf.data_path(stripe), "r+b" if os.path.exists(sf.data_path(stripe)) else "wb") as f:
                f.seek(offset)
                f.write(data)
                f.flush()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        if page_seq not in sf.index:
            sf.index[page_seq] = (stripe, offset)
            sf._stripe_sizes[stripe] = max(sf._stripe_sizes[stripe], offset + sf.page_size)
        sf.write_bytes += sf.page_size
        self.total_write_bytes += sf.page_size
        if self._event_hook:
            self._event_hook("disk_write", set_id, page_seq)
        self.persist_meta(set_id)

    def read_page(self, set_id: int, page_seq: int) -> bytes:
        sf = self._files[set_id]
        if page_seq not in sf.index:
            raise PageNotOnDisk(f"set {set_id} page {page_seq}")
        stripe, offset = sf.index[page_seq]
        try:
            with open(sf.data_path(stripe), "rb") as f:
                f.seek(offset)
                data = f.read(sf.page_size)
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        if len(data) != sf.page_size:
            raise IoFailure(f"short read for set {set_id} page {page_seq}")
        sf.read_bytes += sf.page_size
        self.total_read_bytes += sf.page_size
        if self._event_hook:
            self._event_hook("disk_read", set_id, page_seq)
        return data

    def has_page(self, set_id: int, page_seq: int) -> bool:
        sf = self._files.get(set_id)
        return sf is not None and page_seq in sf.index

    def persist_meta(self, set_id: int) -> None:
        sf = self._files[set_id]
        body = bytearray(_HEADER.pack(META_VERSION, sf.set_id, sf.page_size, len(sf.index)))
        for seq in sorted(sf.index):
            stripe, offset = sf.index[seq]
            body += _ENTRY.pack(seq, stripe, offset)
        crc = zlib.crc32(bytes(body))
        tmp = sf.meta_path() + ".tmp"
        try:
            with open(tmp, "wb") as f:
                f.write(META_MAGIC + bytes(body) + struct.pack("<I", crc))
                f.flush()
            os.replace(tmp, sf.meta_path())
        except OSError as exc:
            raise IoFailure(str(exc)) from exc

    def load_meta(self, set_id: int) -> SetFile:
        """Rebuild a SetFile from its meta file; counters restart at zero."""
        path = os.path.join(self.stripe_dirs[0], f"{set_id}.meta")
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as exc:
            raise IoFailure(str(exc)) from exc
        if len(raw) < len(META_MAGIC) + _HEADER.size + 4:
            raise CorruptMeta("meta file truncated")
        if raw[:4] != META_MAGIC:
            raise CorruptMeta("bad magic")
        body, crc_raw = raw[4:-4], raw[-4:]
        if zlib.crc32(body) != struct.unpack("<I", crc_raw)[0]:
            raise CorruptMeta("checksum mismatch")
        version, sid, page_size, count = _HEADER.unpack_from(body, 0)
        if version != META_VERSION:
            raise CorruptMeta(f"unsupported version {version}")
        if sid != set_id:
            raise CorruptMeta(f"meta belongs to set {sid}, expected {set_id}")
        expected_len = _HEADER.size + count * _ENTRY.size
        if len(body) != expected_len:
            raise CorruptMeta("entry section length mismatch")
        index = {}
        stripe_sizes = [0] * len(self.stripe_dirs)
        for i in range(count):
            seq, stripe, offset = _ENTRY.unpack_from(body, _HEADER.size + i * _ENTRY.size)
            if offset % page_size != 0:
                raise CorruptMeta(f"offset {offset} not page aligned")
            index[seq] = (stripe, offset)
            if stripe < len(stripe_sizes):
                stripe_sizes[stripe] = max(stripe_sizes[stripe], offset + page_size)
        sf = SetFile(set_id=set_id, page_size=page_size, stripes=self.stripe_dirs,
                     index=index, _stripe_sizes=stripe_sizes)
        self._files[set_id] = sf
        return sf

    def delete_set(self, set_id: int) -> None:
        sf = self._files.pop(set_id, None)
        if sf is None:
            return
        for stripe in range(len(sf.stripes)):
            try:
                os.remove(sf.data_path(stripe))
            except FileNotFoundError:
                pass
        try:
            os.remove(sf.meta_path())
        except FileNotFoundError:
            pass

    def known_meta_sets(self) -> list[int]:
        """Set ids that have a meta file in stripe 0 (used on restart)."""
        out = []
        for name in os.listdir(self.stripe_dirs[0]):
            if name.endswith(".meta"):
                try:
                    out.append(int(name.split(".")[0]))
                except ValueError:
                    continue
        return sorted(out)
