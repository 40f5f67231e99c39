import os

import pytest

from pangea.errors import CorruptMeta, PageNotOnDisk, SizeMismatch
from pangea.file_store import FileStore

PAGE = 4096


@pytest.fixture
def store(tmp_path):
    return FileStore([str(tmp_path / "d0"), str(tmp_path / "d1")])


def test_round_robin_striping(store):
    store.register_set(0, PAGE)
    store.append_page(0, 0, bytes(PAGE))
    store.append_page(0, 1, bytes(PAGE))
    store.append_page(0, 2, bytes(PAGE))
    sf = store.get(0)
    assert sf.index[0] == (0, 0)
    assert sf.index[1] == (1, 0)
    assert sf.index[2] == (0, PAGE)


def test_size_mismatch(store):
    store.register_set(0, PAGE)
    with pytest.raises(SizeMismatch):
        store.append_page(0, 0, bytes(PAGE - 1))


def test_read_round_trip_and_overwrite(store):
    store.register_set(0, PAGE)
    img1 = bytes([1]) * PAGE
    img2 = bytes([2]) * PAGE
    store.append_page(0, 0, img1)
    assert store.read_page(0, 0) == img1
    store.append_page(0, 0, img2)
    assert store.read_page(0, 0) == img2
    sf = store.get(0)
    assert sf.write_bytes == 2 * PAGE
    assert sf.read_bytes == 2 * PAGE


def test_read_missing_page(store):
    store.register_set(0, PAGE)
    with pytest.raises(PageNotOnDisk):
        store.read_page(0, 5)


def test_write_counter_is_exact(store):
    store.register_set(0, PAGE)
    for i in range(7):
        store.append_page(0, i, bytes(PAGE))
    assert store.get(0).write_bytes == 7 * PAGE
    assert store.total_write_bytes == 7 * PAGE


def test_meta_round_trip(tmp_path):
    store = FileStore([str(tmp_path / "d0"), str(tmp_path / "d1")])
    store.register_set(3, PAGE)
    for i in range(1000):
        store.append_page(3, i, i.to_bytes(2, "little") * (PAGE // 2))
    index_before = dict(store.get(3).index)

    fresh = FileStore([str(tmp_path / "d0"), str(tmp_path / "d1")])
    sf = fresh.load_meta(3)
    assert sf.index == index_before
    assert sf.write_bytes == 0 and sf.read_bytes == 0
    assert fresh.read_page(3, 999)[:2] == (999).to_bytes(2, "little")


def test_meta_empty_set(tmp_path):
    store = FileStore([str(tmp_path / "d")])
    store.register_set(1, PAGE)
    store.persist_meta(1)
    fresh = FileStore([str(tmp_path / "d")])
    assert fresh.load_meta(1).index == {}


def test_meta_truncated(tmp_path):
    store = FileStore([str(tmp_path / "d")])
    store.register_set(0, PAGE)
    store.append_page(0, 0, bytes(PAGE))
    path = store.get(0).meta_path()
    raw = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(raw[:len(raw) // 2])
    with pytest.raises(CorruptMeta):
        FileStore([str(tmp_path / "d")]).load_meta(0)


def test_meta_bad_magic(tmp_path):
    store = FileStore([str(tmp_path / "d")])
    store.register_set(0, PAGE)
    store.persist_meta(0)
    path = store.get(0).meta_path()
    raw = bytearray(open(path, "rb").read())
    raw[0] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(CorruptMeta):
        FileStore([str(tmp_path / "d")]).load_meta(0)


def test_meta_crc_mismatch(tmp_path):
    store = FileStore([str(tmp_path / "d")])
    store.register_set(0, PAGE)
    store.append_page(0, 0, bytes(PAGE))
    path = store.get(0).meta_path()
    raw = bytearray(open(path, "rb").read())
    raw[10] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(CorruptMeta):
        FileStore([str(tmp_path / "d")]).load_meta(0)


def test_delete_set_removes_files(store, tmp_path):
    store.register_set(0, PAGE)
    store.append_page(0, 0, bytes(PAGE))
    store.append_page(0, 1, bytes(PAGE))
    data0 = store.get(0).data_path(0)
    assert os.path.exists(data0)
    store.delete_set(0)
    assert not os.path.exists(data0)
    assert not store.has_set(0)
