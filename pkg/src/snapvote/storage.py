"""Binary containers for snapshots, pretrained stacks and forests.

All integers are little-endian. A matrix is stored as ``rows u64, cols u64``
followed by ``rows*cols`` little-endian float64 values in row-major order.

Snapshot file::

    "SNAP" | version u32 | epoch u32 | matrix count u32 | matrices...

Pretrained stack::

    "DAES" | version u32 | layer count u32 |
    per layer: tied u32 | corruption f64 | matrix count u32 | matrices...
    (W, encoder bias 1 x h, decoder bias 1 x d, [untied decoder W])

Forest::

    "FRST" | version u32 | tree count u32 | K u32 | feature count u32 |
    per tree: node count u32 | nodes...
    internal node: 0 u8 | feature u32 | threshold f64 | left u32 | right u32
    leaf node:     1 u8 | K x u64 class counts

Scaler::

    "SCAL" | version u32 | 2 u32 | low (1 x d) | high (1 x d)

A run directory holds a JSON ``manifest`` plus ``snapshots/epoch_NNNNNN.bin``.
"""

import json
import struct
from pathlib import Path

import numpy as np

from snapvote.errors import FormatError
from snapvote.forest import RandomForestModel, Tree
from snapvote.pretrain import DaeLayer, MinMaxScaler
from snapvote.trainer import Snapshot, SnapshotStore

VERSION = 1


def write_matrix(fh, M):
    M = np.ascontiguousarray(M, dtype="<f8")
    if M.ndim != 2:
        raise FormatError(f"only 2-D matrices can be stored, got {M.ndim}-D")
    fh.write(struct.pack("<QQ", *M.shape))
    fh.write(M.tobytes())


def read_matrix(fh):
    rows, cols = _unpack(fh, "<QQ")
    n = rows * cols * 8
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated matrix payload")
    return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)


def _unpack(fh, fmt):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError("unexpected end of file")
    return struct.unpack(fmt, buf)


def _header(fh, magic):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = _unpack(fh, "<I")
    if version != VERSION:
        raise FormatError(f"unsupported {magic.decode()} version {version}")


def write_snapshot(path, snapshot):
    named = snapshot.matrices()
    with open(path, "wb") as fh:
        fh.write(b"SNAP")
        fh.write(struct.pack("<III", VERSION, snapshot.epoch, len(named)))
        for _, M in named:
            write_matrix(fh, M)
    return [name for name, _ in named]


def read_snapshot(path, names, valid_error):
    with open(path, "rb") as fh:
        _header(fh, b"SNAP")
        epoch, count = _unpack(fh, "<II")
        if count != len(names):
            raise FormatError(f"{path}: {count} matrices but manifest names {len(names)}")
        mats = [read_matrix(fh) for _ in range(count)]
    return Snapshot.from_matrices(epoch, valid_error, zip(names, mats))


def save_store(store, run_dir, extra=None):
    """Write snapshots and the run manifest. ``extra`` keys join the manifest."""
    run_dir = Path(run_dir)
    snap_dir = run_dir / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in store:
        fname = f"epoch_{s.epoch:06d}.bin"
        names = write_snapshot(snap_dir / fname, s)
        entries.append({"epoch": s.epoch, "file": f"snapshots/{fname}",
                        "valid_error": s.valid_error, "matrices": names})
    manifest = dict(extra or {})
    manifest.update({"run_id": store.run_id, "fingerprint": store.fingerprint,
                     "epochs": store.epochs, "snapshots": entries})
    write_manifest(run_dir, manifest)
    return manifest


def write_manifest(run_dir, manifest):
    text = json.dumps(manifest, sort_keys=True, indent=2)
    (Path(run_dir) / "manifest").write_text(text + "\n")


def read_manifest(run_dir):
    path = Path(run_dir) / "manifest"
    if not path.exists():
        raise FormatError(f"no manifest in {run_dir}")
    return json.loads(path.read_text())


def load_store(run_dir):
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    store = SnapshotStore(manifest["run_id"], manifest["fingerprint"])
    for entry in manifest["snapshots"]:
        snap = read_snapshot(run_dir / entry["file"], entry["matrices"], entry["valid_error"])
        if snap.epoch != entry["epoch"]:
            raise FormatError(f"{entry['file']}: header epoch {snap.epoch} != {entry['epoch']}")
        store.add(snap)
    return store


def save_daes(path, daes):
    with open(path, "wb") as fh:
        fh.write(b"DAES")
        fh.write(struct.pack("<II", VERSION, len(daes)))
        for d in daes:
            mats = [d.W, d.b_enc[None, :], d.b_dec[None, :]]
            if not d.tied:
                mats.append(d.W_dec)
            fh.write(struct.pack("<IdI", int(d.tied), d.corruption_level, len(mats)))
            for M in mats:
                write_matrix(fh, M)


def load_daes(path):
    with open(path, "rb") as fh:
        _header(fh, b"DAES")
        (n_layers,) = _unpack(fh, "<I")
        daes = []
        for _ in range(n_layers):
            tied, level, count = _unpack(fh, "<IdI")
            mats = [read_matrix(fh) for _ in range(count)]
            if count != (3 if tied else 4):
                raise FormatError(f"DAE record with tied={tied} has {count} matrices")
            W_dec = None if tied else mats[3]
            daes.append(DaeLayer(mats[0], mats[1][0], mats[2][0], W_dec, level))
    return daes


def save_scaler(path, scaler):
    with open(path, "wb") as fh:
        fh.write(b"SCAL")
        fh.write(struct.pack("<II", VERSION, 2))
        write_matrix(fh, scaler.low[None, :])
        write_matrix(fh, scaler.high[None, :])


def load_scaler(path):
    with open(path, "rb") as fh:
        _header(fh, b"SCAL")
        (count,) = _unpack(fh, "<I")
        if count != 2:
            raise FormatError(f"scaler file holds {count} matrices, expected 2")
        low, high = read_matrix(fh)[0], read_matrix(fh)[0]
    return MinMaxScaler(low, high)


def save_forest(path, model):
    K = model.n_classes
    with open(path, "wb") as fh:
        fh.write(b"FRST")
        fh.write(struct.pack("<IIII", VERSION, len(model.trees), K, model.n_features))
        for tree in model.trees:
            fh.write(struct.pack("<I", tree.n_nodes))
            for i in range(tree.n_nodes):
                if tree.feature[i] < 0:
                    fh.write(struct.pack("<B", 1))
                    fh.write(struct.pack(f"<{K}Q", *tree.counts[i]))
                else:
                    fh.write(struct.pack("<BIdII", 0, tree.feature[i], tree.threshold[i],
                                         tree.left[i], tree.right[i]))


def load_forest(path):
    with open(path, "rb") as fh:
        _header(fh, b"FRST")
        n_trees, K, n_features = _unpack(fh, "<III")
        trees = []
        for _ in range(n_trees):
            (n_nodes,) = _unpack(fh, "<I")
            feature = np.full(n_nodes, -1, dtype=np.int64)
            threshold = np.zeros(n_nodes)
            left = np.full(n_nodes, -1, dtype=np.int64)
            right = np.full(n_nodes, -1, dtype=np.int64)
            counts = np.zeros((n_nodes, K), dtype=np.int64)
            for i in range(n_nodes):
                (is_leaf,) = _unpack(fh, "<B")
                if is_leaf:
                    counts[i] = _unpack(fh, f"<{K}Q")
                else:
                    feature[i], threshold[i], left[i], right[i] = _unpack(fh, "<IdII")
            trees.append(Tree(feature, threshold, left, right, counts))
    return RandomForestModel(trees, K, n_features)
