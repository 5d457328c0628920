"""Interaction and content-feature ingestion, filtering, splitting, synthesis.

Interactions come in as UTF-8 TSV ("user<TAB>item" per line, '#' comments),
get densely re-indexed to 0-based contiguous integers, and are held as
per-user sorted item-index arrays. Content features are one float matrix
per modality, row-aligned with the item index space.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .fmx import MAGIC_F32, MAGIC_F64, load_matrix, save_matrix


@dataclass
class InteractionMatrix:
    """Sparse binary user x item matrix with per-user row access."""

    num_users: int
    num_items: int
    rows: list[np.ndarray]
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.rows) != self.num_users:
            raise DataError("row count does not match num_users")
        for r in self.rows:
            if r.size and (r[-1] >= self.num_items or r[0] < 0):
                raise DataError("item index out of range")
            if r.size > 1 and not np.all(np.diff(r) > 0):
                raise DataError("row items must be strictly increasing")
        if not self.user_ids:
            self.user_ids = [f"u{k}" for k in range(self.num_users)]
        if not self.item_ids:
            self.item_ids = [f"i{k}" for k in range(self.num_items)]

    @property
    def total(self) -> int:
        return sum(r.size for r in self.rows)

    @property
    def density(self) -> float:
        cells = self.num_users * self.num_items
        return self.total / cells if cells else 0.0

    def degrees(self) -> np.ndarray:
        return np.array([r.size for r in self.rows], dtype=np.int64)

    def item_degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_items, dtype=np.int64)
        for r in self.rows:
            deg[r] += 1
        return deg

    def to_dense(self, users=None) -> np.ndarray:
        """Dense 0/1 matrix for the given user indices (all users by default)."""
        idx = np.arange(self.num_users) if users is None else np.asarray(users)
        out = np.zeros((idx.size, self.num_items), dtype=np.float64)
        for pos, u in enumerate(idx):
            out[pos, self.rows[u]] = 1.0
        return out


@dataclass
class DatasetSplit:
    """Train/validation/test interaction matrices over one index space."""

    train: InteractionMatrix
    validation: InteractionMatrix
    test: InteractionMatrix

    def parts(self) -> dict[str, InteractionMatrix]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def load_interactions(path) -> InteractionMatrix:
    """Parse a user<TAB>item TSV into a densely indexed matrix.

    Ids are arbitrary strings and get 0-based indices in order of first
    appearance; duplicate pairs collapse to one interaction.
    """
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    pairs: set[tuple[int, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise DataError(f"{path}:{lineno}: expected 'user<TAB>item', got {line!r}")
            u = user_index.setdefault(fields[0], len(user_index))
            i = item_index.setdefault(fields[1], len(item_index))
            pairs.add((u, i))
    if not pairs:
        raise DataError(f"{path}: no interactions found")
    rows: list[list[int]] = [[] for _ in range(len(user_index))]
    for u, i in pairs:
        rows[u].append(i)
    return InteractionMatrix(
        num_users=len(user_index),
        num_items=len(item_index),
        rows=[np.array(sorted(r), dtype=np.int64) for r in rows],
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def save_interactions(path, r: InteractionMatrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(r.num_users):
            for i in r.rows[u]:
                fh.write(f"{r.user_ids[u]}\t{r.item_ids[i]}\n")


def k_core_filter(r: InteractionMatrix, k: int) -> InteractionMatrix:
    """Iteratively drop users and items with degree < k until a fixed point.

    The surviving index space is re-compacted; id lists follow along so the
    mapping back to raw ids survives filtering.
    """
    if k < 1:
        raise ConfigError(f"k-core requires k >= 1, got {k}")
    keep_u = np.ones(r.num_users, dtype=bool)
    keep_i = np.ones(r.num_items, dtype=bool)
    while True:
        user_deg = np.zeros(r.num_users, dtype=np.int64)
        item_deg = np.zeros(r.num_items, dtype=np.int64)
        for u in range(r.num_users):
            if not keep_u[u]:
                continue
            alive = r.rows[u][keep_i[r.rows[u]]]
            user_deg[u] = alive.size
            item_deg[alive] += 1
        new_u = keep_u & (user_deg >= k)
        new_i = keep_i & (item_deg >= k)
        if np.array_equal(new_u, keep_u) and np.array_equal(new_i, keep_i):
            break
        keep_u, keep_i = new_u, new_i
    if not keep_u.any() or not keep_i.any():
        raise DataError(f"{k}-core filtering removed every user or item")
    item_map = -np.ones(r.num_items, dtype=np.int64)
    item_map[keep_i] = np.arange(int(keep_i.sum()))
    rows = []
    user_ids = []
    for u in range(r.num_users):
        if not keep_u[u]:
            continue
        alive = r.rows[u][keep_i[r.rows[u]]]
        rows.append(item_map[alive])
        user_ids.append(r.user_ids[u])
    item_ids = [r.item_ids[i] for i in range(r.num_items) if keep_i[i]]
    return InteractionMatrix(len(rows), len(item_ids), rows, user_ids, item_ids)


def split(r: InteractionMatrix, ratios: tuple[float, float, float], seed: int) -> DatasetSplit:
    """Per-user random partition into train/validation/test.

    Users with fewer than 3 interactions keep everything in train. Other
    users donate max(1, floor(ratio * degree)) items to validation and to
    test; the rest stays in train, so every user keeps >= 1 training item.
    """
    if len(ratios) != 3 or any(x <= 0 for x in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three positives summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    tr_rows, va_rows, te_rows = [], [], []
    for u in range(r.num_users):
        items = r.rows[u]
        n = items.size
        if n < 3:
            tr_rows.append(items.copy())
            va_rows.append(np.empty(0, dtype=np.int64))
            te_rows.append(np.empty(0, dtype=np.int64))
            continue
        n_val = max(1, int(ratios[1] * n))
        n_test = max(1, int(ratios[2] * n))
        perm = rng.permutation(n)
        va_rows.append(np.sort(items[perm[:n_val]]))
        te_rows.append(np.sort(items[perm[n_val:n_val + n_test]]))
        tr_rows.append(np.sort(items[perm[n_val + n_test:]]))
    mk = lambda rows: InteractionMatrix(
        r.num_users, r.num_items, rows, list(r.user_ids), list(r.item_ids)
    )
    return DatasetSplit(train=mk(tr_rows), validation=mk(va_rows), test=mk(te_rows))


def synthesize(
    num_users: int,
    num_items: int,
    num_clusters: int,
    noise_rate: float,
    feature_dim: int,
    seed: int,
) -> tuple[InteractionMatrix, np.ndarray, np.ndarray]:
    """Cluster-structured synthetic dataset for desk-scale runs.

    Users and items are assigned round-robin to latent clusters. Each of a
    user's interactions lands on a same-cluster item except with probability
    ``noise_rate``, where it hits a uniformly random other-cluster item.
    Visual/textual features are cluster centroids plus Gaussian jitter, so
    both modalities genuinely predict behavior (unless num_clusters == 1).
    """
    if min(num_users, num_items, num_clusters, feature_dim) < 1:
        raise ConfigError("all synthesize counts must be positive")
    if not 0.0 <= noise_rate < 0.5:
        raise ConfigError(f"noise_rate must be in [0, 0.5), got {noise_rate}")
    if num_clusters > num_items:
        raise ConfigError("more clusters than items")
    rng = np.random.default_rng(seed)
    user_cluster = np.arange(num_users) % num_clusters
    item_cluster = np.arange(num_items) % num_clusters
    pools = [np.flatnonzero(item_cluster == c) for c in range(num_clusters)]
    all_items = np.arange(num_items)

    rows = []
    for u in range(num_users):
        same = pools[user_cluster[u]]
        other = all_items[item_cluster != user_cluster[u]]
        base = max(4, int(round(0.30 * same.size)))
        deg = int(np.clip(rng.poisson(base), 3, same.size + other.size))
        n_cross = int(rng.binomial(deg, noise_rate)) if other.size else 0
        n_cross = min(n_cross, other.size)
        n_same = min(deg - n_cross, same.size)
        picked = [rng.choice(same, size=n_same, replace=False)]
        if n_cross:
            picked.append(rng.choice(other, size=n_cross, replace=False))
        rows.append(np.sort(np.concatenate(picked)).astype(np.int64))

    def modality_features() -> np.ndarray:
        centroids = rng.normal(size=(num_clusters, feature_dim))
        jitter = 0.3 * rng.normal(size=(num_items, feature_dim))
        return centroids[item_cluster] + jitter

    interactions = InteractionMatrix(num_users, num_items, rows)
    return interactions, modality_features(), modality_features()


def inject_noise(r: InteractionMatrix, fraction: float, seed: int) -> InteractionMatrix:
    """Add ceil(fraction * degree) random false-positive items per user."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"noise fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(r.num_users):
        items = r.rows[u]
        spare = np.setdiff1d(np.arange(r.num_items), items, assume_unique=False)
        extra = int(np.ceil(fraction * items.size))
        if extra == 0 or spare.size == 0:
            rows.append(items.copy())
            continue
        added = rng.choice(spare, size=min(extra, spare.size), replace=False)
        rows.append(np.sort(np.concatenate([items, added])))
    return InteractionMatrix(r.num_users, r.num_items, rows, list(r.user_ids), list(r.item_ids))


def load_features(path, num_items: int | None = None) -> np.ndarray:
    """Read a feature matrix from headerless CSV or an FMX binary file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic in (MAGIC_F32, MAGIC_F64):
        values = load_matrix(path)
    else:
        try:
            values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise DataError(f"{path}: not a float CSV or FMX file: {exc}") from exc
    if num_items is not None and values.shape[0] != num_items:
        raise DataError(
            f"{path}: {values.shape[0]} feature rows but {num_items} items expected"
        )
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite feature values")
    return values


def save_features(path, values: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, values, delimiter=",", fmt="%.9g")
    else:
        save_matrix(path, values, dtype="f4")


def save_split(out_dir, ds: DatasetSplit, seed: int, ratios) -> None:
    """Persist three TSVs plus a JSON manifest describing the index space."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = {"train": ds.train, "validation": ds.validation, "test": ds.test}
    for name, part in names.items():
        save_interactions(out / f"{name}.tsv", part)
    manifest = {
        "seed": seed,
        "ratios": list(ratios),
        "counts": {name: part.total for name, part in names.items()},
        "num_users": ds.train.num_users,
        "num_items": ds.train.num_items,
        "user_ids": list(ds.train.user_ids),
        "item_ids": list(ds.train.item_ids),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_split(in_dir) -> tuple[DatasetSplit, dict]:
    """Load a persisted split; the manifest pins the shared index space."""
    d = Path(in_dir)
    try:
        with open(d / "manifest.json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"{d}: missing manifest.json") from exc
    user_pos = {uid: k for k, uid in enumerate(manifest["user_ids"])}
    item_pos = {iid: k for k, iid in enumerate(manifest["item_ids"])}
    num_users, num_items = manifest["num_users"], manifest["num_items"]

    def read_part(name: str) -> InteractionMatrix:
        path = d / f"{name}.tsv"
        if not path.exists():
            raise DataError(f"{d}: missing {name}.tsv")
        rows: list[list[int]] = [[] for _ in range(num_users)]
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or fields[0] not in user_pos or fields[1] not in item_pos:
                    raise DataError(f"{path}:{lineno}: id not in manifest: {line!r}")
                rows[user_pos[fields[0]]].append(item_pos[fields[1]])
        return InteractionMatrix(
            num_users,
            num_items,
            [np.array(sorted(set(r)), dtype=np.int64) for r in rows],
            list(manifest["user_ids"]),
            list(manifest["item_ids"]),
        )

    ds = DatasetSplit(
        train=read_part("train"),
        validation=read_part("validation"),
        test=read_part("test"),
    )
    return ds, manifest
