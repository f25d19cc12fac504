"""Dataset construction and handling.

Crescent-moons synthetic generator with the two dimensionality
expansions (random linear lift, appended white-noise channels), CSV and
IDX loaders, stratified splitting, z-score standardization, one-hot
encoding, and classification metrics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .numerics import RandomSource


class CsvError(InvalidArgumentError):
    """Base for delimited-text loading problems."""


class CsvParseError(CsvError):
    """A cell or row that cannot be parsed; carries file coordinates."""

    def __init__(self, message, *, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class MissingColumnError(CsvError):
    """The requested label column is not in the header."""


class IdxError(InvalidArgumentError):
    """Base for IDX binary-format problems."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Paired continuous features and one-hot labels.

    yr: (N, D) real matrix; yc: (N, K) one-hot; names give the label
    classes and feature columns their stable order.
    """

    yr: np.ndarray
    yc: np.ndarray
    label_names: tuple
    feature_names: tuple

    def __post_init__(self):
        yr = np.asarray(self.yr, dtype=float)
        yc = np.asarray(self.yc, dtype=float)
        object.__setattr__(self, "yr", yr)
        object.__setattr__(self, "yc", yc)
        object.__setattr__(self, "label_names", tuple(self.label_names))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if yr.ndim != 2 or yc.ndim != 2 or yr.shape[0] != yc.shape[0]:
            raise InvalidArgumentError(
                f"features {yr.shape} and labels {yc.shape} must share rows"
            )
        if not np.all(np.isfinite(yr)):
            raise InvalidArgumentError("features contain non-finite entries")
        if not np.all((yc == 0) | (yc == 1)) or not np.all(yc.sum(axis=1) == 1):
            raise InvalidArgumentError("label matrix must be strictly one-hot")
        if len(self.label_names) != yc.shape[1]:
            raise InvalidArgumentError("label name count does not match label width")
        if len(self.feature_names) != yr.shape[1]:
            raise InvalidArgumentError("feature name count does not match feature width")

    @property
    def n(self) -> int:
        return self.yr.shape[0]

    @property
    def d(self) -> int:
        return self.yr.shape[1]

    @property
    def k(self) -> int:
        return self.yc.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.yc, axis=1)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.yr[rows], self.yc[rows], self.label_names, self.feature_names)


def one_hot(labels, k: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError("labels must be a 1-D integer vector")
    if k is None:
        k = int(labels.max()) + 1 if labels.size else 0
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidArgumentError(f"labels must lie in [0, {k})")
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def labels_from_one_hot(yc) -> np.ndarray:
    return np.argmax(np.asarray(yc), axis=1)


def make_dataset(yr, labels, label_names=None, feature_names=None) -> Dataset:
    """Bundle a feature matrix and integer labels, inventing names as needed."""
    yr = np.asarray(yr, dtype=float)
    yc = one_hot(np.asarray(labels))
    if label_names is None:
        label_names = tuple(f"class-{i}" for i in range(yc.shape[1]))
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(yr.shape[1]))
    return Dataset(yr, yc, label_names, feature_names)


# -- synthetic generators ------------------------------------------------

def make_moons(n: int, noise_std: float, seed: int):
    """Two interleaving unit half-circles, n/2 points each.

    The first arc is the upper unit semicircle; the second is the first
    flipped and shifted by (1, -0.5). Returns ((n, 2) points, labels).
    """
    if n % 2 != 0:
        raise InvalidArgumentError(f"sample count must be even, got {n}")
    if n < 2:
        raise InvalidArgumentError("need at least one point per class")
    if noise_std < 0:
        raise InvalidArgumentError("noise level must be >= 0")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    first = np.column_stack([np.cos(t), np.sin(t)])
    second = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.vstack([first, second])
    points = points + noise_std * RandomSource(seed).normal(points.shape)
    labels = np.repeat([0, 1], half)
    return points, labels


def expand_linear(base, target_dim: int, seed: int, *, basis=None) -> np.ndarray:
    """Lift low-dimensional points through a random linear map base @ Wt.

    W is (target_dim, base_dim), standard normal under the seed; the
    output rank never exceeds the base dimension. `basis` substitutes a
    hand-constructed W.
    """
    base = np.asarray(base, dtype=float)
    if base.ndim != 2:
        raise InvalidArgumentError("base must be a 2-D matrix")
    if target_dim < base.shape[1]:
        raise InvalidArgumentError(
            f"target dimension {target_dim} is below the base width {base.shape[1]}"
        )
    if basis is None:
        basis = RandomSource(seed).normal((target_dim, base.shape[1]))
    else:
        basis = np.asarray(basis, dtype=float)
        if basis.shape != (target_dim, base.shape[1]):
            raise InvalidArgumentError(
                f"basis shape {basis.shape} must be ({target_dim}, {base.shape[1]})"
            )
    return base @ basis.T


def expand_noise_channels(base, seed: int) -> np.ndarray:
    """Append one unit-variance white-noise column per existing column.

    The new columns carry no label information by construction, which is
    what makes them useful for relevance-detection tests.
    """
    base = np.asarray(base, dtype=float)
    if base.ndim != 2:
        raise InvalidArgumentError("base must be a 2-D matrix")
    noise = RandomSource(seed).normal(base.shape)
    return np.hstack([base, noise])


def synthetic_moons_dataset(total_dim: int, n: int = 500, noise_std: float = 0.1,
                            seed: int = 0) -> Dataset:
    """The full synthetic recipe: moons -> linear lift to total_dim/2 ->
    noise channels doubling to total_dim."""
    if total_dim % 2 != 0 or total_dim < 4:
        raise InvalidArgumentError(f"total dimension must be even and >= 4, got {total_dim}")
    src = RandomSource(seed)
    points, labels = make_moons(n, noise_std, _derive_seed(src, "moons"))
    lifted = expand_linear(points, total_dim // 2, _derive_seed(src, "lift"))
    full = expand_noise_channels(lifted, _derive_seed(src, "noise-channels"))
    return make_dataset(full, labels, label_names=("moon-0", "moon-1"))


def _derive_seed(src: RandomSource, label: str) -> int:
    # Stage seeds come off labeled substreams so each stage stays
    # reproducible on its own.
    return int(src.substream(label).integers(0, 2**63 - 1))


# -- delimited text ------------------------------------------------------

def save_csv(path, yr, labels, label_names, feature_names, header_comments=()):
    """Write the standard layout: optional '#' comment lines, a header
    row of feature names plus 'label', then one row per sample with the
    class written by name."""
    yr = np.asarray(yr, dtype=float)
    labels = np.asarray(labels)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header_comments:
            f.write(f"# {line}\n")
        writer = csv.writer(f)
        writer.writerow(list(feature_names) + ["label"])
        for row, lab in zip(yr, labels):
            writer.writerow([repr(float(v)) for v in row] + [label_names[int(lab)]])


def load_csv(path, label_column: str = "label") -> Dataset:
    """Parse the layout written by save_csv (or any conforming export).

    Lines starting with '#' are provenance comments and are skipped.
    Bad cells are reported with their 1-based file line number and
    column name; rows with empty cells are rejected the same way.
    """
    with open(path, encoding="utf-8") as f:
        numbered = [(i + 1, line) for i, line in enumerate(f)]
    rows = []
    for lineno, line in numbered:
        if line.startswith("#") or not line.strip():
            continue
        rows.append((lineno, next(csv.reader([line]))))
    if not rows:
        raise CsvParseError(f"{path}: no header row found")
    header_line, header = rows[0]
    if label_column not in header:
        raise MissingColumnError(
            f"{path}: label column {label_column!r} not in header {header}"
        )
    label_pos = header.index(label_column)
    feature_names = tuple(name for i, name in enumerate(header) if i != label_pos)

    features, raw_labels = [], []
    for lineno, cells in rows[1:]:
        if len(cells) != len(header):
            raise CsvParseError(
                f"{path}: line {lineno} has {len(cells)} cells, header has {len(header)}",
                line=lineno,
            )
        empties = [header[i] for i, c in enumerate(cells) if c.strip() == ""]
        if empties:
            raise CsvParseError(
                f"{path}: line {lineno} has missing values in {empties}",
                line=lineno, column=empties[0],
            )
        vals = []
        for i, cell in enumerate(cells):
            if i == label_pos:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvParseError(
                    f"{path}: line {lineno}, column {header[i]!r}: "
                    f"cannot parse {cell!r} as a number",
                    line=lineno, column=header[i],
                ) from None
        features.append(vals)
        raw_labels.append(cells[label_pos])

    if not features:
        raise CsvParseError(f"{path}: no data rows")
    label_names = tuple(sorted(set(raw_labels)))
    lookup = {name: i for i, name in enumerate(label_names)}
    labels = np.array([lookup[r] for r in raw_labels])
    return make_dataset(np.array(features), labels,
                        label_names=label_names, feature_names=feature_names)


# -- IDX binary ----------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _read_idx_header(f, expected_magic: int, path):
    head = f.read(4)
    if len(head) < 4:
        raise IdxTruncatedError(f"{path}: file ends inside the magic number")
    magic = int.from_bytes(head, "big")
    if magic != expected_magic:
        raise IdxMagicError(
            f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    dims = []
    for _ in range(magic & 0xFF):
        raw = f.read(4)
        if len(raw) < 4:
            raise IdxTruncatedError(f"{path}: file ends inside the dimension header")
        dims.append(int.from_bytes(raw, "big"))
    return dims


def _read_idx_payload(f, count: int, path) -> np.ndarray:
    raw = f.read(count)
    if len(raw) < count:
        raise IdxTruncatedError(
            f"{path}: payload has {len(raw)} bytes, header promises {count}"
        )
    return np.frombuffer(raw, dtype=np.uint8)


def load_idx_images(images_path, labels_path, keep_digits=None,
                    max_per_digit: int | None = None) -> Dataset:
    """Image/label pair in the big-endian IDX layout.

    Pixels are flattened row-major and scaled to [0, 1]. Both headers
    are validated before either payload is touched, so a bad labels
    file fails fast. Filtering keeps the first occurrences in file
    order, which makes subsets deterministic.
    """
    with open(images_path, "rb") as f_img, open(labels_path, "rb") as f_lab:
        img_dims = _read_idx_header(f_img, _IDX_IMAGES_MAGIC, images_path)
        lab_dims = _read_idx_header(f_lab, _IDX_LABELS_MAGIC, labels_path)
        if img_dims[0] != lab_dims[0]:
            raise IdxCountMismatchError(
                f"{images_path} has {img_dims[0]} images but "
                f"{labels_path} has {lab_dims[0]} labels"
            )
        n, rows, cols = img_dims
        labels = _read_idx_payload(f_lab, n, labels_path).astype(int)
        pixels = _read_idx_payload(f_img, n * rows * cols, images_path)

    yr = pixels.reshape(n, rows * cols).astype(float) / 255.0
    if keep_digits is None:
        kept_digits = sorted(set(labels.tolist()))
    else:
        kept_digits = sorted(set(int(d) for d in keep_digits))
    digit_to_class = {d: i for i, d in enumerate(kept_digits)}

    take = []
    seen = {d: 0 for d in kept_digits}
    for i, lab in enumerate(labels):
        lab = int(lab)
        if lab not in digit_to_class:
            continue
        if max_per_digit is not None and seen[lab] >= max_per_digit:
            continue
        seen[lab] += 1
        take.append(i)
    take = np.array(take, dtype=int)
    new_labels = np.array([digit_to_class[int(labels[i])] for i in take])
    return make_dataset(
        yr[take], new_labels,
        label_names=tuple(f"digit-{d}" for d in kept_digits),
        feature_names=tuple(f"px{i}" for i in range(rows * cols)),
    )


# -- splits --------------------------------------------------------------

def split(data: Dataset, test_fraction: float, seed: int):
    """Stratified train/test index split, deterministic per seed."""
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgumentError(f"test fraction must be in (0, 1), got {test_fraction}")
    labels = data.labels
    rng = RandomSource(seed)
    train, test = [], []
    for c in range(data.k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        order = members[rng.permutation(members.size)]
        n_test = int(round(test_fraction * members.size))
        n_test = min(max(n_test, 1), members.size - 1) if members.size > 1 else n_test
        test.append(order[:n_test])
        train.append(order[n_test:])
    train = np.sort(np.concatenate(train))
    test = np.sort(np.concatenate(test))
    return train, test


def kfold(data: Dataset, k: int, seed: int):
    """Stratified k disjoint covering folds (lists of test-index arrays)."""
    if k < 2:
        raise InvalidArgumentError(f"fold count must be >= 2, got {k}")
    labels = data.labels
    rng = RandomSource(seed)
    buckets = [[] for _ in range(k)]
    for c in range(data.k):
        members = np.flatnonzero(labels == c)
        if 0 < members.size < k:
            raise InvalidArgumentError(
                f"class {c} has {members.size} members, fewer than {k} folds"
            )
        order = members[rng.permutation(members.size)]
        for i, idx in enumerate(order):
            buckets[i % k].append(idx)
    return [np.sort(np.array(b, dtype=int)) for b in buckets]


# -- standardization -----------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Per-feature z-score parameters; fit on the training split only."""

    mean: np.ndarray
    scale: np.ndarray


def fit_standardizer(rows) -> Standardizer:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise InvalidArgumentError("need a non-empty (N, D) matrix to fit")
    std = rows.std(axis=0)
    # Constant columns get unit scale so transforms stay invertible.
    scale = np.where(std < 1e-12, 1.0, std)
    return Standardizer(mean=rows.mean(axis=0), scale=scale)


def standardize(st: Standardizer, rows) -> np.ndarray:
    return (np.asarray(rows, dtype=float) - st.mean) / st.scale


def unstandardize(st: Standardizer, rows) -> np.ndarray:
    return np.asarray(rows, dtype=float) * st.scale + st.mean


# -- metrics -------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    """Macro-averaged classification quality plus the raw confusion counts.

    zero_division_classes lists classes whose precision, recall, or F1
    hit a 0/0 and were scored 0.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray
    zero_division_classes: tuple


def metrics(predicted, true, k: int | None = None) -> MetricsReport:
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.shape != true.shape or predicted.ndim != 1:
        raise InvalidArgumentError(
            f"prediction shape {predicted.shape} must match truth {true.shape}"
        )
    if predicted.size == 0:
        raise InvalidArgumentError("cannot score an empty prediction vector")
    if not (np.issubdtype(predicted.dtype, np.integer)
            and np.issubdtype(true.dtype, np.integer)):
        raise InvalidArgumentError("labels must be integer vectors")
    if k is None:
        k = int(max(predicted.max(), true.max())) + 1
    if predicted.min() < 0 or true.min() < 0 or max(predicted.max(), true.max()) >= k:
        raise InvalidArgumentError(f"labels must lie in [0, {k})")

    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (true, predicted), 1)

    tp = np.diag(confusion).astype(float)
    pred_totals = confusion.sum(axis=0).astype(float)
    true_totals = confusion.sum(axis=1).astype(float)

    flagged = set()
    precision = np.zeros(k)
    recall = np.zeros(k)
    f1 = np.zeros(k)
    for c in range(k):
        if pred_totals[c] > 0:
            precision[c] = tp[c] / pred_totals[c]
        else:
            flagged.add(c)
        if true_totals[c] > 0:
            recall[c] = tp[c] / true_totals[c]
        else:
            flagged.add(c)
        if precision[c] + recall[c] > 0:
            f1[c] = 2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        else:
            flagged.add(c)

    return MetricsReport(
        accuracy=float(tp.sum() / predicted.size),
        precision=float(precision.mean()),
        recall=float(recall.mean()),
        f1=float(f1.mean()),
        confusion=confusion,
        zero_division_classes=tuple(sorted(flagged)),
    )
