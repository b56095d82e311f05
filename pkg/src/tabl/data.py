"""FI-2010 limit-order-book data: parsing, windows, splits and a synthetic generator.

FI-2010 text files hold one 149-value record per sample: 144 features
followed by 5 mid-price movement labels (horizons 10, 20, 30, 50, 100
events). The public distribution stores samples as *columns* (149 lines);
``orientation="auto"`` detects this by shape.

The first 40 features are the top 10 levels of the book, four values per
level: ask price, ask volume, bid price, bid volume.

Labels are stored 1=increase, 2=stationary, 3=decrease and mapped to internal
class indices 0, 1, 2 (configurable through ``label_map``).
"""

import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .loss_metrics import DEFAULT_C, N_CLASSES, ClassWeights

log = logging.getLogger(__name__)

N_FEATURES = 144
N_LABELS = 5
RECORD_LEN = N_FEATURES + N_LABELS
HORIZONS = (10, 20, 30, 50, 100)
LOB_DIMS = 40
HISTORY = 10
DEFAULT_LABEL_MAP = {1: 0, 2: 1, 3: 2}
CLASS_NAMES = ("increase", "stationary", "decrease")
ORIENTATIONS = ("auto", "rows", "cols")

CACHE_MAGIC = "TABL-DAYS"
CACHE_VERSION = 1


def mid_price(best_ask, best_bid):
    """Mean of best ask and best bid. A crossed book only logs a warning."""
    ask = float(best_ask)
    bid = float(best_bid)
    if not (math.isfinite(ask) and math.isfinite(bid)):
        raise ValidationError(f"prices must be finite, got ask={best_ask!r} bid={best_bid!r}")
    if ask < bid:
        log.warning("crossed book: best ask %s below best bid %s", ask, bid)
    return (ask + bid) / 2.0


def horizon_index(horizon):
    try:
        return HORIZONS.index(int(horizon))
    except (ValueError, TypeError):
        raise ValidationError(f"horizon must be one of {HORIZONS}, got {horizon!r}") from None


@dataclass
class Day:
    features: np.ndarray  # (n, 144)
    labels: np.ndarray  # (n, 5) internal class indices

    def __len__(self):
        return len(self.features)

    def __eq__(self, other):
        return (isinstance(other, Day) and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))


@dataclass
class LobDataset:
    days: list
    label_map: dict = None

    @property
    def total(self):
        return sum(len(d) for d in self.days)

    def __len__(self):
        return len(self.days)

    def __eq__(self, other):
        return isinstance(other, LobDataset) and self.days == other.days


def _tokens_to_floats(tokens, path, lineno):
    try:
        return np.array(tokens, dtype=np.float64)
    except ValueError:
        for tok in tokens:
            try:
                float(tok)
            except ValueError:
                raise DataError(f"non-numeric token {tok!r}", path, lineno) from None
        raise


def _read_lines(path):
    with open(path) as fh:
        lines = [(i, ln.split()) for i, ln in enumerate(fh, start=1)]
    return [(i, toks) for i, toks in lines if toks]


def _detect_orientation(lines, path):
    first = len(lines[0][1])
    if len(lines) == RECORD_LEN and first != RECORD_LEN:
        return "cols"
    if len(lines) == RECORD_LEN and first == RECORD_LEN:
        log.warning("%s: 149 x 149 block is ambiguous; assuming samples-as-columns", path)
        return "cols"
    if first == RECORD_LEN:
        return "rows"
    raise DataError(f"cannot detect orientation: {len(lines)} lines of {first} values, "
                    f"neither dimension is {RECORD_LEN}", path)


def _map_labels(raw, label_map, path, where):
    labels = np.empty(raw.shape, dtype=np.int64)
    for value, idx in label_map.items():
        labels[raw == value] = idx
    known = np.isin(raw, list(label_map))
    if not known.all():
        bad = np.argwhere(~known)[0]
        raise DataError(f"unknown label value {raw[tuple(bad)]!r} (expected {sorted(label_map)})",
                        path, where(bad))
    return labels


def parse_fi2010_file(path, orientation="auto", label_map=None):
    """Parse one whitespace-separated FI-2010 file into a :class:`Day`."""
    label_map = label_map or DEFAULT_LABEL_MAP
    if orientation not in ORIENTATIONS:
        raise ValidationError(f"orientation must be one of {ORIENTATIONS}, got {orientation!r}")
    lines = _read_lines(path)
    if not lines:
        raise DataError("file is empty", path)
    if orientation == "auto":
        orientation = _detect_orientation(lines, path)

    if orientation == "rows":
        records = []
        for lineno, toks in lines:
            if len(toks) != RECORD_LEN:
                raise DataError(f"row has {len(toks)} values, expected {RECORD_LEN}", path, lineno)
            records.append(_tokens_to_floats(toks, path, lineno))
        block = np.vstack(records)
        linenos = [ln for ln, _ in lines]
        where = lambda bad: linenos[bad[0]]  # noqa: E731
    else:
        if len(lines) != RECORD_LEN:
            raise DataError(f"samples-as-columns file must have {RECORD_LEN} lines, got {len(lines)}", path)
        width = len(lines[0][1])
        rows = []
        for lineno, toks in lines:
            if len(toks) != width:
                raise DataError(f"line has {len(toks)} values, expected {width} like line {lines[0][0]}",
                                path, lineno)
            rows.append(_tokens_to_floats(toks, path, lineno))
        block = np.vstack(rows).T
        linenos = [ln for ln, _ in lines]
        where = lambda bad: linenos[N_FEATURES + bad[1]]  # noqa: E731

    bad = ~np.isfinite(block)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError("non-finite value", path, linenos[r] if orientation == "rows" else linenos[c])
    labels = _map_labels(block[:, N_FEATURES:], label_map, path, where)
    return Day(features=block[:, :N_FEATURES].copy(), labels=labels)


def _natural_key(path):
    return [int(s) if s.isdigit() else s for s in re.split(r"(\d+)", path.name)]


def _cf_files(directory, variant):
    """Locate the anchored-fold files: day 1 = Train_CF_1, day k+1 = Test_CF_k."""
    files = sorted(p for p in Path(directory).iterdir() if p.is_file() and variant.lower() in p.name.lower())

    def find(kind, k):
        pat = re.compile(rf"{kind}.*CF_{k}\b", re.IGNORECASE)
        hits = [p for p in files if pat.search(p.stem)]
        return hits[0] if len(hits) == 1 else None

    first = find("Train", 1)
    tests = [find("Test", k) for k in range(1, 10)]
    if first is None or any(t is None for t in tests):
        return None
    return [first] + tests


def load_fi2010(path, orientation="auto", label_map=None, variant="ZScore"):
    """Load FI-2010 data partitioned by trading day.

    ``path`` may be a single file (one day), a directory holding the public
    anchored-fold files (``Train_*_CF_1.txt`` and ``Test_*_CF_1..9.txt`` of
    the chosen normalisation ``variant``), or a directory of per-day ``.txt``
    files taken in natural sort order.
    """
    path = Path(path)
    if not path.exists():
        raise DataError("no such file or directory", path)
    if path.is_file():
        files = [path]
    else:
        files = _cf_files(path, variant)
        if files is None:
            files = sorted((p for p in path.glob("*.txt") if p.is_file()), key=_natural_key)
        if not files:
            raise DataError("no .txt data files found", path)
    days = [parse_fi2010_file(f, orientation, label_map) for f in files]
    data = LobDataset(days=days, label_map=dict(label_map or DEFAULT_LABEL_MAP))
    log.info("loaded %d feature vectors in %d days from %s", data.total, len(days), path)
    return data


def write_fi2010_file(day, path, orientation="cols", label_map=None):
    """Inverse of :func:`parse_fi2010_file` (values written with round-trip precision)."""
    inverse = {v: k for k, v in (label_map or DEFAULT_LABEL_MAP).items()}
    raw_labels = np.vectorize(inverse.get)(day.labels).astype(np.float64)
    block = np.hstack([day.features, raw_labels])
    if orientation == "cols":
        block = block.T
    elif orientation != "rows":
        raise ValidationError(f"orientation must be 'rows' or 'cols', got {orientation!r}")
    with open(path, "w") as fh:
        for row in block:
            fh.write(" ".join(repr(float(v)) for v in row))
            fh.write("\n")


def write_fi2010_days(data, directory, orientation="cols", prefix="day"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, day in enumerate(data.days, start=1):
        p = directory / f"{prefix}_{i:02d}.txt"
        write_fi2010_file(day, p, orientation, data.label_map)
        paths.append(p)
    return paths


def save_cache(data, path):
    """Binary cache: ``.npz`` with a JSON ``header`` (magic, version, label map, day count)."""
    header = {"magic": CACHE_MAGIC, "version": CACHE_VERSION, "n_days": len(data.days),
              "label_map": {str(k): v for k, v in (data.label_map or DEFAULT_LABEL_MAP).items()}}
    arrays = {}
    for i, d in enumerate(data.days):
        arrays[f"day{i}.features"] = d.features
        arrays[f"day{i}.labels"] = d.labels
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_cache(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"])) if "header" in z.files else {}
        if header.get("magic") != CACHE_MAGIC or header.get("version") != CACHE_VERSION:
            raise DataError(f"not a v{CACHE_VERSION} day cache", path)
        days = [Day(z[f"day{i}.features"], z[f"day{i}.labels"]) for i in range(header["n_days"])]
    return LobDataset(days=days, label_map={int(k): v for k, v in header["label_map"].items()})


@dataclass
class SampleWindow:
    x: np.ndarray  # (40, 10), columns oldest -> newest
    label: int


@dataclass
class WindowSet:
    """A batch of windows: ``x`` is ``(N, 40, 10)`` and ``labels`` is ``(N,)``."""

    x: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return SampleWindow(self.x[i], int(self.labels[i]))

    def subset(self, idx):
        return WindowSet(self.x[idx], self.labels[idx])

    @classmethod
    def concat(cls, sets, n_features=LOB_DIMS, history=HISTORY):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls(np.empty((0, n_features, history)), np.empty(0, dtype=np.int64))
        return cls(np.concatenate([s.x for s in sets]), np.concatenate([s.labels for s in sets]))


def build_windows(day, horizon, stride=1, history=HISTORY, n_features=LOB_DIMS):
    """Sliding windows over one day; label is the newest vector's horizon label."""
    h = horizon_index(horizon)
    n = len(day)
    if n < history:
        return WindowSet(np.empty((0, n_features, history)), np.empty(0, dtype=np.int64))
    starts = np.arange(0, n - history + 1, stride)
    feats = day.features[:, :n_features]
    idx = starts[:, None] + np.arange(history)[None, :]
    x = np.transpose(feats[idx], (0, 2, 1))
    labels = day.labels[starts + history - 1, h].astype(np.int64)
    return WindowSet(np.ascontiguousarray(x), labels)


def class_counts(windows, c=DEFAULT_C):
    labels = np.asarray(windows.labels if isinstance(windows, WindowSet) else
                        [w.label for w in windows])
    if labels.size == 0:
        raise ValidationError("cannot count classes of an empty window set")
    counts = np.bincount(labels, minlength=N_CLASSES)
    if np.any(counts == 0):
        missing = [CLASS_NAMES[i] for i in np.flatnonzero(counts == 0)]
        raise ValidationError(f"class(es) {missing} absent from training windows; weighted loss undefined")
    return ClassWeights(tuple(int(v) for v in counts), c)


@dataclass(frozen=True)
class SplitPlan:
    """Setup 1: anchored fold ``k`` trains on days 1..k and tests on day k+1.
    Setup 2: days 1-7 train, days 8-10 test. Day numbers are 1-based."""

    setup: int
    fold: int = None

    def __post_init__(self):
        if self.setup not in (1, 2):
            raise ValidationError(f"setup must be 1 or 2, got {self.setup!r}")
        if self.setup == 1 and (self.fold is None or not 1 <= self.fold <= 9):
            raise ValidationError(f"setup 1 needs a fold in 1..9, got {self.fold!r}")

    @property
    def train_days(self):
        return tuple(range(1, self.fold + 1)) if self.setup == 1 else tuple(range(1, 8))

    @property
    def test_days(self):
        return (self.fold + 1,) if self.setup == 1 else (8, 9, 10)


def make_split(data, plan, horizon, stride=1):
    """Return ``(train, test)`` :class:`WindowSet` for a split plan."""
    need = max(plan.test_days)
    if len(data.days) < need:
        raise ValidationError(f"split needs {need} days, dataset has {len(data.days)}")

    def windows(days):
        return WindowSet.concat([build_windows(data.days[d - 1], horizon, stride) for d in days])

    return windows(plan.train_days), windows(plan.test_days)


def _zscore(block):
    mu = block.mean(axis=0)
    sd = block.std(axis=0)
    return (block - mu) / np.where(sd > 0, sd, 1.0)


def _simulate_book(rng, n, tick=0.01, vol=5e-4, start=100.0):
    """Random-walk mid-price with a 10-level book; returns ``(lob (n, 40), mid (n,))``."""
    log_mid = np.log(start) + np.cumsum(rng.normal(0.0, vol, n))
    mid = np.exp(log_mid)
    half = tick * (0.5 + rng.integers(0, 3, n)) / 2.0 + tick / 2.0
    gaps = tick * (1.0 + rng.integers(0, 3, (n, 10)))
    gaps[:, 0] = 0.0
    ask = (mid + half)[:, None] + np.cumsum(gaps, axis=1)
    gaps = tick * (1.0 + rng.integers(0, 3, (n, 10)))
    gaps[:, 0] = 0.0
    bid = (mid - half)[:, None] - np.cumsum(gaps, axis=1)
    ask_vol = rng.lognormal(6.0, 0.8, (n, 10))
    bid_vol = rng.lognormal(6.0, 0.8, (n, 10))
    lob = np.stack([ask, ask_vol, bid, bid_vol], axis=2).reshape(n, LOB_DIMS)
    mids = np.array([mid_price(a, b) for a, b in zip(lob[:, 0], lob[:, 2])])
    return lob, mids


def movement_labels(mid, n_out, steps, threshold):
    """1-based FI-2010 labels from the mean future mid-price change over ``steps`` vectors."""
    csum = np.concatenate([[0.0], np.cumsum(mid)])
    t = np.arange(n_out)
    future_mean = (csum[t + steps + 1] - csum[t + 1]) / steps
    change = (future_mean - mid[:n_out]) / mid[:n_out]
    return np.where(change > threshold, 1, np.where(change < -threshold, 3, 2))


def synth_lob(seed, n_days=10, vectors_per_day=500, mode="random_walk", threshold=2e-4,
              signal=2.0, noise=0.5):
    """Generate a synthetic FI-2010-shaped dataset.

    Each vector holds a simulated 10-level book in its first 40 dims
    (z-scored over the whole dataset); the remaining 104 handcrafted-feature
    dims are zero. In ``"random_walk"`` mode labels threshold the relative
    change of the mean mid-price over the next H/10 vectors against the
    current one. In ``"separable"`` mode every vector's class is drawn at
    random and written into three fixed orthonormal directions of its 40 LOB
    dims (``signal`` on the class direction, ``-signal/2`` on the others, plus
    uniform noise of half-width ``noise * signal / 2``), so the class is the
    argmax of those three projections of the newest column.
    """
    if n_days < 1 or vectors_per_day < 1:
        raise ValidationError("n_days and vectors_per_day must be positive")
    if mode not in ("random_walk", "separable"):
        raise ValidationError(f"unknown synthetic mode {mode!r}")
    if not 0.0 <= noise < 1.0:
        raise ValidationError("noise must lie in [0, 1) to keep the classes separable")
    rng = np.random.default_rng(seed)
    max_steps = max(HORIZONS) // 10
    lobs, label_sets = [], []
    for _ in range(n_days):
        lob, mid = _simulate_book(rng, vectors_per_day + max_steps)
        lobs.append(lob[:vectors_per_day])
        labels = np.stack([movement_labels(mid, vectors_per_day, h // 10, threshold) for h in HORIZONS], axis=1)
        label_sets.append(labels)

    lob_all = _zscore(np.vstack(lobs))
    if mode == "separable":
        q, _ = np.linalg.qr(rng.normal(size=(LOB_DIMS, N_CLASSES)))
        dirs = q.T  # (3, 40) orthonormal rows
        classes = rng.integers(0, N_CLASSES, len(lob_all))
        proj = np.full((len(lob_all), N_CLASSES), -signal / 2.0)
        proj[np.arange(len(lob_all)), classes] = signal
        proj += rng.uniform(-1.0, 1.0, proj.shape) * noise * signal / 2.0
        lob_all = lob_all - (lob_all @ dirs.T) @ dirs + proj @ dirs
        raw = np.repeat((classes + 1)[:, None], N_LABELS, axis=1)
        label_sets = np.split(raw, n_days)
    days = []
    for i, lob in enumerate(np.split(lob_all, n_days)):
        feats = np.zeros((vectors_per_day, N_FEATURES))
        feats[:, :LOB_DIMS] = lob
        raw = np.asarray(label_sets[i])
        days.append(Day(feats, _map_labels(raw.astype(np.float64), DEFAULT_LABEL_MAP, None, lambda b: None)))
    return LobDataset(days=days, label_map=dict(DEFAULT_LABEL_MAP))

