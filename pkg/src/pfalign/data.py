"""Dataset ingestion: MNIST IDX files, CIFAR-10 binary batches, synthetic blobs.

Loaders are path based and never touch the network; :func:`fetch` is the
only downloader and is used by the ``fetch-data`` CLI command.
"""

import gzip
import os
import shutil
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContractError,
    DatasetError,
    DimensionMismatchError,
    EmptyDatasetError,
    RecordCountError,
    TruncatedFileError,
)
from .rng import make_rng

MNIST_MEAN = 0.1307
MNIST_STD = 0.3081
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616])

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32

DATA_ROOT_ENV = "PFALIGN_DATA"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_FILES = {
    "train": tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
    "test": ("test_batch.bin",),
}


@dataclass
class Dataset:
    images: np.ndarray  # (n, C, H, W) or (n, D)
    labels: np.ndarray  # (n,) int64
    split: str = "train"
    num_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return int(self.labels.shape[0])

    def subset(self, n):
        return Dataset(self.images[:n], self.labels[:n], self.split, self.num_classes)


def data_root(override=None):
    root = override or os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else Path.home() / ".cache" / "pfalign"


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path, expected_magic):
    """Parse one IDX file into a uint8 array, checking magic and length."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: shorter than the IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic {magic}, expected {expected_magic}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: {len(raw) - header} bytes of payload, need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, split="train"):
    """MNIST images as (n, 1, 28, 28), scaled to [0, 1] then standardised."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    x = (images.astype(np.float64) / 255.0 - MNIST_MEAN) / MNIST_STD
    return Dataset(x[:, None, :, :], labels.astype(np.int64), split)


def find_mnist(split, root=None):
    base = data_root(root) / "mnist"
    img, lab = MNIST_FILES[split]
    paths = []
    for name in (img, lab):
        for candidate in (base / name, base / (name + ".gz")):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            raise DatasetError(f"MNIST file {name} not found under {base}")
    return load_mnist_idx(paths[0], paths[1], split)


def load_cifar10_bin(directory, split="train", files=None, records_per_file=10000):
    """CIFAR-10 binary batches as (n, 3, 32, 32), standardised per channel."""
    directory = Path(directory)
    names = files or CIFAR_FILES[split]
    images, labels = [], []
    for name in names:
        path = directory / name
        if not path.exists():
            raise DatasetError(f"CIFAR-10 file {path} not found")
        raw = path.read_bytes()
        if len(raw) % CIFAR_RECORD or len(raw) // CIFAR_RECORD != records_per_file:
            raise RecordCountError(
                f"{path}: {len(raw)} bytes is not {records_per_file} records of {CIFAR_RECORD}"
            )
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    x = np.concatenate(images).astype(np.float64) / 255.0
    x = (x - CIFAR_MEAN[None, :, None, None]) / CIFAR_STD[None, :, None, None]
    return Dataset(x, np.concatenate(labels), split)


def augment_cifar(x, rng, pad=4):
    """Random ``pad``-pixel shifted crop and horizontal flip, per image."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(x)
    for i in range(n):
        crop = padded[i, :, dy[i] : dy[i] + h, dx[i] : dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def synthetic_classification(n, dims, classes, seed, margin=4.0, split="train"):
    """Gaussian blobs with unit noise around centres ``margin`` apart.

    Centres are ``margin / sqrt(2)`` times orthonormal directions, so any two
    are exactly ``margin`` apart; large margins give separable data.
    """
    if n <= 0:
        raise EmptyDatasetError("synthetic dataset needs n >= 1")
    if classes < 2:
        raise ContractError("need at least two classes")
    if dims < classes:
        raise ContractError("need dims >= classes for orthogonal centres")
    rng = make_rng(seed, "synthetic", split)
    q, _ = np.linalg.qr(make_rng(seed, "synthetic-centres").standard_normal((dims, classes)))
    centres = q.T * (margin / np.sqrt(2.0))
    labels = rng.integers(0, classes, size=n)
    x = centres[labels] + rng.standard_normal((n, dims))
    return Dataset(x, labels, split, classes)


def batches(dataset, batch_size, shuffle_seed, epoch=0, shuffle=True):
    """Yield ``(x, labels)`` minibatches; the last one may be short.

    The permutation comes from the stream ``(shuffle_seed, "shuffle", epoch)``.
    """
    if batch_size < 1:
        raise ContractError("batch size must be >= 1")
    n = len(dataset)
    if shuffle:
        order = make_rng(shuffle_seed, "shuffle", epoch).permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


MNIST_URLS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def _download(url, dest, timeout=60):
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(url, timeout=timeout) as resp, open(tmp, "wb") as out:
        shutil.copyfileobj(resp, out)
    tmp.replace(dest)


def fetch(dataset, root=None):
    """Download MNIST or CIFAR-10 into the data root; returns the directory."""
    import tarfile

    root = data_root(root)
    if dataset == "mnist":
        target = root / "mnist"
        target.mkdir(parents=True, exist_ok=True)
        for img, lab in MNIST_FILES.values():
            for name in (img, lab):
                dest = target / (name + ".gz")
                if dest.exists():
                    continue
                errors = []
                for base in MNIST_URLS:
                    try:
                        _download(base + name + ".gz", dest)
                        break
                    except OSError as exc:
                        errors.append(f"{base}: {exc}")
                else:
                    raise DatasetError("could not download " + name + "; " + "; ".join(errors))
        return target
    if dataset == "cifar10":
        target = root / "cifar10"
        target.mkdir(parents=True, exist_ok=True)
        archive = root / "cifar-10-binary.tar.gz"
        if not archive.exists():
            try:
                _download(CIFAR_URL, archive)
            except OSError as exc:
                raise DatasetError(f"could not download CIFAR-10: {exc}") from exc
        with tarfile.open(archive) as tar:
            for member in tar.getmembers():
                if member.name.endswith(".bin"):
                    member.name = os.path.basename(member.name)
                    tar.extract(member, target)
        return target
    raise ContractError(f"unknown dataset {dataset!r}")
