"""Download MNIST (IDX) and CIFAR-10 (binary batches) into a data dir.

Usage: python scripts/fetch_data.py [DATA_DIR]

The engine itself never touches the network; this helper exists so the
desk-scale training checks can run. Default target is ./data (or
$SIMPNET_DATA_DIR when set).
"""

import gzip
import os
import shutil
import sys
import tarfile
import urllib.request

MNIST_MIRRORS = [
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
]
MNIST_FILES = [
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
]
CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"


def fetch(url, dest):
    print(f"fetching {url}")
    with urllib.request.urlopen(url) as r, open(dest, "wb") as f:
        shutil.copyfileobj(r, f)


def fetch_mnist(root):
    for name in MNIST_FILES:
        out = os.path.join(root, name[: -len(".gz")])
        if os.path.exists(out):
            print(f"have {out}")
            continue
        gz = os.path.join(root, name)
        last_err = None
        for mirror in MNIST_MIRRORS:
            try:
                fetch(mirror + name, gz)
                break
            except Exception as e:  # try the next mirror
                last_err = e
        else:
            raise SystemExit(f"could not fetch {name}: {last_err}")
        with gzip.open(gz, "rb") as src, open(out, "wb") as dst:
            shutil.copyfileobj(src, dst)
        os.remove(gz)
        print(f"wrote {out}")


def fetch_cifar10(root):
    marker = os.path.join(root, "cifar-10-batches-bin", "data_batch_1.bin")
    if os.path.exists(marker):
        print(f"have {marker}")
        return
    tgz = os.path.join(root, "cifar-10-binary.tar.gz")
    fetch(CIFAR_URL, tgz)
    with tarfile.open(tgz, "r:gz") as tar:
        tar.extractall(root)
    os.remove(tgz)
    print(f"wrote {os.path.join(root, 'cifar-10-batches-bin')}")


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else os.environ.get("SIMPNET_DATA_DIR", "data")
    os.makedirs(root, exist_ok=True)
    fetch_mnist(root)
    try:
        fetch_cifar10(root)
    except Exception as e:
        print(f"CIFAR-10 fetch failed ({e}); MNIST is enough for the acceptance checks")


if __name__ == "__main__":
    main()
