import os
import json
import yaml
import logging
import importlib_resources
from glob import glob
from hashlib import sha256
from base64 import b32encode
from collections.abc import Mapping
from typing import Dict, List, Optional, Tuple

import numpy as np
from atomicwrites import atomic_write

logging.basicConfig(level=logging.INFO)


MAX_FLOAT = np.sqrt(np.finfo(np.float32).max)


def load_yaml(file_name: str, folder_list: Optional[List[str]] = None):
    """Load data from yaml file."""
    with open(get_file_path(file_name, folder_list), "r") as file:
        data = yaml.safe_load(file)
    return data


def dump_yaml(data, file_name: str):
    """Dump data into a yaml file, atomically."""
    with atomic_write(file_name, overwrite=True) as file:
        yaml.safe_dump(data, file, sort_keys=True)


def load_json(file_name: str, folder_list: Optional[List[str]] = None):
    """Load data from json file."""
    with open(get_file_path(file_name, folder_list), "r", encoding="utf-8") as file:
        data = json.load(file)
    return data


def dump_json(data, file_name: str):
    """Dump data into a UTF-8 json file, atomically and with sorted keys.

    Numpy scalars and arrays are converted to plain python types.

    """
    with atomic_write(file_name, overwrite=True, encoding="utf-8") as file:
        json.dump(to_builtin(data), file, indent=4, sort_keys=True, ensure_ascii=False)
        file.write("\n")


def to_builtin(obj):
    """Convert numpy containers and scalars nested in obj into builtin python types."""
    if isinstance(obj, Mapping):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        # json has no inf/nan, keep them readable
        return str(obj)
    return obj


def _get_abspath(file_name):
    """Get the abspath of the file.

    Raise FileNotFoundError when not found in any subfolder

    """
    for sub_dir in ("examples/configs", "examples/data"):
        p = os.path.join(_package_path(sub_dir), file_name)
        if glob(p):
            return p
    raise FileNotFoundError(f"Cannot find {file_name}")


def _package_path(sub_directory):
    """Get the abs path of the requested sub folder."""
    return importlib_resources.files("turba") / sub_directory


def get_file_path(fname, folder_list: Optional[List[str]] = None):
    """Find the full path to the resource file. Try 3 methods in the following order.

    #. fname exists as given (absolute, or relative to the working directory)
    #. fname exists inside one of the folders of folder_list
    #. fname is one of the files shipped with turba under examples/

    Args:
        fname (str): file name
        folder_list (list, optional (default=None)):
            list of possible base folders. Ordered by priority.
            The function will search for file from the first folder in the list,
            and return the first found file immediately without searching the rest folders.

    Returns:
        str: full path to the resource file

    Raises:
        FileNotFoundError: if the file can not be found anywhere

    """
    if os.path.exists(fname):
        return fname

    if folder_list is None:
        folder_list = []
    for folder in folder_list:
        fpath = os.path.join(folder, fname)
        if os.path.exists(fpath):
            logging.debug(f"Load {fname} successfully from {fpath}")
            return fpath

    try:
        return _get_abspath(fname)
    except FileNotFoundError:
        pass

    raise FileNotFoundError(f"Can not find {fname}, please check your file system")


def within_limits(value, limits):
    """Returns True if value is within limits."""
    if limits is None:
        return True
    elif limits[0] is None:
        return value <= limits[1]
    elif limits[1] is None:
        return value >= limits[0]
    else:
        return limits[0] <= value <= limits[1]


def clip_limits(value) -> Tuple[float, float]:
    """Clip limits to be within [-MAX_FLOAT, MAX_FLOAT] by converting None to -MAX_FLOAT and
    MAX_FLOAT."""
    if value is None:
        value = [-MAX_FLOAT, MAX_FLOAT]
    else:
        value = list(value)
        if value[0] is None:
            value[0] = -MAX_FLOAT
        if value[1] is None:
            value[1] = MAX_FLOAT
    return value[0], value[1]


def make_hashable(obj):
    """Convert a container hierarchy into one that can be hashed.

    See http://stackoverflow.com/questions/985294

    """
    if isinstance(obj, Mapping):
        obj = dict(obj)
    try:
        hash(obj)
    except TypeError:
        if isinstance(obj, dict):
            return tuple((k, make_hashable(v)) for (k, v) in sorted(obj.items()))
        elif isinstance(obj, np.ndarray):
            return tuple(obj.tolist())
        elif hasattr(obj, "__iter__"):
            return tuple(make_hashable(o) for o in obj)
        else:
            raise TypeError("Can't make_hashable object of type %r" % type(obj))
    else:
        if isinstance(obj, np.generic):
            return obj.item()
        return obj


def deterministic_hash(thing, length=10):
    """Return a base32 lowercase string of length determined from hashing a container
    hierarchy."""
    hashable = make_hashable(thing)
    jsonned = json.dumps(hashable)
    digest = sha256(jsonned.encode("ascii")).digest()
    return b32encode(digest)[:length].decode("ascii").lower()


def file_hash(file_name: str) -> str:
    """Hex sha256 of a file's content."""
    digest = sha256()
    with open(file_name, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(base_seed: int, *keys: int) -> int:
    """Derive an independent 32-bit seed from base_seed and a tuple of integer keys.

    Example:
        >>> derive_seed(1, 0, 5) == derive_seed(1, 0, 5)
        True

    """
    sequence = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def check_seed(seed) -> int:
    """Return seed as int, refusing a missing or negative seed."""
    if seed is None:
        raise ValueError("A seed is required, runs are never auto-seeded.")
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise ValueError(f"seed should be an integer, not {seed!r}.")
    if seed < 0:
        raise ValueError(f"seed should be non-negative, not {seed}.")
    return int(seed)


def package_versions() -> Dict[str, str]:
    """Versions of turba and the numerical packages that shape its results."""
    import scipy
    import pandas
    import networkx

    import turba

    return {
        "turba": turba.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "networkx": networkx.__version__,
    }
