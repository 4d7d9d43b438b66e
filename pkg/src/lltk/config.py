"""Flat ``key = value`` configuration files with sections.

Example::

    [data]
    kind = two_moons
    noise = 0.15

    [train]
    sizes = 2, 16, 16, 2
    epochs = 200

Every known key has a type and either a default or ``REQUIRED``. Unknown
sections or keys are rejected so typos do not silently fall back to
defaults.
"""

import configparser
from pathlib import Path

from .trainer import DATASETS, OPTIMIZERS


class ConfigError(ValueError):
    """Malformed or incomplete configuration (a usage error)."""


REQUIRED = object()


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x.strip())


def _strs(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _t(text):
    t = text.strip()
    return t if t == "auto" else int(t)


SCHEMA = {
    "data": {
        "kind": (str, REQUIRED),
        "n_train": (int, 200),
        "n_test": (int, 200),
        "noise": (float, 0.15),
        "seed": (int, 0),
        "label_mode": (str, "true"),
    },
    "train": {
        "sizes": (_ints, REQUIRED),
        "optimizer": (str, "sgd_momentum"),
        "lr": (float, REQUIRED),
        "momentum": (float, 0.9),
        "epochs": (int, REQUIRED),
        "batch_size": (int, 20),
        "shuffle_seed": (int, 0),
        "init_seed": (int, 0),
        "weight_decay": (float, 0.0),
        "lr_decay": (float, 0.1),
        "milestones": (_ints, ()),
        "input_noise": (float, 0.0),
    },
    "sample": {
        "seeds": (_ints, (0, 1, 2, 3, 4)),
        "step_sizes": (_floats, (0.25, 0.5, 0.75, 1.0)),
        "retrain_epochs": (int, 32),
        "direction_seed": (int, 0),
        "count_jump_init": (_bool, False),
        "per_axis": (int, 9),
        "extent": (float, 1.0),
        "budget": (int, 640),
        "n_dirs": (int, 64),
        "naive_steps": (int, 10),
    },
    "embed": {
        "metric": (str, "cosine"),
        "k": (int, 5),
        "alpha": (float, 2.0),
        "t": (_t, "auto"),
        "t_max": (int, 100),
        "dim": (int, 2),
        "preservation_k": (int, 10),
        "shuffles": (int, 50),
    },
    "persist": {
        "k": (int, 20),
        "policy": (str, "cap"),
    },
    "sweep": {
        "batch_sizes": (_ints, (10, 25, 50)),
        "weight_decays": (_floats, (0.0, 1e-4, 1e-3)),
        "augmentation": (_floats, (0.0, 0.1)),
        "widths": (_ints, (16,)),
        "seeds": (_ints, (0, 1)),
    },
    "study": {
        "folds": (int, 10),
        "n_perm": (int, 200),
        "seed": (int, 0),
        "gen_classes": (int, 0),  # 0: 5 classes for >= 60 networks, else 3
        "classifiers": (_strs, ("knn", "softmax_regression", "gaussian_naive_bayes")),
        "spearman_perm": (int, 1000),
    },
}


CHOICES = {
    ("data", "kind"): DATASETS,
    ("data", "label_mode"): ("true", "randomized"),
    ("train", "optimizer"): OPTIMIZERS,
    ("embed", "metric"): ("euclidean", "cosine"),
    ("persist", "policy"): ("cap", "drop"),
}


def _line_of(path, section, key):
    current = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and "=" in s and s.split("=", 1)[0].strip() == key:
            return lineno
    return 0


def load_config(path, required_sections=("data", "train")) -> dict:
    """Parse ``path`` into ``{section: {key: typed value}}`` with defaults filled in.

    Raises :class:`ConfigError` naming the line for syntax or type errors
    and the key for missing required entries.
    """
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), empty_lines_in_values=False)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from exc
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: duplicate section [{exc.section}]") from exc
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}") from exc

    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]; expected one of {sorted(SCHEMA)}")
        for key in parser[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"{path}:{_line_of(path, section, key)}: unknown key {key!r} in [{section}]")
    for section, keys in SCHEMA.items():
        present = parser[section] if parser.has_section(section) else {}
        values = {}
        for key, (conv, default) in keys.items():
            if key in present:
                try:
                    values[key] = conv(present[key])
                except ValueError as exc:
                    raise ConfigError(f"{path}:{_line_of(path, section, key)}: bad value for "
                                      f"{section}.{key}: {exc}") from exc
                allowed = CHOICES.get((section, key))
                if allowed and values[key] not in allowed:
                    raise ConfigError(f"{path}:{_line_of(path, section, key)}: {section}.{key} must be one of "
                                      f"{', '.join(allowed)}; got {values[key]!r}")
            elif default is REQUIRED:
                if section in required_sections:
                    raise ConfigError(f"{path}: missing required key {section}.{key}")
                values[key] = None
            else:
                values[key] = default
        out[section] = values
    return out


def default_config() -> dict:
    """Schema defaults; required keys are ``None``."""
    return {section: {key: None if default is REQUIRED else default for key, (_, default) in keys.items()}
            for section, keys in SCHEMA.items()}


def echo(cfg: dict):
    """``(section.key, text)`` pairs in schema order, for manifests."""
    items = []
    for section, keys in SCHEMA.items():
        for key in keys:
            v = cfg.get(section, {}).get(key)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            items.append((f"{section}.{key}", v))
    return items
