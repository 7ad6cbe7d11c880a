"""TOML-backed tool configuration with aggregated validation."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .sampler import Strategy


@dataclass
class ToolConfig:
    """Every knob of the pipeline, with the documented defaults filled in."""

    # paths
    manifest: str | None = None
    cache_dir: str = ".fontid-cache"
    output_dir: str = "fontid-out"
    codebook_path: str = "codebook.json"
    model_path: str = "model.json"

    # imgproc / features
    target_height: int = 400
    median_window: int = 3
    canny_low: float = 0.1
    canny_high: float = 0.2

    # codebook
    k: int = 20

    # llp
    sigma: float = 300.0
    lambda_weight: float = 0.1
    llp_max_iter: int = 2000
    llp_grad_tol: float = 1e-5

    # sampler
    batch_size: int = 20
    strategy: str = "S5"

    # harness (simulated protocol; model hyperparameters here are scaled to
    # the unit-simplex BoF geometry of the synthetic dataset)
    repetitions: int = 20
    test_per_class: int = 100
    seed_per_class: int = 1
    seed: int = 0
    synthetic_class_counts: tuple[int, int, int] = (375, 375, 150)
    synthetic_concentration: float = 60.0
    harness_sigma: float = 0.1
    harness_lambda: float = 5.0
    harness_max_iter: int = 400
    n_jobs: int = 1

    # service
    port: int = 8000
    state_dir: str = ".fontid-state"
    ui_dir: str | None = None

    warnings: list[str] = field(default_factory=list, repr=False)


_SECTION_KEYS = {
    "paths": {
        "manifest": "manifest",
        "cache_dir": "cache_dir",
        "output_dir": "output_dir",
        "codebook": "codebook_path",
        "model": "model_path",
    },
    "imgproc": {
        "target_height": "target_height",
        "median_window": "median_window",
        "canny_low": "canny_low",
        "canny_high": "canny_high",
    },
    "codebook": {"k": "k"},
    "llp": {
        "sigma": "sigma",
        "lambda": "lambda_weight",
        "max_iter": "llp_max_iter",
        "grad_tol": "llp_grad_tol",
    },
    "sampler": {"batch_size": "batch_size", "strategy": "strategy"},
    "harness": {
        "repetitions": "repetitions",
        "test_per_class": "test_per_class",
        "seed_per_class": "seed_per_class",
        "seed": "seed",
        "synthetic_class_counts": "synthetic_class_counts",
        "synthetic_concentration": "synthetic_concentration",
        "sigma": "harness_sigma",
        "lambda": "harness_lambda",
        "max_iter": "harness_max_iter",
        "n_jobs": "n_jobs",
    },
    "service": {"port": "port", "state_dir": "state_dir", "ui_dir": "ui_dir"},
}


def load_config(path: str | Path | None) -> ToolConfig:
    """Read a TOML config file (missing path means all defaults) and validate."""
    cfg = ToolConfig()
    if path is not None:
        p = Path(path)
        try:
            doc = tomllib.loads(p.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: invalid TOML: {exc}") from exc
        unknown = []
        for section, table in doc.items():
            keys = _SECTION_KEYS.get(section)
            if keys is None:
                unknown.append(section)
                continue
            if not isinstance(table, dict):
                raise ConfigError(f"{p}: [{section}] must be a table")
            for key, value in table.items():
                attr = keys.get(key)
                if attr is None:
                    unknown.append(f"{section}.{key}")
                    continue
                setattr(cfg, attr, value)
        if unknown:
            raise ConfigError(f"{p}: unknown config keys: {', '.join(sorted(unknown))}")
    return validate_config(cfg)


def validate_config(cfg: ToolConfig) -> ToolConfig:
    """Check every field; raises one ConfigError listing all violations."""
    errors = []

    def check(ok: bool, message: str):
        if not ok:
            errors.append(message)

    check(cfg.target_height >= 41, f"imgproc.target_height must be >= 41, got {cfg.target_height}")
    check(
        cfg.median_window >= 1 and cfg.median_window % 2 == 1,
        f"imgproc.median_window must be odd and >= 1, got {cfg.median_window}",
    )
    check(
        0.0 < cfg.canny_low < cfg.canny_high <= 1.0,
        f"imgproc canny thresholds must satisfy 0 < low < high <= 1, got {cfg.canny_low}, {cfg.canny_high}",
    )
    check(cfg.k >= 2, f"codebook.k must be >= 2, got {cfg.k}")
    check(cfg.sigma > 0, f"llp.sigma must be > 0, got {cfg.sigma}")
    check(cfg.lambda_weight >= 0, f"llp.lambda must be >= 0, got {cfg.lambda_weight}")
    check(cfg.llp_max_iter >= 1, f"llp.max_iter must be >= 1, got {cfg.llp_max_iter}")
    check(cfg.llp_grad_tol > 0, f"llp.grad_tol must be > 0, got {cfg.llp_grad_tol}")
    check(cfg.batch_size >= 1, f"sampler.batch_size must be >= 1, got {cfg.batch_size}")
    try:
        Strategy.parse(cfg.strategy)
    except Exception:
        valid = ", ".join(m.value for m in Strategy)
        errors.append(f"sampler.strategy must be one of {valid}, got {cfg.strategy!r}")
    check(cfg.repetitions >= 1, f"harness.repetitions must be >= 1, got {cfg.repetitions}")
    check(cfg.test_per_class >= 1, f"harness.test_per_class must be >= 1, got {cfg.test_per_class}")
    check(cfg.seed_per_class >= 1, f"harness.seed_per_class must be >= 1, got {cfg.seed_per_class}")
    counts = cfg.synthetic_class_counts
    check(
        isinstance(counts, (list, tuple)) and len(counts) == 3
        and all(isinstance(c, int) and c >= 1 for c in counts),
        f"harness.synthetic_class_counts must be three positive ints, got {counts!r}",
    )
    if isinstance(counts, list):
        cfg.synthetic_class_counts = tuple(counts)
    check(
        cfg.synthetic_concentration > 0,
        f"harness.synthetic_concentration must be > 0, got {cfg.synthetic_concentration}",
    )
    check(cfg.harness_sigma > 0, f"harness.sigma must be > 0, got {cfg.harness_sigma}")
    check(cfg.harness_lambda >= 0, f"harness.lambda must be >= 0, got {cfg.harness_lambda}")
    check(cfg.harness_max_iter >= 1, f"harness.max_iter must be >= 1, got {cfg.harness_max_iter}")
    check(1 <= cfg.port <= 65535, f"service.port must be in [1, 65535], got {cfg.port}")
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def config_as_dict(cfg: ToolConfig) -> dict:
    """Flat dict echo of the effective configuration (for provenance dumps)."""
    return {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "warnings"}
