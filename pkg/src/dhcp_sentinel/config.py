"""Run configuration: one TOML file pointing at the per-layer inputs."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from ._compat import tomllib
from .anomaly import ThresholdModel
from .rules import IngredientConfig
from .signatures import SignatureDb, load_signatures
from .validation import check_positive
from .verifier import Whitelist, load_whitelist

ENV_VAR = "DSENT_CONFIG"
REPORT_FORMATS = ("text", "json")


class ConfigError(ValueError):
    pass


def default_whitelist() -> Whitelist:
    with resources.files("dhcp_sentinel").joinpath("data/whitelist.toml").open("rb") as fh:
        return load_whitelist(fh)


@dataclass(frozen=True)
class Config:
    whitelist: Whitelist = field(default_factory=default_whitelist)
    signature_db: SignatureDb = field(default_factory=SignatureDb)
    ingredient_cfg: IngredientConfig = field(default_factory=IngredientConfig.default)
    threshold_model: Optional[ThresholdModel] = None
    window_secs: float = 5.0
    k_sigma: float = 3.0
    fail_safe_inconclusive: bool = True
    report_format: str = "text"

    def __post_init__(self):
        check_positive(self.window_secs, "window_secs")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"report format must be one of {REPORT_FORMATS}")
        if self.threshold_model is not None and self.threshold_model.window_secs != self.window_secs:
            raise ConfigError(
                f"model was trained with window_secs={self.threshold_model.window_secs}, "
                f"config says {self.window_secs}")


def _resolve(base: Path, value: str) -> Optional[Path]:
    if not value:
        return None
    p = Path(value)
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"referenced file does not exist: {p}")
    return p


def load_config(path: Union[str, os.PathLike, None] = None) -> Config:
    """Load ``path``, else ``$DSENT_CONFIG``, else the packaged defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return Config()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    base = path.parent
    paths = doc.get("paths", {})
    anomaly = doc.get("anomaly", {})
    try:
        wl_path = _resolve(base, paths.get("whitelist", ""))
        if wl_path:
            with open(wl_path, "rb") as fh:
                whitelist = load_whitelist(fh)
        else:
            whitelist = default_whitelist()
        sig_path = _resolve(base, paths.get("signatures", ""))
        if sig_path:
            with open(sig_path, "rb") as fh:
                db = load_signatures(fh)
        else:
            db = SignatureDb()
        model_path = _resolve(base, paths.get("model", ""))
        model = ThresholdModel.loads(model_path.read_text()) if model_path else None
        ingredients = IngredientConfig.from_mapping(doc.get("monitor", {}))
        window = anomaly.get("window_secs", model.window_secs if model else 5.0)
        return Config(
            whitelist=whitelist,
            signature_db=db,
            ingredient_cfg=ingredients,
            threshold_model=model,
            window_secs=window,
            k_sigma=anomaly.get("k_sigma", 3.0),
            fail_safe_inconclusive=anomaly.get("fail_safe_inconclusive", True),
            report_format=doc.get("report", {}).get("format", "text"),
        )
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
