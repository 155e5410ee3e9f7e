"""Run configuration, trained-state files, manifests and metrics CSV."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import DatasetSpec
from .encoder import EncoderSpec
from .train import TrainConfig

METRICS_HEADER = ["epoch", "loss", "acc_all", "acc_many", "acc_medium", "acc_few"]
GRAD_NORM_HEADER = ["class_rank", "count", "grad_norm"]


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class RunConfig:
    dataset: DatasetSpec
    encoder: EncoderSpec
    train: TrainConfig

    def to_dict(self) -> dict:
        d = {"dataset": asdict(self.dataset), "encoder": asdict(self.encoder), "train": self.train.to_dict()}
        d["encoder"]["pixel_widths"] = list(d["encoder"]["pixel_widths"])
        return d


def _unknown(section: str, given: dict, cls) -> list[str]:
    known = {f.name for f in fields(cls)}
    return [f"{section}.{k}" for k in sorted(set(given) - known)]


def parse_run_config(doc: dict) -> RunConfig:
    """Validate a run config document, collecting every offending key."""
    if not isinstance(doc, dict):
        raise ConfigError(["<root> must be a JSON object"])
    problems = [k for k in sorted(set(doc) - {"dataset", "encoder", "train"})]
    ds = doc.get("dataset", {})
    enc = doc.get("encoder", {})
    tr = dict(doc.get("train", {}))
    loss = tr.get("loss", {})
    from ..losses import LossConfig
    problems += _unknown("dataset", ds, DatasetSpec)
    problems += _unknown("encoder", enc, EncoderSpec)
    problems += _unknown("train", tr, TrainConfig)
    problems += _unknown("train.loss", loss, LossConfig)
    if problems:
        raise ConfigError([f"unknown key: {p}" for p in problems])

    objs = {}
    for name, build in (("dataset", lambda: DatasetSpec(**ds)),
                        ("train", lambda: TrainConfig.from_dict(tr))):
        try:
            objs[name] = build()
        except (TypeError, ValueError, KeyError) as exc:
            problems.append(f"{name}: {exc}")
    if "dataset" in objs:
        try:
            objs["encoder"] = EncoderSpec(**{"input_dim": objs["dataset"].dim, **enc})
        except (TypeError, ValueError) as exc:
            problems.append(f"encoder: {exc}")
        if objs.get("encoder") is not None and objs["encoder"].input_dim != objs["dataset"].dim:
            problems.append("encoder.input_dim: must equal dataset.dim")
    if problems:
        raise ConfigError(problems)
    return RunConfig(objs["dataset"], objs["encoder"], objs["train"])


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def content_hash(data: bytes) -> str:
    """git blob hash: sha1 over ``b"blob <len>\\0" + data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(path, command: str, config: dict, seed, inputs: dict, outputs: dict) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "input_hash": content_hash(canonical_json({"command": command, "config": config, "inputs": inputs})),
        "outputs": outputs,
    }
    write_json(path, manifest)
    return manifest


class MetricsWriter:
    """Streams per-epoch rows to CSV, flushing after each row."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(METRICS_HEADER)
        self._fh.flush()

    def __call__(self, rec):
        self._w.writerow([rec.epoch] + [repr(float(getattr(rec, k))) for k in METRICS_HEADER[1:]])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def save_state(path, net, state, run: RunConfig, train_counts) -> Path:
    """Trained parameters plus the metadata the grad-norm probe needs."""
    lc = run.train.loss
    meta = {
        "run": run.to_dict(),
        "train_counts": [int(c) for c in train_counts],
        "classifier_tau": 1.0 if lc.two_stage else lc.tau_center,
        "classifier_rebalanced": bool(lc.rebalanced),
    }
    path = Path(path)
    with path.open("wb") as fh:
        np.savez(fh, params=state.params, centers=state.centers, meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


@dataclass
class LoadedState:
    params: np.ndarray
    centers: np.ndarray
    meta: dict
    run: RunConfig


def load_state(path) -> LoadedState:
    with np.load(Path(path), allow_pickle=False) as z:
        params, centers = z["params"], z["centers"]
        meta = json.loads(str(z["meta"]))
    return LoadedState(params, centers, meta, parse_run_config(meta["run"]))
