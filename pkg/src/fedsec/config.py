"""Experiment configuration files.

Flat ``key = value`` pairs grouped in sections, readable as INI or as the simple
subset of TOML (quoted strings, numbers, one-line lists). Every field is
type-checked and range-checked at load time; all problems are reported together,
each naming its ``section.key``.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field

from .errors import ConfigError

# section -> key -> (type, default)
SCHEMA = {
    "run": {
        "root_seed": (int, 0),
        "name": (str, "experiment"),
    },
    "data": {
        "source": (str, "synthetic"),  # synthetic | log | corpus
        "path": (str, ""),
        "gap": (float, None),
        "vocab_size": (int, 50),
        "n_machines": (int, 2000),
        "min_len": (int, 4),
        "max_len": (int, 12),
        "seed": (int, 0),
        "split": (list, [0.8, 0.1, 0.1]),
    },
    "partition": {
        "distribution": (str, "primary"),  # primary | knowledgeable | extreme | iid
        "K": (int, 20),
        "m": (float, 0.6),
        "seed": (int, 0),
        "concentration": (float, 1.0),
    },
    "model": {
        "embed_dim": (int, 16),
        "hidden_size": (int, 32),
        "lanes": (int, 4),
        "learning_rate": (float, 5.0),
        "batch_size": (int, 16),
        "clip_norm": (float, 5.0),
        "seed": (int, 0),
    },
    "federation": {
        "rounds": (int, 20),
        "local_epochs": (int, 2),
        "participation_rate": (float, 1.0),
        "eval_stride": (int, 1),
        "checkpoint_stride": (int, 0),
    },
    "central": {
        "epochs": (int, 10),
    },
    "policy": {
        "name": (str, "fedavg"),
        "beta": (float, 0.1),
        "f": (int, 1),
        "server_size": (int, 500),
        "remove_frac": (float, 0.1),
        "T": (float, 5.0),
        "sigma": (float, 0.05),
        "clip": (float, 1.0),
        "noise_scale": (float, 1.0),
        "sample_rate": (float, 1.0),
        "budget": (float, 3.8),
        "delta": (float, 1e-5),
    },
    "attack": {
        "kind": (str, "none"),  # none | backdoor | mia
        "attacker_frac": (float, 0.01),
        "boost": (str, "exact"),  # exact | auto | <number>
        "schedule": (str, "all"),
        "trigger": (int, -1),  # -1: most frequent pre-label event
        "target": (int, 0),
        "ascent_rate": (float, 1.0),
        "window": (str, "0:5"),
        "adversary": (int, 0),
        "targets": (int, 50),
    },
    "analysis": {
        "influence_depth": (int, 500),
        "damping": (float, 0.01),
        "scale": (float, None),
        "sweep_m": (list, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
    },
    "output": {
        "dir": (str, "runs"),
    },
}

NULLABLE = {"clip_norm"}

POLICY_KEYS = {
    "fedavg": (),
    "trimmed_mean": ("beta",),
    "krum": ("f",),
    "fltrust": ("server_size",),
    "dnc": ("remove_frac",),
    "norm_bound": ("T",),
    "weak_dp": ("T", "sigma"),
    "cdp": ("clip", "noise_scale", "sample_rate", "budget", "delta"),
}


def _unquote(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _convert(kind, raw: str, where: str, errors: list):
    raw = raw.strip()
    if kind is str:
        return _unquote(raw)
    if kind is list:
        body = raw[1:-1] if raw.startswith("[") and raw.endswith("]") else raw
        try:
            return [float(_unquote(x)) for x in body.split(",") if x.strip()]
        except ValueError:
            errors.append(f"{where}: expected a list of numbers, got {raw!r}")
            return None
    if kind is int:
        try:
            return int(_unquote(raw))
        except ValueError:
            errors.append(f"{where}: expected an integer, got {raw!r}")
            return None
    if kind is float:
        text = _unquote(raw).lower()
        if text in ("none", ""):
            return None
        try:
            return float(text)
        except ValueError:
            errors.append(f"{where}: expected a number, got {raw!r}")
            return None
    raise AssertionError(kind)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    text: str = ""

    def __getitem__(self, key):
        section, _, name = key.partition(".")
        return self.values[section][name]

    def section(self, name) -> dict:
        return dict(self.values[name])

    def canonical(self) -> str:
        buf = io.StringIO()
        for section in SCHEMA:
            buf.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                v = self.values[section][key]
                if isinstance(v, list):
                    v = "[" + ", ".join(repr(x) for x in v) + "]"
                elif v is None:
                    v = "none"
                elif isinstance(v, str):
                    v = f'"{v}"'
                buf.write(f"{key} = {v}\n")
            buf.write("\n")
        return buf.getvalue()

    def digest(self, extra: str = "") -> str:
        return hashlib.sha256((extra + "\n" + self.canonical()).encode()).hexdigest()[:10]


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    errors: list[str] = []
    values = {s: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            errors.append(f"{section}: unknown section")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                errors.append(f"{section}.{key}: unknown key")
                continue
            kind, default = SCHEMA[section][key]
            before = len(errors)
            v = _convert(kind, raw, f"{section}.{key}", errors)
            if len(errors) > before:
                continue
            if v is None and default is not None and key not in NULLABLE:
                errors.append(f"{section}.{key}: a value is required")
                continue
            values[section][key] = v
    cfg = ExperimentConfig(values, text)
    errors.extend(validate(cfg))
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def validate(cfg: ExperimentConfig) -> list[str]:
    v = cfg.values
    errs = []

    def need(cond, key, msg):
        if not cond:
            errs.append(f"{key}: {msg}")

    d = v["data"]
    need(d["source"] in ("synthetic", "log", "corpus"), "data.source", "must be synthetic, log or corpus")
    if d["source"] in ("log", "corpus"):
        need(bool(d["path"]), "data.path", f"required for source = {d['source']}")
    need(d["vocab_size"] >= 2, "data.vocab_size", "must be >= 2")
    need(d["n_machines"] >= 1, "data.n_machines", "must be >= 1")
    need(2 <= d["min_len"] <= d["max_len"], "data.min_len", "need 2 <= min_len <= max_len")
    need(d["gap"] is None or d["gap"] > 0, "data.gap", "must be > 0")
    sp = d["split"]
    need(len(sp) == 3 and all(x >= 0 for x in sp) and abs(sum(sp) - 1) <= 1e-9, "data.split",
         "three non-negative ratios summing to 1")

    p = v["partition"]
    need(p["distribution"] in ("primary", "knowledgeable", "extreme", "iid"), "partition.distribution",
         "must be primary, knowledgeable, extreme or iid")
    need(p["K"] >= 1, "partition.K", "must be >= 1")
    if p["distribution"] == "primary":
        need(p["K"] >= 2, "partition.K", "primary distribution needs K >= 2")
    need(0 < p["m"] <= 1, "partition.m", "must be in (0, 1]")
    need(p["concentration"] > 0, "partition.concentration", "must be > 0")

    m = v["model"]
    for k in ("embed_dim", "hidden_size", "lanes", "batch_size"):
        need(m[k] >= 1, f"model.{k}", "must be >= 1")
    need(m["learning_rate"] > 0, "model.learning_rate", "must be > 0")
    need(m["clip_norm"] is None or m["clip_norm"] > 0, "model.clip_norm", "must be > 0 or none")

    f = v["federation"]
    need(f["rounds"] >= 1, "federation.rounds", "must be >= 1")
    need(f["local_epochs"] >= 1, "federation.local_epochs", "must be >= 1")
    need(0 < f["participation_rate"] <= 1, "federation.participation_rate", "must be in (0, 1]")
    need(f["eval_stride"] >= 0, "federation.eval_stride", "must be >= 0")
    need(f["checkpoint_stride"] >= 0, "federation.checkpoint_stride", "must be >= 0")
    need(v["central"]["epochs"] >= 1, "central.epochs", "must be >= 1")

    pol = v["policy"]
    need(pol["name"] in POLICY_KEYS, "policy.name", f"must be one of {', '.join(POLICY_KEYS)}")
    need(0 <= pol["beta"] < 0.5, "policy.beta", "must be in [0, 0.5)")
    need(pol["f"] >= 0, "policy.f", "must be >= 0")
    if pol["name"] == "krum":
        need(pol["f"] < p["K"], "policy.f", "must be smaller than partition.K")
    need(pol["server_size"] >= 1, "policy.server_size", "must be >= 1")
    need(0 <= pol["remove_frac"] < 1, "policy.remove_frac", "must be in [0, 1)")
    for k in ("T", "sigma", "clip", "noise_scale", "budget"):
        need(pol[k] is not None and pol[k] > 0, f"policy.{k}", "must be > 0")
    need(0 < pol["sample_rate"] <= 1, "policy.sample_rate", "must be in (0, 1]")
    need(0 < pol["delta"] < 1, "policy.delta", "must be in (0, 1)")

    a = v["attack"]
    need(a["kind"] in ("none", "backdoor", "mia"), "attack.kind", "must be none, backdoor or mia")
    need(0 < a["attacker_frac"] < 1, "attack.attacker_frac", "must be in (0, 1)")
    b = a["boost"]
    if b not in ("exact", "auto"):
        try:
            need(float(b) > 0, "attack.boost", "must be exact, auto or a positive number")
        except ValueError:
            errs.append("attack.boost: must be exact, auto or a positive number")
    sched = a["schedule"]
    kind, _, n = sched.partition(":")
    need(sched == "all" or (kind in ("first", "last") and n.isdigit() and int(n) >= 1), "attack.schedule",
         "must be all, first:N or last:N")
    need(a["trigger"] == -1 or 0 <= a["trigger"] < d["vocab_size"] or d["source"] != "synthetic",
         "attack.trigger", "must be -1 or a valid event id")
    need(a["target"] >= 0, "attack.target", "must be >= 0")
    need(a["trigger"] != a["target"], "attack.trigger", "must differ from attack.target")
    need(a["ascent_rate"] > 0, "attack.ascent_rate", "must be > 0")
    lo, _, hi = a["window"].partition(":")
    ok = lo.strip().isdigit() and hi.strip().isdigit() and int(lo) < int(hi)
    need(ok, "attack.window", "must be 'start:end' with start < end")
    if ok:
        need(int(lo) < f["rounds"], "attack.window", "does not overlap the training rounds")
    need(a["targets"] >= 1, "attack.targets", "must be >= 1")
    need(a["adversary"] >= 0, "attack.adversary", "must be >= 0")

    an = v["analysis"]
    need(an["influence_depth"] >= 1, "analysis.influence_depth", "must be >= 1")
    need(an["damping"] is not None and an["damping"] >= 0, "analysis.damping", "must be >= 0")
    need(an["scale"] is None or an["scale"] > 0, "analysis.scale", "must be > 0 or none")
    need(all(0 < x <= 1 for x in an["sweep_m"]) and an["sweep_m"], "analysis.sweep_m", "values must be in (0, 1]")
    return errs
