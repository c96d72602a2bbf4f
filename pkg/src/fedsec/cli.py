"""Command-line experiment runner.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from pathlib import Path


from . import attacks as atk
from .aggregation import make_policy
from .analysis import (
    benefit_comparison,
    contribution_table,
    final_precision,
    influence_scores,
    knowledgeable_sweep,
)
from .config import POLICY_KEYS, ExperimentConfig, load_config
from .errors import ConfigError, EmptyCorpusError, FedSecError, ParseError
from .events import (
    EventCorpus,
    generate_synthetic_corpus,
    read_corpus,
    read_event_log,
    split_dataset,
    write_corpus,
)
from .federation import (
    TRACE_COLUMNS,
    FederationConfig,
    RoundRecord,
    TrainingTrace,
    evaluate,
    read_trace_csv,
    run_training,
)
from .neural import model as nm
from .partition import (
    non_iidness_score,
    partition_extreme,
    partition_iid,
    partition_knowledgeable,
    partition_primary,
    save_federation,
)

log = logging.getLogger("fedsec")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(FedSecError):
    pass


# ---------------------------------------------------------------------------
# building blocks from a config


def load_data(cfg: ExperimentConfig):
    d = cfg.section("data")
    if d["source"] == "synthetic":
        corpus = generate_synthetic_corpus(d["vocab_size"], d["n_machines"], (d["min_len"], d["max_len"]), d["seed"])
    elif d["source"] == "log":
        corpus = read_event_log(d["path"], gap=d["gap"])
    else:
        corpus = read_corpus(d["path"])
    return split_dataset(corpus, tuple(d["split"]), seed=d["seed"])


def model_config(cfg: ExperimentConfig, vocab_size: int) -> nm.ModelConfig:
    m = cfg.section("model")
    return nm.ModelConfig(vocab_size, m["embed_dim"], m["hidden_size"], m["lanes"], m["learning_rate"], m["seed"],
                          m["batch_size"], m["clip_norm"])


def policy_from(cfg: ExperimentConfig):
    p = cfg.section("policy")
    params = {k: p[k] for k in POLICY_KEYS[p["name"]]}
    if "f" in params:
        params["f"] = int(params["f"])
    if "server_size" in params:
        params["server_size"] = int(params["server_size"])
        params["seed"] = cfg["run.root_seed"]
    return make_policy(p["name"], **params)


def federation_config(cfg: ExperimentConfig, jobs: int = 1) -> FederationConfig:
    f = cfg.section("federation")
    return FederationConfig(f["rounds"], f["local_epochs"], f["participation_rate"], cfg["run.root_seed"],
                            policy_from(cfg), eval_stride=f["eval_stride"], checkpoint_stride=f["checkpoint_stride"],
                            keep_snapshots=False, jobs=jobs)


def build_federation(cfg: ExperimentConfig, split):
    p = cfg.section("partition")
    tag = p["distribution"]
    if tag == "primary":
        return partition_primary(split.train, p["K"], p["seed"], test=split.test, concentration=p["concentration"])
    if tag == "knowledgeable":
        return partition_knowledgeable(split.train, p["K"], p["m"], seed=p["seed"], test=split.test)
    if tag == "extreme":
        return partition_extreme(split.train, test=split.test)
    return partition_iid(split.train, p["K"], seed=p["seed"], test=split.test)


def backdoor_spec(cfg: ExperimentConfig, train: EventCorpus) -> atk.BackdoorSpec:
    a = cfg.section("attack")
    trigger = a["trigger"]
    if trigger < 0:
        trigger, _ = atk.choose_trigger_target(train, a["target"])
    boost = None if a["boost"] == "exact" else ("auto" if a["boost"] == "auto" else float(a["boost"]))
    return atk.BackdoorSpec(trigger, a["target"], a["attacker_frac"], boost, atk.Schedule.parse(a["schedule"]))


def output_dir(cfg: ExperimentConfig, command: str, args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(cfg["output.dir"]) / f"{command}-{cfg['run.name']}-{cfg.digest(command)}"
    if out.exists() and any(out.iterdir()):
        if not args.force:
            raise ConfigError(f"output directory {out} exists; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.canonical(), encoding="utf-8")
    return out


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10f}" if isinstance(v, float) else v for v in row])


def summary_lines(title, metrics: dict) -> list[str]:
    lines = [title]
    for k in ("precision", "recall", "f1", "accuracy", "fpr", "top1", "backdoor_accuracy", "epsilon"):
        if metrics.get(k) is not None:
            lines.append(f"  {k:<18} {metrics[k]:.4f}")
    return lines


def write_summary(out: Path, lines):
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args):
    corpus = read_event_log(args.log, gap=args.gap)
    write_corpus(corpus, args.out)
    machines = len({s.machine_id for s in corpus.sequences})
    print(f"V={corpus.vocab_size} machines={machines} sequences={len(corpus)}")


def cmd_synth(args):
    corpus = generate_synthetic_corpus(args.vocab, args.machines, (args.min_len, args.max_len), args.seed)
    write_corpus(corpus, args.out)
    print(f"V={corpus.vocab_size} machines={len(corpus)} sequences={len(corpus)}")


def cmd_partition(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    out = output_dir(cfg, "partition", args)
    score = non_iidness_score(fed) if fed.K >= 2 else None
    save_federation(fed, out / "federation", score)
    line = f"distribution={fed.distribution_tag} K={fed.K}"
    if score is not None:
        line += f" non_iidness={score:.4f}"
    write_summary(out, [line])


def cmd_train_central(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    mcfg = model_config(cfg, split.train.vocab_size)
    out = output_dir(cfg, "train-central", args)
    theta = nm.init_params(mcfg)
    records = []
    for ep in range(cfg["central.epochs"]):
        theta = nm.local_train(theta, mcfg, split.train, epochs=1, seed=cfg["run.root_seed"] + ep)
        records.append(RoundRecord(ep, (0,), evaluate(theta, mcfg, split.test)))
    trace = TrainingTrace(records, theta)
    trace.to_csv(out / "trace.csv")
    nm.save_params(out / "final.bin", theta, mcfg)
    write_summary(out, summary_lines("centralized", trace.final_metrics()))


def _train_fed(args, command, attack_required=None):
    cfg = load_config(args.config)
    kind = cfg["attack.kind"]
    if attack_required and kind != attack_required:
        raise ConfigError(f"attack.kind: the {command} command needs attack.kind = {attack_required}")
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    mcfg = model_config(cfg, split.train.vocab_size)
    fcfg = federation_config(cfg, args.jobs)
    out = output_dir(cfg, command, args)
    lines = [f"distribution={fed.distribution_tag} K={fed.K} policy={cfg['policy.name']}"]
    if kind == "backdoor":
        spec = backdoor_spec(cfg, split.train)
        trace, attackers = atk.run_backdoor(fed, mcfg, fcfg, spec, out_dir=out)
        lines.append(f"backdoor trigger={spec.trigger} target={spec.target} schedule={spec.schedule} "
                     f"attackers={','.join(map(str, attackers))}")
    else:
        trace = run_training(fed, mcfg, fcfg, out_dir=out)
    trace.to_csv(out / "trace.csv")
    nm.save_params(out / "final.bin", trace.final, mcfg)
    if trace.halted:
        lines.append(f"privacy budget exhausted before round {trace.halted_round}")
    metrics = dict(trace.final_metrics())
    if trace.rounds and trace.rounds[-1].epsilon is not None:
        metrics["epsilon"] = trace.rounds[-1].epsilon
    write_summary(out, lines + summary_lines("final round", metrics))
    return cfg, split, fed, mcfg, fcfg, trace, out


def cmd_train_fed(args):
    _train_fed(args, "train-fed")


def cmd_attack(args):
    _train_fed(args, "attack", attack_required="backdoor")


def _influence(cfg, fed, mcfg, theta):
    an = cfg.section("analysis")
    return influence_scores(fed, mcfg, theta, damping=an["damping"], scale=an["scale"], depth=an["influence_depth"],
                            seed=cfg["run.root_seed"])


def cmd_contribution(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    mcfg = model_config(cfg, split.train.vocab_size)
    fcfg = federation_config(cfg)
    out = output_dir(cfg, "contribution", args)
    theta = run_training(fed, mcfg, fcfg).final
    base = final_precision(fed, mcfg, fcfg, theta)
    impacts = contribution_table(fed, mcfg, fcfg, jobs=args.jobs, baseline=base)
    infl = {r.org_id: r for r in _influence(cfg, fed, mcfg, theta)}
    rows = [(c.org_id, infl[c.org_id].normalized, infl[c.org_id].raw_influence, c.impact, c.loo_precision)
            for c in impacts]
    write_csv(out / "contribution.csv", ("org_id", "influence", "raw_influence", "impact", "loo_precision"), rows)
    lines = [f"baseline precision {base:.4f}", "org_id  influence  impact"]
    lines += [f"{r[0]:>6}  {r[1]:9.4f}  {r[3]:+.4f}" for r in rows]
    write_summary(out, lines)


def cmd_influence(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    mcfg = model_config(cfg, split.train.vocab_size)
    out = output_dir(cfg, "influence", args)
    theta = run_training(fed, mcfg, federation_config(cfg, args.jobs)).final
    recs = _influence(cfg, fed, mcfg, theta)
    write_csv(out / "influence.csv", ("org_id", "raw_influence", "influence"),
              [(r.org_id, r.raw_influence, r.normalized) for r in recs])
    write_summary(out, ["org_id  influence"] + [f"{r.org_id:>6}  {r.normalized:.4f}" for r in recs])


def cmd_benefit(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    mcfg = model_config(cfg, split.train.vocab_size)
    fcfg = federation_config(cfg, args.jobs)
    out = output_dir(cfg, "benefit", args)
    theta = run_training(fed, mcfg, fcfg).final
    recs = benefit_comparison(fed, mcfg, fcfg, theta, split.test)
    write_csv(out / "benefit.csv", ("org_id", "knowledgeable", "local_precision", "aggregated_precision", "benefit"),
              [(r.org_id, int(r.knowledgeable), r.local_precision, r.aggregated_precision, r.benefit) for r in recs])
    write_summary(out, ["org_id  local  aggregated  benefit"] + [
        f"{r.org_id:>6}  {r.local_precision:.4f}  {r.aggregated_precision:.4f}  {r.benefit:+.4f}" for r in recs])


def cmd_sweep(args):
    cfg = load_config(args.config)
    split = load_data(cfg)
    mcfg = model_config(cfg, split.train.vocab_size)
    fcfg = federation_config(cfg, args.jobs)
    out = output_dir(cfg, "sweep", args)
    pts = knowledgeable_sweep(split.train, cfg["partition.K"], cfg["analysis.sweep_m"], mcfg, fcfg, split.test,
                              seed=cfg["partition.seed"])
    write_csv(out / "sweep.csv", ("m", "n_knowledgeable", "precision"), [(p.m, p.n_knowledgeable, p.precision) for p in pts])
    write_summary(out, ["m     knowledgeable  precision"] + [f"{p.m:.2f}  {p.n_knowledgeable:>13}  {p.precision:.4f}"
                                                            for p in pts])


def cmd_mia(args):
    cfg = load_config(args.config)
    if cfg["attack.kind"] != "mia":
        raise ConfigError("attack.kind: the mia command needs attack.kind = mia")
    split = load_data(cfg)
    fed = build_federation(cfg, split)
    mcfg = model_config(cfg, split.train.vocab_size)
    fcfg = federation_config(cfg, args.jobs)
    a = cfg.section("attack")
    out = output_dir(cfg, "mia", args)
    targets = atk.sample_targets(fed, a["adversary"], a["targets"], split.validation, seed=cfg["run.root_seed"])
    lo, hi = (int(x) for x in a["window"].split(":"))
    scores = atk.mia_active(fed, mcfg, fcfg, targets, a["adversary"], a["ascent_rate"], (lo, hi))
    acc, auc = atk.mia_evaluate(scores, targets.labels)
    write_csv(out / "mia_scores.csv", ("index", "member", "score"),
              [(i, int(m), float(s)) for i, (m, s) in enumerate(zip(targets.labels, scores))])
    write_summary(out, [f"membership inference adversary={a['adversary']} targets={2 * a['targets']}",
                        f"  auc                {auc:.4f}", f"  accuracy           {acc:.4f}"])


def cmd_compare(args):
    if len(args.traces) < 2:
        raise UsageError("compare needs at least two trace files")
    tables = []
    for path in args.traces:
        rows = read_trace_csv(path)
        if not rows:
            raise ConfigError(f"{path}: empty trace")
        tables.append((path, rows))
    cols = set(tables[0][1][0].keys())
    for path, rows in tables[1:]:
        if set(rows[0].keys()) != cols:
            raise ConfigError(f"{path}: trace columns differ from {tables[0][0]}")
    metrics = [c for c in TRACE_COLUMNS[2:] if any(rows[-1].get(c) for _, rows in tables)]
    name_w = max(len(str(p)) for p, _ in tables)
    lines = [f"{'trace':<{name_w}}  " + "  ".join(f"{m:>17}" for m in metrics)]
    ref = tables[0][1][-1]
    for i, (path, rows) in enumerate(tables):
        last = rows[-1]
        cells = []
        for m in metrics:
            v = last.get(m) or ""
            if not v:
                cells.append(f"{'-':>17}")
                continue
            if i and ref.get(m):
                cells.append(f"{float(v):>8.4f} ({float(v) - float(ref[m]):+.4f})")
            else:
                cells.append(f"{float(v):>17.4f}")
        lines.append(f"{str(path):<{name_w}}  " + "  ".join(cells))
    print("\n".join(lines))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedsec", description="Federated next-event prediction experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse an event log into a corpus file")
    p.add_argument("log")
    p.add_argument("out")
    p.add_argument("--gap", type=float, default=None, help="idle gap (seconds) that splits a machine's stream")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("out")
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--machines", type=int, default=2000)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("partition", cmd_partition, "partition the data and score its Non-IIDness"),
        ("train-central", cmd_train_central, "centralized baseline"),
        ("train-fed", cmd_train_fed, "federated training (with the configured attack, if any)"),
        ("run", cmd_train_fed, "alias of train-fed"),
        ("attack", cmd_attack, "federated training under a backdoor attack"),
        ("contribution", cmd_contribution, "leave-one-out impact and influence per org"),
        ("influence", cmd_influence, "influence score per org"),
        ("benefit", cmd_benefit, "local versus aggregated precision per org"),
        ("sweep", cmd_sweep, "precision versus knowledgeable fraction"),
        ("mia", cmd_mia, "active membership inference"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config")
        p.add_argument("--out", default=None, help="output directory (default: derived from the config hash)")
        p.add_argument("--force", action="store_true", help="overwrite an existing output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel local trainings; results do not change")
        p.set_defaults(func=func)

    p = sub.add_parser("compare", help="side-by-side final metrics of trace files")
    p.add_argument("traces", nargs="+")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ParseError, EmptyCorpusError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FedSecError, ValueError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
