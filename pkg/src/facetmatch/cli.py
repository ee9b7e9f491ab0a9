"""Command-line entry point: data generation, training, evaluation and self-training runs.

Every option can also come from a ``key=value`` config file (``--config``);
explicit flags win over file values.  Each run echoes its resolved
configuration to ``<out>/config.txt``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import synthio
from .captioner import CaptionerConfig, DiffCaptioner, caption_metrics, caption_pairs, train_captioner
from .model import RetrievalNet
from .selftrain import STRATEGIES, AttributeBagPort, MatcherPort, MiningStrategy, mine_pairs, run_paradigm
from .trainer import ABLATIONS, Checkpoint, RecallReport, TrainConfig, evaluate, score_triplets, train, write_metrics

log = logging.getLogger("facetmatch")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- config handling


def read_config_file(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; keys may use dashes or underscores."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise CliError(f"cannot read config file {path}: {e}") from e
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def default_seed() -> int:
    env = os.environ.get("LIMN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as e:
        raise CliError(f"LIMN_SEED must be an integer, got {env!r}") from e


def resolve(parser: argparse.ArgumentParser, ns: argparse.Namespace, defaults: dict) -> dict:
    """Merge defaults < config file < explicit flags into one plain dict."""
    given = vars(ns)
    from_file = read_config_file(given["config"]) if given.get("config") else {}
    out = {}
    for action in parser._actions:
        dest = action.dest
        if dest in ("help", "config", "command"):
            continue
        raw = from_file.pop(dest, None)
        if dest in given:
            out[dest] = given[dest]
        elif raw is not None:
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    out[dest] = _parse_bool(raw)
                elif isinstance(action, argparse._AppendAction):
                    out[dest] = [v.strip() for v in raw.split(",") if v.strip()]
                else:
                    out[dest] = action.type(raw) if action.type else raw
            except ValueError as e:
                raise CliError(f"config key {dest}: {e}") from e
        else:
            out[dest] = defaults.get(dest)
        if action.choices is not None and out[dest] is not None:
            vals = out[dest] if isinstance(out[dest], list) else [out[dest]]
            bad = [v for v in vals if v not in action.choices]
            if bad:
                raise CliError(f"{dest}: invalid choice {bad[0]!r} (choose from {', '.join(map(str, action.choices))})")
    if from_file:
        raise CliError(f"unknown config keys: {', '.join(sorted(from_file))}")
    return out


def echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    lines = [f"command={command}"]
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, list):
            v = ",".join(map(str, v))
        lines.append(f"{k}={'' if v is None else v}")
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise CliError(f"output directory {out} is not writable: {e}") from e
    return out


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- data helpers


def parse_slots(text: str | None):
    """``name:v1,v2;name2:w1,w2`` -> slots; None gives the default world."""
    if not text:
        return None
    spec = []
    for part in text.split(";"):
        if ":" not in part:
            raise CliError(f"bad slot spec {part!r}; expected name:v1,v2")
        name, vals = part.split(":", 1)
        values = [v.strip() for v in vals.split(",") if v.strip()]
        if len(values) < 2:
            raise CliError(f"slot {name!r} needs at least two values")
        spec.append((name.strip(), values))
    return synthio.slots_from_spec(spec)


def load_data(data_dir: str | Path):
    d = Path(data_dir)
    for name in ("items.jsonl", "world.json"):
        if not (d / name).exists():
            raise CliError(f"{d / name} not found; run gen-data first")
    return synthio.read_catalog(d / "items.jsonl", d / "world.json")


def load_split(data_dir: str | Path, split: str) -> list[synthio.Triplet]:
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise CliError(f"{path} not found")
    return synthio.read_triplets(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    if not Path(path).exists() or not Path(str(path) + ".bin").exists():
        raise CliError(f"checkpoint {path} not found")
    return Checkpoint.load(path)


def subsample(triplets: list, fraction: float, seed: int) -> list:
    if not 0 < fraction <= 1:
        raise CliError("fraction must lie in (0, 1]")
    if fraction == 1:
        return triplets
    n = max(1, int(round(len(triplets) * fraction)))
    keep = np.sort(np.random.default_rng([seed, 60]).choice(len(triplets), size=n, replace=False))
    return [triplets[i] for i in keep]


def recall_table(reports: dict[str, RecallReport]) -> str:
    ks = sorted({k for r in reports.values() for k in r.recalls})
    head = ["split"] + [f"R@{k}" for k in ks] + ["avg"]
    rows = [head]
    for name, r in sorted(reports.items()):
        rows.append([name] + [f"{100 * r.recalls[k]:.2f}" for k in ks] + [f"{100 * r.average:.2f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in rows)


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: dict) -> int:
    out = _out_dir(cfg)
    slots = parse_slots(cfg["slots"])
    catalog = synthio.generate_catalog(cfg["items"], slots=slots, seed=cfg["seed"], sigma=cfg["sigma"])
    triplets = synthio.make_triplets(catalog, cfg["triplets"], max_edits=cfg["max_edits"], seed=cfg["seed"])
    tr, va, te = synthio.split_triplets(triplets, seed=cfg["seed"])
    synthio.write_items(out / "items.jsonl", catalog)
    synthio.write_world(out / "world.json", catalog)
    synthio.write_vocab(out / "vocab.json", catalog.vocab)
    synthio.write_triplets(out / "triplets.jsonl", triplets)
    for name, part in (("train", tr), ("val", va), ("test", te)):
        synthio.write_triplets(out / f"{name}.jsonl", part)
    echo_config(out, "gen-data", cfg)
    print(f"items: {len(catalog)}  triplets: {len(triplets)} (train {len(tr)}, val {len(va)}, test {len(te)})")
    print(f"slots: {', '.join(f'{s.name}({len(s.values)})' for s in catalog.slots)}  vocab: {len(catalog.vocab)}")
    return 0


def train_config_from(cfg: dict) -> TrainConfig:
    ablations = set(cfg.get("ablation") or [])
    if "one_factor" in ablations and cfg.get("u") not in (None, 1):
        raise CliError("--ablation one_factor conflicts with --u other than 1")
    fields = dict(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        decay_epoch=cfg["decay_epoch"],
        seed=cfg["seed"],
        n_tokens=cfg["u"] if cfg["u"] is not None else 8,
        lam=cfg["lam"],
        tau=cfg["tau"],
        temperature_mode=cfg["temperature_mode"],
        dim=cfg["dim"],
        layers=cfg["layers"],
        heads=cfg["heads"],
        max_len=cfg["max_len"],
    )
    for a in ablations:
        fields[a] = True
    try:
        return TrainConfig(**fields)
    except ValueError as e:
        raise CliError(str(e)) from e


def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    tcfg = train_config_from(cfg)
    catalog = load_data(cfg["data"])
    triplets = subsample(load_split(cfg["data"], "train"), cfg["fraction"], cfg["seed"])
    ckpt = train(triplets, catalog, tcfg)
    ckpt.save(out / "model.json")
    reports = {s: evaluate(ckpt, load_split(cfg["data"], s), catalog, ks=cfg["ks"]) for s in ("val", "test")}
    echo_config(out, "train", cfg)
    write_metrics(out, cfg, ckpt, reports)
    print(recall_table(reports))
    return 0


def cmd_eval(cfg: dict) -> int:
    out = _out_dir(cfg)
    catalog = load_data(cfg["data"])
    if cfg["untrained"]:
        tcfg = train_config_from(cfg)
        ckpt = Checkpoint(RetrievalNet(tcfg.net_config(catalog), seed=tcfg.seed), tcfg)
    elif cfg["checkpoint"]:
        ckpt = load_checkpoint(cfg["checkpoint"])
    else:
        raise CliError("eval needs --checkpoint (or --untrained for the random baseline)")
    queries = load_split(cfg["data"], cfg["split"])
    reports = {cfg["split"]: evaluate(ckpt, queries, catalog, ks=cfg["ks"], workers=cfg["workers"])}
    echo_config(out, "eval", cfg)
    write_metrics(out, cfg, ckpt, reports)
    print(recall_table(reports))
    return 0


def cmd_score(cfg: dict) -> int:
    out = _out_dir(cfg)
    catalog = load_data(cfg["data"])
    if not cfg["checkpoint"]:
        raise CliError("score needs --checkpoint")
    ckpt = load_checkpoint(cfg["checkpoint"])
    if cfg["triplets"]:
        triplets = synthio.read_triplets(cfg["triplets"])
    elif cfg["ref"] is not None and cfg["tgt"] is not None and cfg["caption"]:
        words = cfg["caption"].split()
        unknown = [w for w in words if w not in catalog.vocab.index]
        if unknown:
            raise CliError(f"caption has out-of-vocabulary words: {' '.join(unknown)}")
        triplets = [synthio.Triplet(cfg["ref"], cfg["tgt"], catalog.vocab.encode(words))]
    else:
        raise CliError("score needs --triplets FILE or --ref, --tgt and --caption")
    scores = score_triplets(ckpt, triplets, catalog)
    rows = [dict(synthio.triplet_to_dict(t), score=float(s)) for t, s in zip(triplets, scores)]
    synthio._write_lines(out / "scores.jsonl", rows)
    echo_config(out, "score", cfg)
    for t, s in zip(triplets[:20], scores):
        print(f"{t.ref_id:>6} -> {t.tgt_id:<6} {float(s):+.6f}  {' '.join(catalog.caption_words(t.caption))}")
    if len(triplets) > 20:
        print(f"... {len(triplets) - 20} more in scores.jsonl")
    return 0


def mining_strategy_from(cfg: dict) -> MiningStrategy:
    try:
        return MiningStrategy(cfg["strategy"], budget=cfg["budget"], band_stat=cfg["band_stat"])
    except ValueError as e:
        raise CliError(str(e)) from e


def cmd_mine_pairs(cfg: dict) -> int:
    out = _out_dir(cfg)
    catalog = load_data(cfg["data"])
    strategy = mining_strategy_from(cfg)
    labeled = load_split(cfg["data"], "train")
    model = load_checkpoint(cfg["checkpoint"]) if cfg["checkpoint"] else None
    pool = sorted({t.ref_id for t in labeled} | {t.tgt_id for t in labeled})
    try:
        pairs = mine_pairs(catalog, strategy, MatcherPort(), model, labeled, pool, seed=cfg["seed"])
    except ValueError as e:
        raise CliError(str(e)) from e
    synthio.write_pairs(out / "pairs.jsonl", pairs)
    echo_config(out, "mine-pairs", cfg)
    print(f"{len(pairs)} pairs mined with {strategy.kind} from {len(pool)} items")
    return 0


def captioner_config_from(cfg: dict) -> CaptionerConfig:
    return CaptionerConfig(hidden=cfg["cap_hidden"], epochs=cfg["cap_epochs"], seed=cfg["seed"])


def cmd_caption(cfg: dict) -> int:
    out = _out_dir(cfg)
    catalog = load_data(cfg["data"])
    if cfg["captioner"]:
        if not Path(cfg["captioner"]).exists():
            raise CliError(f"captioner {cfg['captioner']} not found")
        model = DiffCaptioner.load(cfg["captioner"], catalog)
    else:
        train_set = subsample(load_split(cfg["data"], "train"), cfg["fraction"], cfg["seed"])
        model = train_captioner(train_set, catalog, captioner_config_from(cfg))
        model.save(out / "captioner.json")
    if cfg["pairs"]:
        pairs = [(p.ref_id, p.tgt_id) for p in synthio.read_pairs(cfg["pairs"])]
    else:
        pairs = [(t.ref_id, t.tgt_id) for t in load_split(cfg["data"], cfg["split"])]
    caps = caption_pairs(model, catalog, pairs, noise=cfg["noise"], seed=cfg["seed"])
    synthio.write_captions(out / "captions.jsonl", [(r, t, c) for (r, t), c in zip(pairs, caps)], model.fingerprint())
    metrics = caption_metrics(model, catalog, load_split(cfg["data"], cfg["split"]))
    echo_config(out, "caption", cfg)
    _dump_json(out / "caption_metrics.json", {"split": cfg["split"], **metrics.to_dict()})
    print(f"{len(caps)} captions written; {cfg['split']} BLEU-1 {metrics.bleu1:.4f}  ROUGE-L {metrics.rouge_l:.4f}")
    return 0


def cmd_self_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    catalog = load_data(cfg["data"])
    original = subsample(load_split(cfg["data"], "train"), cfg["fraction"], cfg["seed"])
    val = load_split(cfg["data"], "val")
    port = MatcherPort(train_config_from(cfg), ks=tuple(cfg["ks"])) if cfg["port"] == "matcher" else AttributeBagPort(ks=tuple(cfg["ks"]))
    result = run_paradigm(
        original,
        val,
        catalog,
        port,
        mining_strategy_from(cfg),
        kappa=cfg["kappa"],
        max_iters=cfg["max_iters"],
        epsilon=cfg["epsilon"],
        captioner_config=captioner_config_from(cfg),
        caption_noise=cfg["noise"],
        seed=cfg["seed"],
    )
    echo_config(out, "self-train", cfg)
    result.write_report(out / "selftrain_report.json", cfg)
    if isinstance(result.best_model, Checkpoint):
        result.best_model.save(out / "best_model.json")
    result.best_captioner.save(out / "best_captioner.json")
    for r in result.history:
        print(
            f"iteration {r.iteration}: pairs {r.n_pairs:>5}  train {r.train_size:>5}  "
            f"avg recall {100 * r.recall.average:.2f}  caption avg {r.caption.average:.4f}"
        )
    print(f"best iteration {result.best_iteration}; stopped: {result.stop_reason}")
    return 0


def cmd_report(cfg: dict) -> int:
    out = _out_dir(cfg)
    runs = cfg["runs"] or []
    if not runs:
        raise CliError("report needs at least one --runs directory")
    lines = []
    for run in runs:
        d = Path(run)
        found = False
        if (d / "metrics.json").exists():
            found = True
            doc = json.loads((d / "metrics.json").read_text(encoding="utf-8"))
            reports = {
                name: RecallReport({int(k): v for k, v in r["recall"].items()}, r["gallery_size"], r["n_queries"])
                for name, r in doc["reports"].items()
            }
            lines += [f"== {run} (retrieval)", recall_table(reports), ""]
        if (d / "selftrain_report.json").exists():
            found = True
            doc = json.loads((d / "selftrain_report.json").read_text(encoding="utf-8"))
            lines.append(f"== {run} (self-training, best iteration {doc['best_iteration']}, {doc['stop_reason']})")
            lines.append("iter  pairs  train  avg_recall  caption_avg")
            for it in doc["iterations"]:
                lines.append(
                    f"{it['iteration']:>4}  {it['pairs']:>5}  {it['train_size']:>5}  "
                    f"{100 * it['recall']['average']:>10.2f}  {it['caption']['average']:>11.4f}"
                )
            lines.append("")
        if not found:
            raise CliError(f"{run} holds neither metrics.json nor selftrain_report.json")
    text = "\n".join(lines)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    echo_config(out, "report", cfg)
    print(text)
    return 0


# ---------------------------------------------------------------- parser


def _ks(text: str) -> list[int]:
    try:
        ks = sorted({int(k) for k in text.split(",") if k.strip()})
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad k list {text!r}") from e
    if not ks or ks[0] < 1:
        raise argparse.ArgumentTypeError("k values must be positive integers")
    return ks


DEFAULTS = {
    "out": "out",
    "items": 500,
    "triplets": None,
    "max_edits": 2,
    "sigma": 0.1,
    "slots": None,
    "data": "data",
    "epochs": 20,
    "batch_size": 32,
    "lr": 2e-3,
    "decay_epoch": 10,
    "u": None,
    "lam": 0.1,
    "tau": 10.0,
    "temperature_mode": "multiply",
    "dim": 32,
    "layers": 2,
    "heads": 4,
    "max_len": 32,
    "ablation": [],
    "fraction": 1.0,
    "ks": [1, 10, 50],
    "checkpoint": None,
    "untrained": False,
    "split": "test",
    "workers": 1,
    "ref": None,
    "tgt": None,
    "caption": None,
    "strategy": "taxonomy_visual",
    "budget": None,
    "band_stat": "variance",
    "captioner": None,
    "pairs": None,
    "noise": 0.0,
    "cap_hidden": 64,
    "cap_epochs": 30,
    "kappa": None,
    "max_iters": 3,
    "epsilon": 0.001,
    "port": "matcher",
    "runs": [],
}

S = argparse.SUPPRESS


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=S, help="key=value config file; flags override it")
    p.add_argument("--out", default=S, help="output directory (default: out)")
    p.add_argument("--seed", type=int, default=S, help="master seed (default: $LIMN_SEED or 0)")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--batch-size", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--decay-epoch", type=int, default=S)
    p.add_argument("--u", type=int, default=S, help="number of matching tokens (default 8)")
    p.add_argument("--lambda", dest="lam", type=float, default=S, help="ortho weight (default 0.1)")
    p.add_argument("--tau", type=float, default=S)
    p.add_argument("--temperature-mode", choices=("multiply", "divide"), default=S)
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--layers", type=int, default=S)
    p.add_argument("--heads", type=int, default=S)
    p.add_argument("--max-len", type=int, default=S)
    p.add_argument("--ablation", action="append", choices=ABLATIONS, default=S, help="repeatable")


def _data_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", default=S, help="directory written by gen-data (default: data)")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="facetmatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["gen-data"] = sub.add_parser("gen-data", help="generate a synthetic catalog and triplets")
    _common(p)
    p.add_argument("--items", type=int, default=S)
    p.add_argument("--triplets", type=int, default=S, help="default: 4 x items")
    p.add_argument("--max-edits", type=int, default=S)
    p.add_argument("--sigma", type=float, default=S, help="render noise std")
    p.add_argument("--slots", default=S, help="name:v1,v2;name2:w1,w2 (default: the clothing world)")

    p = subs["train"] = sub.add_parser("train", help="train the retrieval network")
    _common(p)
    _data_flag(p)
    _train_flags(p)
    p.add_argument("--fraction", type=float, default=S, help="train on a seeded subset of the train split")
    p.add_argument("--ks", type=_ks, default=S)

    p = subs["eval"] = sub.add_parser("eval", help="recall@k of a checkpoint")
    _common(p)
    _data_flag(p)
    _train_flags(p)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--untrained", action="store_true", default=S, help="evaluate a freshly initialised network")
    p.add_argument("--split", choices=("train", "val", "test"), default=S)
    p.add_argument("--ks", type=_ks, default=S)
    p.add_argument("--workers", type=int, default=S)

    p = subs["score"] = sub.add_parser("score", help="match scores of triplets")
    _common(p)
    _data_flag(p)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--triplets", default=S, help="triplets jsonl to score")
    p.add_argument("--ref", type=int, default=S)
    p.add_argument("--tgt", type=int, default=S)
    p.add_argument("--caption", default=S, help="modification text, space separated")

    p = subs["mine-pairs"] = sub.add_parser("mine-pairs", help="mine unlabeled reference-target pairs")
    _common(p)
    _data_flag(p)
    p.add_argument("--strategy", choices=STRATEGIES, default=S)
    p.add_argument("--checkpoint", default=S, help="trained model for similarity-based strategies")
    p.add_argument("--budget", type=int, default=S)
    p.add_argument("--band-stat", choices=("variance", "std"), default=S)

    p = subs["caption"] = sub.add_parser("caption", help="train / apply the difference captioner")
    _common(p)
    _data_flag(p)
    p.add_argument("--captioner", default=S, help="saved captioner; trained on the train split if absent")
    p.add_argument("--pairs", default=S, help="pairs jsonl to caption (default: the --split triplets)")
    p.add_argument("--split", choices=("train", "val", "test"), default=S)
    p.add_argument("--noise", type=float, default=S)
    p.add_argument("--fraction", type=float, default=S)
    p.add_argument("--cap-hidden", type=int, default=S)
    p.add_argument("--cap-epochs", type=int, default=S)

    p = subs["self-train"] = sub.add_parser("self-train", help="iterative dual self-training")
    _common(p)
    _data_flag(p)
    _train_flags(p)
    p.add_argument("--port", choices=("matcher", "bag"), default=S, help="retrieval model in the loop")
    p.add_argument("--strategy", choices=STRATEGIES, default=S)
    p.add_argument("--budget", type=int, default=S)
    p.add_argument("--band-stat", choices=("variance", "std"), default=S)
    p.add_argument("--kappa", type=int, default=S, help="pseudo triplets kept (default: train size)")
    p.add_argument("--max-iters", type=int, default=S)
    p.add_argument("--epsilon", type=float, default=S, help="stop gain, recall fraction (0.001 = 0.1 points)")
    p.add_argument("--fraction", type=float, default=S)
    p.add_argument("--noise", type=float, default=S)
    p.add_argument("--cap-hidden", type=int, default=S)
    p.add_argument("--cap-epochs", type=int, default=S)
    p.add_argument("--ks", type=_ks, default=S)

    p = subs["report"] = sub.add_parser("report", help="tabulate metrics of finished runs")
    _common(p)
    p.add_argument("--runs", action="append", default=S, help="run directory (repeatable)")
    return parser, subs


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "score": cmd_score,
    "mine-pairs": cmd_mine_pairs,
    "caption": cmd_caption,
    "self-train": cmd_self_train,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser, subs = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        defaults = dict(DEFAULTS, seed=default_seed())
        cfg = resolve(subs[ns.command], ns, defaults)
        if ns.command == "gen-data" and cfg["triplets"] is None:
            cfg["triplets"] = 4 * cfg["items"]
        return COMMANDS[ns.command](cfg)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
