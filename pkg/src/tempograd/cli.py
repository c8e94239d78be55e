"""Command-line driver: synth, pretrain, train, eval, pipeline and compare.

Settings come from three layers, later ones winning: built-in defaults, a
config file (``--config``), then command-line flags. Config files are flat
``key = value`` text with dotted section names::

    seed = 7
    kind = attn
    synth.n_nodes = 500
    embed.d_h = 64
    pretrain.epochs = 3
    downstream.hidden = 64,64

A ``manifest.json`` written by an earlier run is accepted as a config too.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import ast
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINE_KINDS, collapse, train_baseline
from .embed import (
    KINDS,
    CheckpointError,
    ConfigError,
    EmbedConfig,
    TemporalEmbedder,
    init_params,
    load_checkpoint,
    params_from_arrays,
    save_checkpoint,
)
from .evaluation import evaluate, tsv_line, write_report
from .numerics import ContractError
from .synth import SynthConfig, generate
from .tgraph import DatasetBundle, DatasetFormatError, build_index, load_dataset, save_dataset
from .train import (
    MLP,
    DownstreamConfig,
    NumericError,
    PretrainConfig,
    final_time_embeddings,
    pretrain,
    train_downstream,
    write_trace,
)

log = logging.getLogger("tempograd")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
SECTIONS = {"synth": SynthConfig, "embed": EmbedConfig, "pretrain": PretrainConfig,
            "downstream": DownstreamConfig}
DISPLAY = {"attn": "TGN(Attn)", "sum": "TGN(Sum)", "mean": "TGN(Mean)", "conv": "TGN(Conv)",
           "mlp": "MLP", "gcn": "GCN", "sage": "GraphSAGE"}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 42
    kind: str = "mean"
    dataset: str | None = None
    use_synth: bool = False
    out: str = "run"
    baselines: tuple = BASELINE_KINDS
    synth: SynthConfig = field(default_factory=SynthConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    downstream: DownstreamConfig = field(default_factory=DownstreamConfig)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("baselines",):
            out[key] = list(out[key])
        for sec in SECTIONS:
            out[sec] = {k: list(v) if isinstance(v, tuple) else v for k, v in out[sec].items()}
        return out


# config files -------------------------------------------------------------------


def _coerce(value, like, where: str):
    """Convert ``value`` (text or JSON value) to the type of default ``like``."""
    try:
        if isinstance(like, bool):
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return text in ("true", "1", "yes")
        if isinstance(like, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            if isinstance(value, str):
                text = value.strip().strip("()[]")
                items = [t for t in (s.strip() for s in text.split(",")) if t]
                value = [ast.literal_eval(t) for t in items]
            elem = like[0] if like else 0
            return tuple(_coerce(v, elem, where) for v in value)
        if like is None or isinstance(like, str):
            return None if value is None else str(value)
    except (ValueError, TypeError, SyntaxError) as exc:
        raise DataError(f"{where}: cannot read {value!r} as {type(like).__name__}") from exc
    return value


def _apply(cfg: RunConfig, key: str, value, where: str) -> None:
    if "." in key:
        sec, name = key.split(".", 1)
        if sec not in SECTIONS:
            raise DataError(f"{where}: unknown section {sec!r}")
        target = getattr(cfg, sec)
        known = {f.name for f in fields(target)}
        if name not in known:
            raise DataError(f"{where}: unknown key {key!r}")
        setattr(target, name, _coerce(value, getattr(target, name), where))
        return
    known = {f.name for f in fields(cfg)} - set(SECTIONS)
    if key not in known:
        raise DataError(f"{where}: unknown key {key!r}")
    setattr(cfg, key, _coerce(value, getattr(cfg, key), where))


def read_config(path, cfg: RunConfig | None = None) -> RunConfig:
    """Layer the settings in ``path`` (``key = value`` text or a manifest) onto ``cfg``."""
    cfg = cfg or RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot read config ({exc.strerror})") from exc
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        doc = doc.get("config", doc)
        for key, value in doc.items():
            if key in SECTIONS:
                if value is None:
                    continue
                for name, v in value.items():
                    _apply(cfg, f"{key}.{name}", v, str(path))
            else:
                _apply(cfg, key, value, str(path))
        return cfg
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        _apply(cfg, key, value, f"{path}:{lineno}")
    return cfg


def resolve(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        read_config(args.config, cfg)
    for name in ("seed", "kind", "dataset", "out"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "synth_defaults", False):
        cfg.use_synth = True
    # one seed drives generation, initialization, negatives and batching
    for sec in ("synth", "pretrain", "downstream"):
        getattr(cfg, sec).seed = cfg.seed
    cfg.embed.kind = cfg.kind
    try:
        cfg.synth.validate()
        cfg.embed.validate()
        cfg.pretrain.validate()
        cfg.downstream.validate()
    except (ConfigError, ContractError) as exc:
        raise DataError(str(exc)) from exc
    if cfg.kind not in KINDS:
        raise UsageError(f"unknown kind {cfg.kind!r}; choose from {', '.join(KINDS)}")
    unknown = set(cfg.baselines) - set(BASELINE_KINDS)
    if unknown:
        raise DataError(f"unknown baselines {sorted(unknown)}")
    return cfg


# phases -------------------------------------------------------------------------


def get_bundle(cfg: RunConfig, required: bool = True) -> DatasetBundle:
    if cfg.dataset:
        return load_dataset(cfg.dataset)
    if cfg.use_synth:
        return generate(cfg.synth)
    raise UsageError("no data: pass --dataset DIR or --synth-defaults")


def write_manifest(cfg: RunConfig, out: Path, command: str) -> None:
    doc = {"command": command, "version": __version__, "config": cfg.to_dict()}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_pretrain(cfg: RunConfig, bundle: DatasetBundle, out: Path, kind: str, metrics: Path):
    econf = EmbedConfig(**{**asdict(cfg.embed), "kind": kind})
    index = build_index(bundle.edges, bundle.n_nodes, econf.mode)
    params = init_params(econf, bundle.d_v, bundle.d_e, seed=cfg.seed)
    log.info("pretraining %s on %d edges", kind, len(bundle.edges))
    params, trace = pretrain(bundle, econf, params, cfg.pretrain, index=index)
    for rec in trace:
        rec["model"] = kind
    write_trace(trace, metrics)
    save_checkpoint(out / f"encoder-{kind}.ckpt", params,
                    {"embed": asdict(econf), "d_v": bundle.d_v, "d_e": bundle.d_e})
    return econf, params, index


def load_encoder(path: Path, bundle: DatasetBundle):
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    meta, arrays = load_checkpoint(path)
    try:
        econf = EmbedConfig(**meta["embed"])
        econf.validate()
    except (KeyError, TypeError, ConfigError) as exc:
        raise DataError(f"{path}: checkpoint config is not an encoder config") from exc
    if (meta.get("d_v"), meta.get("d_e")) != (bundle.d_v, bundle.d_e):
        raise DataError(f"{path}: encoder expects d_v={meta.get('d_v')}, d_e={meta.get('d_e')} "
                        f"but dataset has d_v={bundle.d_v}, d_e={bundle.d_e}")
    return econf, params_from_arrays(arrays)


def embeddings_for(econf, params, bundle, index=None) -> np.ndarray:
    index = index or build_index(bundle.edges, bundle.n_nodes, econf.mode)
    return final_time_embeddings(TemporalEmbedder(econf, params, index, bundle.nodes))


def run_downstream(cfg: RunConfig, bundle, z: np.ndarray, out: Path, kind: str, metrics: Path):
    decoder, trace = train_downstream(z, bundle.nodes, cfg.downstream)
    for rec in trace:
        rec["model"] = kind
    write_trace(trace, metrics)
    save_checkpoint(out / f"decoder-{kind}.ckpt", decoder.named(), {"hidden": list(cfg.downstream.hidden)})
    return decoder


def load_decoder(path: Path) -> MLP:
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    _, arrays = load_checkpoint(path)
    try:
        return MLP.from_arrays(arrays)
    except KeyError as exc:
        raise DataError(f"{path}: not a decoder checkpoint (missing {exc})") from exc


def record_eval(report: dict, kind: str, metrics: Path) -> None:
    write_trace([{"phase": "eval", "model": kind, **report}], metrics)


def comparison_table(reports: dict) -> str:
    """Rows sorted by test AUC, then the relative gain of the best TGN over the best baseline."""
    rows = sorted(reports.items(), key=lambda kv: -kv[1]["test_auc"])
    lines = ["model\tvalid_auc\ttest_auc"]
    lines += [tsv_line(DISPLAY.get(name, name), rep) for name, rep in rows]
    tgn = [r for k, r in reports.items() if k in KINDS]
    base = [r for k, r in reports.items() if k in BASELINE_KINDS]
    if tgn and base:
        gains = []
        for col in ("valid_auc", "test_auc"):
            best_t = max(r[col] for r in tgn)
            best_b = max(r[col] for r in base)
            gains.append(f"{100.0 * (best_t - best_b) / best_b:.2f}%")
        lines.append("improv.\t" + "\t".join(gains))
    return "\n".join(lines) + "\n"


# subcommands --------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> None:
    out = _outdir(cfg)
    bundle = generate(cfg.synth)
    save_dataset(bundle, out)
    write_manifest(cfg, out, "synth")
    log.info("wrote %d nodes and %d edges to %s", bundle.n_nodes, len(bundle.edges), out)


def cmd_pretrain(cfg: RunConfig) -> None:
    bundle = get_bundle(cfg)
    out = _outdir(cfg)
    run_pretrain(cfg, bundle, out, cfg.kind, out / "metrics.jsonl")
    write_manifest(cfg, out, "pretrain")


def cmd_train(cfg: RunConfig, checkpoint: str | None) -> None:
    bundle = get_bundle(cfg)
    out = _outdir(cfg)
    econf, params = load_encoder(Path(checkpoint or out / f"encoder-{cfg.kind}.ckpt"), bundle)
    run_downstream(cfg, bundle, embeddings_for(econf, params, bundle), out, econf.kind,
                   out / "metrics.jsonl")
    write_manifest(cfg, out, "train")


def cmd_eval(cfg: RunConfig, checkpoint: str | None, decoder_path: str | None) -> None:
    out = Path(cfg.out)
    enc_path = Path(checkpoint or out / f"encoder-{cfg.kind}.ckpt")
    dec_path = Path(decoder_path or out / f"decoder-{cfg.kind}.ckpt")
    for path in (enc_path, dec_path):
        if not path.exists():
            raise DataError(f"{path}: checkpoint not found")
    bundle = get_bundle(cfg)
    out = _outdir(cfg)
    econf, params = load_encoder(enc_path, bundle)
    decoder = load_decoder(dec_path)
    report = evaluate(decoder, embeddings_for(econf, params, bundle), bundle.nodes)
    write_report(report, DISPLAY[econf.kind], out / "report.json", out / "report.tsv")
    record_eval(report, econf.kind, out / "metrics.jsonl")
    write_manifest(cfg, out, "eval")
    print(tsv_line(DISPLAY[econf.kind], report))


def cmd_pipeline(cfg: RunConfig) -> dict:
    bundle = get_bundle(cfg)
    out = _outdir(cfg)
    metrics = out / "metrics.jsonl"
    metrics.write_text("")
    report = _tgn_run(cfg, bundle, out, cfg.kind, metrics)
    write_report(report, DISPLAY[cfg.kind], out / "report.json", out / "report.tsv")
    (out / "table.tsv").write_text(comparison_table({cfg.kind: report}))
    write_manifest(cfg, out, "pipeline")
    print(tsv_line(DISPLAY[cfg.kind], report))
    return report


def _tgn_run(cfg: RunConfig, bundle, out: Path, kind: str, metrics: Path) -> dict:
    econf, params, index = run_pretrain(cfg, bundle, out, kind, metrics)
    z = embeddings_for(econf, params, bundle, index)
    decoder = run_downstream(cfg, bundle, z, out, kind, metrics)
    report = evaluate(decoder, z, bundle.nodes)
    record_eval(report, kind, metrics)
    return report


def cmd_compare(cfg: RunConfig) -> dict:
    bundle = get_bundle(cfg)
    out = _outdir(cfg)
    metrics = out / "metrics.jsonl"
    metrics.write_text("")
    reports = {}
    graph = collapse(bundle)
    for kind in cfg.baselines:
        log.info("training baseline %s", kind)
        _, report, trace = train_baseline(kind, graph, bundle.nodes, cfg.downstream)
        for rec in trace:
            rec["model"] = kind
        write_trace(trace, metrics)
        record_eval(report, kind, metrics)
        reports[kind] = report
    for kind in KINDS:
        reports[kind] = _tgn_run(cfg, bundle, out, kind, metrics)
    table = comparison_table(reports)
    (out / "table.tsv").write_text(table)
    write_manifest(cfg, out, "compare")
    sys.stdout.write(table)
    return reports


# entry point --------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value file or manifest.json")
    common.add_argument("--seed", type=int, help="seed for every random choice (default 42)")
    common.add_argument("--out", metavar="DIR", help="output directory (default ./run)")
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", metavar="DIR", help="directory with nodes.tsv and edges.tsv")
    data.add_argument("--synth-defaults", action="store_true",
                      help="generate the synthetic fraud graph instead of reading one")
    data.add_argument("--kind", choices=KINDS, help="embedding module (default mean)")

    ckpt = argparse.ArgumentParser(add_help=False)
    ckpt.add_argument("--checkpoint", metavar="PATH",
                      help="encoder checkpoint (default OUT/encoder-KIND.ckpt)")

    parser = _Parser(prog="tempograd", description="Temporal graph anomaly detection.")
    parser.add_argument("--version", action="version", version=f"tempograd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset to OUT")
    sub.add_parser("pretrain", parents=[common, data], help="link-prediction pretraining")
    sub.add_parser("train", parents=[common, data, ckpt], help="fit the decoder on frozen embeddings")
    ev = sub.add_parser("eval", parents=[common, data, ckpt], help="report valid/test AUC")
    ev.add_argument("--decoder", metavar="PATH", help="decoder checkpoint (default OUT/decoder-KIND.ckpt)")
    sub.add_parser("pipeline", parents=[common, data], help="pretrain, train and eval one kind")
    sub.add_parser("compare", parents=[common, data], help="all four kinds plus static baselines")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(name)s: %(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "pretrain":
            cmd_pretrain(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.checkpoint)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.decoder)
        elif args.command == "pipeline":
            cmd_pipeline(cfg)
        else:
            cmd_compare(cfg)
    except UsageError as exc:
        print(f"tempograd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetFormatError, CheckpointError) as exc:
        print(f"tempograd: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"tempograd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
