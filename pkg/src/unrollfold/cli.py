"""Command-line entry point: ``unrollfold {predict,train,eval,convert,oracle-check}``.

stdout carries data (reports, logs meant for files); stderr carries the
resolved configuration, warnings and errors.

Exit codes:
    0  success (including an empty FASTA input)
    1  unexpected internal failure
    2  model checkpoint missing or unreadable
    3  unparsable input file (message names file and line)
    4  bad usage or configuration (including a dbn output that needs
       more than four bracket layers)
    5  oracle-check pass rate below the required fraction
    6  training diverged
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__, ioformats, model as model_io, oracle, train
from .core import RnaSequence, matrix_to_pairs, validate_structure
from .evaluation import evaluate
from .ioformats import FormatError, StructureRecord
from .viz import arc_diagram_svg

EXIT_OK, EXIT_INTERNAL, EXIT_MODEL, EXIT_INPUT, EXIT_USAGE, EXIT_CHECK, EXIT_DIVERGED = range(7)

log = logging.getLogger("unrollfold")

# per-subcommand option defaults; a --config file may override, explicit flags win
DEFAULTS = {
    "predict": {"model": None, "out_dir": ".", "out_format": "ct", "classic": False,
                "svg": False, "threshold": 0.5},
    "train": {"data": None, "out": "model.json", "synthetic": 0, "valid_fraction": 0.1, "log": None,
              "pretrain_only": False},
    "eval": {"records": None},
    "convert": {"to": None},
    "oracle-check": {"trials": 200, "min_len": 6, "max_len": 12, "density": 0.3,
                     "target": 0.95, "required": 0.9},
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _StderrHandler(logging.Handler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    def emit(self, record):
        print(self.format(record), file=sys.stderr)


def _setup_logging():
    root = logging.getLogger("unrollfold")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        h = _StderrHandler()
        h.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        root.addHandler(h)
    root.setLevel(logging.INFO)
    root.propagate = False


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _global_flags(p, suppress: bool):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (default 0)")
    p.add_argument("--config", default=d, help="JSON configuration file")
    p.add_argument("--threads", type=int, default=d, help="worker threads for prediction (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="unrollfold", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("predict", parents=[common], help="predict structures for FASTA/CT/BPSEQ/dbn inputs",
                       description="Outputs are named after the FASTA record id, or after the input "
                                   "file name for structure-file inputs.")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--model")
    p.add_argument("--out-dir")
    p.add_argument("--out-format", choices=["ct", "bpseq", "dbn"])
    p.add_argument("--classic", action="store_const", const=True,
                   help="decode with the convergent solver instead of the unrolled network")
    p.add_argument("--svg", action="store_const", const=True, help="also write an arc diagram per sequence")
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("train", parents=[common], help="pre-train and fine-tune a model")
    p.add_argument("data", nargs="?", help="directory of structure files (family = first subdirectory)")
    p.add_argument("--synthetic", type=int, help="train on this many synthetic hairpins instead")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--valid-fraction", type=float)
    p.add_argument("--log", help="also write the epoch log to this file")
    p.add_argument("--pretrain-only", action="store_const", const=True)

    p = sub.add_parser("eval", parents=[common], help="score a prediction directory against truth")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("--records", help="write per-sequence JSON lines here")

    p = sub.add_parser("convert", parents=[common], help="transcode between ct, bpseq and dbn")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--to", choices=["ct", "bpseq", "dbn"])

    p = sub.add_parser("oracle-check", parents=[common], help="compare the convergent solver with the exact decoder")
    p.add_argument("--trials", type=int)
    p.add_argument("--min-len", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--target", type=float)
    p.add_argument("--required", type=float)
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read config {path}: {e}", EXIT_USAGE) from None
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold a JSON object", EXIT_USAGE)
    return doc


def resolve(args) -> dict:
    """Merge defaults, config file and explicit flags into one flat dict."""
    cmd = args.command
    file_cfg = _load_config(getattr(args, "config", None))
    out = {"command": cmd, "seed": 0, "threads": 1, "config": getattr(args, "config", None)}
    out.update(DEFAULTS[cmd])
    if cmd != "train":
        unknown = set(file_cfg) - set(DEFAULTS[cmd]) - {"seed", "threads"}
        if unknown:
            raise CliError(f"unknown {cmd} config keys: {sorted(unknown)}", EXIT_USAGE)
        out.update(file_cfg)
    for k, v in vars(args).items():
        if v is not None and k != "config":
            out[k] = v
    if out["threads"] < 1:
        raise CliError("--threads must be >= 1", EXIT_USAGE)
    if cmd == "train":
        tc = dict(file_cfg)
        if args.seed is not None or "seed" not in tc:
            tc["seed"] = out["seed"]
        try:
            out["train"] = train.TrainConfig.from_dict(tc).to_dict()
        except (TypeError, ValueError) as e:
            raise CliError(f"bad training config: {e}", EXIT_USAGE) from None
        out["seed"] = out["train"]["seed"]
    return out


def _safe_name(name: str, k: int) -> str:
    name = re.sub(r"[^A-Za-z0-9._-]+", "_", name.split()[0] if name.strip() else "").strip("._")
    return name or f"seq{k + 1}"


def _read_inputs(paths) -> list[RnaSequence]:
    seqs = []
    for path in paths:
        p = Path(path)
        try:
            if p.suffix.lower() in ioformats.STRUCTURE_SUFFIXES:
                # outputs take the input file name so eval can pair them with the truth
                s = ioformats.read_structure(p).seq
                seqs.append(RnaSequence(s.bases, p.stem, s.family))
            else:
                text = p.read_text()
                seqs.extend(ioformats.parse_fasta(text))
        except FormatError as e:
            msg = str(e) if e.path else f"{p}:{e}" if e.line is not None else f"{p}: {e}"
            raise CliError(msg, EXIT_INPUT) from None
        except (OSError, UnicodeDecodeError) as e:
            raise CliError(f"{p}: {e}", EXIT_INPUT) from None
    return seqs


def cmd_predict(cfg) -> int:
    if not cfg["model"]:
        raise CliError("predict needs --model", EXIT_MODEL)
    try:
        mdl = model_io.load(cfg["model"])
    except FileNotFoundError:
        raise CliError(f"model checkpoint {cfg['model']} not found", EXIT_MODEL) from None
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CliError(f"cannot load model {cfg['model']}: {e}", EXIT_MODEL) from None
    seqs = _read_inputs(cfg["inputs"])
    if not seqs:
        log.warning("no sequences in input; nothing written")
        return EXIT_OK

    def run(seq):
        return mdl.predict(seq, classic=cfg["classic"], threshold=cfg["threshold"])

    if cfg["threads"] > 1:
        with ThreadPoolExecutor(cfg["threads"]) as pool:
            preds = list(pool.map(run, seqs))
    else:
        preds = [run(s) for s in seqs]

    # check everything before writing anything
    for seq, A in zip(seqs, preds):
        bad = validate_structure(A, seq)
        if bad:
            raise CliError(f"internal error: invalid structure for {seq.id!r}: {bad[0].message}", EXIT_INTERNAL)
        if cfg["out_format"] == "dbn":
            try:
                ioformats.to_dot_bracket(matrix_to_pairs(A), len(seq.bases))
            except FormatError as e:
                raise CliError(f"{seq.id or 'sequence'}: {e}; use --out-format ct or bpseq", EXIT_USAGE) from None

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    used: set[str] = set()
    for k, (seq, A) in enumerate(zip(seqs, preds)):
        name = _safe_name(seq.id, k)
        base, n = name, 1
        while name in used:
            n += 1
            name = f"{base}_{n}"
        used.add(name)
        rec = StructureRecord(seq, matrix_to_pairs(A))
        path = out_dir / f"{name}.{cfg['out_format']}"
        ioformats.write_structure(rec, path, cfg["out_format"])
        print(path)
        if cfg["svg"]:
            svg = out_dir / f"{name}.svg"
            svg.write_text(arc_diagram_svg(seq.bases, rec.pairs, title=seq.id))
            print(svg)
    return EXIT_OK


def cmd_train(cfg) -> int:
    from .synth import hairpin_dataset

    tconf = train.TrainConfig.from_dict(cfg["train"])
    if cfg["synthetic"]:
        records = hairpin_dataset(cfg["synthetic"], seed=tconf.seed)
    elif cfg["data"]:
        if not Path(cfg["data"]).is_dir():
            raise CliError(f"{cfg['data']} is not a directory", EXIT_INPUT)
        index = ioformats.scan_dataset(cfg["data"])
        for path, why in index.skipped:
            log.warning("skipped %s: %s", path, why)
        records = index.records
    else:
        raise CliError("train needs a data directory or --synthetic N", EXIT_USAGE)
    if not records:
        raise CliError("no usable training records", EXIT_INPUT)
    vf = cfg["valid_fraction"]
    if not 0 <= vf < 1:
        raise CliError("--valid-fraction must be in [0, 1)", EXIT_USAGE)
    tr, va, _ = train.stratified_split(records, (1 - vf, vf, 0.0), seed=tconf.seed)
    try:
        mdl, hist = train.pretrain(tconf, tr, valid=va)
        if not cfg["pretrain_only"]:
            mdl, more = train.finetune(tconf, tr, mdl, valid=va)
            hist = hist + more
    except train.TrainingDiverged as e:
        raise CliError(str(e), EXIT_DIVERGED) from None
    text = train.format_history(hist)
    sys.stdout.write(text)
    if cfg["log"]:
        Path(cfg["log"]).write_text(text)
    model_io.save(mdl, cfg["out"])
    log.info("wrote %s", cfg["out"])
    return EXIT_OK


def _structure_files(root: Path) -> dict[str, Path]:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.suffix.lower() in ioformats.STRUCTURE_SUFFIXES:
            out.setdefault(str(p.relative_to(root).with_suffix("")), p)
    return out


def cmd_eval(cfg) -> int:
    pred_root, truth_root = Path(cfg["pred_dir"]), Path(cfg["truth_dir"])
    for d in (pred_root, truth_root):
        if not d.is_dir():
            raise CliError(f"{d} is not a directory", EXIT_INPUT)
    preds, truths = _structure_files(pred_root), _structure_files(truth_root)
    if not truths:
        raise CliError(f"no structure files under {truth_root}", EXIT_INPUT)
    P, T, lengths, ids, fams = [], [], [], [], []
    for key, tpath in truths.items():
        try:
            t = ioformats.read_structure(tpath)
            p = ioformats.read_structure(preds[key]) if key in preds else None
        except FormatError as e:
            raise CliError(str(e), EXIT_INPUT) from None
        if p is None:
            log.warning("no prediction for %s; scored as empty", key)
            ppairs = frozenset()
        elif p.seq.bases != t.seq.bases:
            raise CliError(f"{preds[key]}: sequence differs from {tpath}", EXIT_INPUT)
        else:
            ppairs = p.pairs
        rel = Path(key).parts
        P.append(ppairs)
        T.append(t.pairs)
        lengths.append(len(t.seq))
        ids.append(key)
        fams.append(rel[0] if len(rel) > 1 else None)
    for key in sorted(set(preds) - set(truths)):
        log.warning("prediction %s has no truth; ignored", key)
    report = evaluate(P, T, lengths, ids, fams)
    sys.stdout.write(report.to_text())
    if cfg["records"]:
        Path(cfg["records"]).write_text(report.to_records())
    return EXIT_OK


def cmd_convert(cfg) -> int:
    try:
        rec = ioformats.read_structure(cfg["src"])
        fmt = cfg["to"] or ioformats.format_of(cfg["dst"])
    except FormatError as e:
        raise CliError(str(e), EXIT_INPUT) from None
    except OSError as e:
        raise CliError(f"{cfg['src']}: {e}", EXIT_INPUT) from None
    try:
        ioformats.write_structure(rec, cfg["dst"], fmt)
    except FormatError as e:  # e.g. too many crossing layers for dot-bracket
        raise CliError(f"{cfg['src']}: {e}", EXIT_INPUT) from None
    return EXIT_OK


def cmd_oracle_check(cfg) -> int:
    try:
        res = oracle.solver_trials(cfg["trials"], cfg["seed"], cfg["min_len"], cfg["max_len"],
                                   cfg["density"], target=cfg["target"])
    except ValueError as e:
        raise CliError(str(e), EXIT_USAGE) from None
    print(f"trials={len(res.ratios)} lengths={cfg['min_len']}..{cfg['max_len']} density={cfg['density']}")
    print("ratio quantiles: " + " ".join(f"p{q}={v:.4f}" for q, v in res.quantiles().items()))
    print(f"mean ratio={res.ratios.mean():.4f}")
    ok = res.pass_rate >= cfg["required"]
    print(f"pass rate (ratio >= {cfg['target']}) = {res.pass_rate:.3f}; required {cfg['required']} -> "
          f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


COMMANDS = {"predict": cmd_predict, "train": cmd_train, "eval": cmd_eval,
            "convert": cmd_convert, "oracle-check": cmd_oracle_check}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        print("resolved config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)
        return COMMANDS[args.command](cfg)
    except CliError as e:
        print(f"unrollfold: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
