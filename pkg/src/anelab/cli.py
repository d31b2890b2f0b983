"""Command-line entry point.

Every subcommand takes ``--config FILE`` (TOML), ``--seed`` and
``--out-dir``.  Config sections map onto the dataclasses of the owning
modules: ``[synth]`` -> SynthConfig, ``[train]`` -> TrainConfig,
``[text]`` -> TextTrainConfig, plus one section named after the
subcommand for its own keys (for example ``[simulate] gamma = 0.1``).
Command-line flags override the config file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import pipelines
from .core import UnigramLM, ensure_dir, read_lexicon, read_lm, write_lexicon, write_lm
from .diagnostics import isoscore, write_report
from .encoder import load_params, save_params
from .lexicon.dialect import read_dissimilarity_csv, write_dissimilarity_csv
from .lexicon.lengths import length_distribution
from .lexicon.tree import fit_additive_tree
from .lexicon.wakeword import wakeword_sweep, write_sweep_csv
from .simulator import SimulSetup, cluster_shape, simulate, two_cluster_cloud, write_trajectory
from .synthdata import SynthConfig, generate_corpus, load_corpus, phone_inventory, save_corpus, zipf_lm
from .trainer import TextTrainConfig, TrainConfig, train_audio_encoder, train_text_encoder

log = logging.getLogger("anelab")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ERROR: {message}", file=sys.stderr)
        sys.exit(2)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"bad config {path}: {exc}") from None


def _build(cls, section: dict, **overrides):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise CliError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    values = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid {cls.__name__}: {exc}") from None


class Context:
    def __init__(self, args):
        self.args = args
        self.config = _load_config(args.config)
        self.out = ensure_dir(args.out_dir)

    def section(self, name: str) -> dict:
        sec = self.config.get(name, {})
        if not isinstance(sec, dict):
            raise CliError(f"config entry [{name}] must be a table")
        return sec

    def option(self, name: str, key: str, flag, default):
        if flag is not None:
            return flag
        return self.section(name).get(key, default)

    def synth(self, **overrides) -> SynthConfig:
        return _build(SynthConfig, self.section("synth"), seed=self.args.seed, **overrides)

    def train(self, **overrides) -> TrainConfig:
        base = dataclasses.asdict(pipelines.recipe_train_config())
        base.update(self.section("train"))
        return _build(TrainConfig, base, seed=self.args.seed, **overrides)

    def text(self, **overrides) -> TextTrainConfig:
        return _build(TextTrainConfig, self.section("text"), seed=self.args.seed, **overrides)

    def path(self, name: str) -> Path:
        return self.out / name

    def corpus(self, path):
        if path is not None:
            return load_corpus(path)
        default = self.path("corpus.bin")
        if default.exists():
            return load_corpus(default)
        corpus = generate_corpus(self.synth())
        save_corpus(default, corpus)
        return corpus


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(ctx: Context):
    a = ctx.args
    corpus = generate_corpus(ctx.synth(num_words=a.num_words, samples_per_word=a.samples_per_word))
    save_corpus(ctx.path("corpus.bin"), corpus)
    write_lexicon(ctx.path("lexicon.txt"), corpus.lexicon, corpus.phones)
    write_lm(ctx.path("lm.txt"), zipf_lm(corpus.words))
    print(f"{len(corpus.utterances)} utterances of {len(corpus.lexicon)} words -> {ctx.path('corpus.bin')}")


def cmd_train_audio(ctx: Context):
    corpus = ctx.corpus(ctx.args.corpus)
    cfg = ctx.train(max_epochs=ctx.args.epochs)
    res = train_audio_encoder(corpus.utterances, cfg)
    save_params(ctx.path("audio.ane"), res.params)
    res.write_log(ctx.path("train_audio.log"))
    print(f"best epoch {res.best_epoch} of {len(res.history)} -> {ctx.path('audio.ane')}")


def cmd_train_text(ctx: Context):
    a = ctx.args
    corpus = ctx.corpus(a.corpus)
    audio = load_params(a.audio_model or ctx.path("audio.ane"))
    vocab = len(corpus.phones) if a.which == "phone" else len(corpus.graphemes)
    res = train_text_encoder(corpus.utterances, audio, a.which, vocab,
                             ctx.text(bidirectional=audio.bidirectional or None))
    save_params(ctx.path(f"text_{a.which}.ane"), res.params)
    with open(ctx.path(f"train_text_{a.which}.log"), "w", encoding="utf-8") as fh:
        for epoch, mse in enumerate(res.history, 1):
            fh.write(f"{epoch}\t{mse:.6f}\n")
    print(f"final mse {res.history[-1] if res.history else float('nan'):.6f} -> {ctx.path(f'text_{a.which}.ane')}")


def cmd_classify_eval(ctx: Context):
    sizes = ctx.option("classify-eval", "sizes", ctx.args.sizes, [50, 200, 500])
    rep = pipelines.classification_experiment(ctx.synth(), ctx.train(), sizes)
    _write_rows(ctx.path("classify.csv"), ["index_size", "accuracy"],
                [(n, f"{acc:.6f}") for n, acc in sorted(rep.accuracy.items())])
    for n, acc in sorted(rep.accuracy.items()):
        print(f"index {n}: accuracy {acc:.4f}")


def cmd_oov_recover(ctx: Context):
    pairs = ctx.option("oov-recover", "pairs", ctx.args.pairs, 100)
    asr = ctx.option("oov-recover", "asr", ctx.args.asr, "decode")
    train = ctx.train(bidirectional=ctx.section("train").get("bidirectional", True))
    rep = pipelines.oov_experiment(ctx.synth(samples_per_word=ctx.section("synth").get("samples_per_word", 10)),
                                   train, pairs, asr)
    _write_rows(ctx.path("oov.csv"), ["method", "recovery_rate"],
                [("embed", f"{rep.embed:.6f}"), ("edit", f"{rep.edit:.6f}")])
    _write_json(ctx.path("oov.json"), dataclasses.asdict(rep))
    print(f"recovery embed {rep.embed:.3f} edit {rep.edit:.3f} (recognizer chose partner {rep.asr_partner:.3f})")


def cmd_dialect_cluster(ctx: Context):
    a = ctx.args
    if a.matrix:
        names, dis = read_dissimilarity_csv(a.matrix)
        tree = fit_additive_tree(dis, names)
    else:
        synth_sec = dict(ctx.section("synth"))
        if "dialect_shifts" not in synth_sec:
            scale = ctx.option("dialect-cluster", "shift_scale", a.shift_scale, 1.5)
            synth_sec["dialect_shifts"] = pipelines.hierarchical_shifts(
                synth_sec.get("num_phones", SynthConfig.num_phones), scale, a.seed).tolist()
        cfg = _build(SynthConfig, synth_sec, seed=a.seed)
        rep = pipelines.dialect_experiment(cfg, ctx.train())
        names, dis, tree = rep.names, rep.dissimilarity, rep.tree
    write_dissimilarity_csv(ctx.path("dissimilarity.csv"), names, dis)
    ctx.path("tree.nwk").write_text(tree.newick() + "\n", encoding="utf-8")
    print(tree.newick())
    print(f"fit rmse {tree.residual:.6f}; longest terminal branch: {tree.longest_terminal()}")


def cmd_wakeword(ctx: Context):
    a = ctx.args
    lo = ctx.option("wakeword", "alpha_min", a.alpha_min, 0.85)
    hi = ctx.option("wakeword", "alpha_max", a.alpha_max, 0.95)
    steps = ctx.option("wakeword", "alpha_steps", a.alpha_steps, 11)
    if not 0.0 <= lo <= hi <= 1.0:
        raise CliError("need 0 <= alpha-min <= alpha-max <= 1")
    corpus = ctx.corpus(a.corpus)
    lm = read_lm(a.lm) if a.lm else zipf_lm(corpus.words)
    models = pipelines.train_models(corpus, ctx.train())
    table = pipelines.word_embedding_table(models, corpus.lexicon)
    targets = a.targets or ctx.section("wakeword").get("targets") or list(corpus.lexicon)[:5]
    sigma = a.sigma or models.sigma
    rows = wakeword_sweep(targets, table, lm, sigma, np.linspace(lo, hi, steps))
    if any(not np.isfinite(r[2]) for r in rows):
        raise CliError("non-finite confusion score in sweep")
    write_sweep_csv(ctx.path("wakeword.csv"), rows)
    print(f"{len(rows)} rows, sigma {sigma:.4f} -> {ctx.path('wakeword.csv')}")


def cmd_simulate(ctx: Context):
    a = ctx.args
    gamma = ctx.option("simulate", "gamma", a.gamma, 0.1)
    iters = ctx.option("simulate", "iters", a.iters, 200)
    negative = a.negative or ctx.section("simulate").get("include_negative", False)
    if gamma < 0 or iters < 0:
        raise CliError("gamma and iters must be >= 0")
    cloud = two_cluster_cloud(SimulSetup(seed=a.seed))
    traj = simulate(cloud, gamma, iters, include_negative=negative,
                    record_every=ctx.option("simulate", "record_every", a.record_every, 1))
    write_trajectory(ctx.path("trajectory.csv"), traj)
    final = traj[-1]
    summary = {str(k): {**v, "isoscore": isoscore(final.members(k))} for k, v in cluster_shape(final).items()}
    _write_json(ctx.path("simulate_summary.json"), summary)
    for k, v in summary.items():
        print(f"cluster {k}: condition {v['condition']:.4f} radius {v['radius']:.4f} isoscore {v['isoscore']:.4f}")


def cmd_diagnose(ctx: Context):
    rows = pipelines.diagnostics_run(ctx.synth(), ctx.train(max_epochs=ctx.args.epochs))
    write_report(ctx.path("diagnostics.csv"), rows)
    first, last = rows[0], rows[-1]
    print(f"isoscore {first['mean_isoscore']:.4f} -> {last['mean_isoscore']:.4f}; "
          f"ratio_a {first['ratio_a']:.4f} -> {last['ratio_a']:.4f}; "
          f"ratio_b {first['ratio_b']:.4f} -> {last['ratio_b']:.4f}")


def cmd_length_dist(ctx: Context):
    a = ctx.args
    if a.lexicon:
        phones = phone_inventory(ctx.synth().num_phones)
        for name in a.phones or []:
            phones.intern(name)
        lex = read_lexicon(a.lexicon, phones)
    else:
        from .synthdata import generate_lexicon

        lex = generate_lexicon(ctx.synth())
    lm = read_lm(a.lm) if a.lm else UnigramLM.uniform(list(lex))
    dist = length_distribution(lex, lm)
    _write_rows(ctx.path("pronlendist.csv"), ["length", "probability"],
                [(h, f"{p:.8f}") for h, p in sorted(dist.probs.items())])
    print(" ".join(f"{h}:{p:.4f}" for h, p in sorted(dist.probs.items())))


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train-audio": cmd_train_audio,
    "train-text": cmd_train_text,
    "classify-eval": cmd_classify_eval,
    "oov-recover": cmd_oov_recover,
    "dialect-cluster": cmd_dialect_cluster,
    "wakeword": cmd_wakeword,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "length-dist": cmd_length_dist,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default="run", help="output directory (created if needed)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="anelab", description="Acoustic neighbor embedding laboratory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-gen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--num-words", type=int)
    p.add_argument("--samples-per-word", type=int)

    p = sub.add_parser("train-audio", parents=[common], help="train the audio encoder")
    p.add_argument("--corpus")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-text", parents=[common], help="train a text encoder on a trained audio encoder")
    p.add_argument("--corpus")
    p.add_argument("--audio-model")
    p.add_argument("--which", choices=["phone", "grapheme"], default="phone")

    p = sub.add_parser("classify-eval", parents=[common], help="word classification vs index size")
    p.add_argument("--sizes", type=int, nargs="+")

    p = sub.add_parser("oov-recover", parents=[common], help="OOV recovery by embedding vs edit distance")
    p.add_argument("--pairs", type=int)
    p.add_argument("--asr", choices=["decode", "partner"])

    p = sub.add_parser("dialect-cluster", parents=[common], help="dialect dissimilarity and additive tree")
    p.add_argument("--matrix", help="dissimilarity CSV to fit instead of running the synthetic experiment")
    p.add_argument("--shift-scale", type=float)

    p = sub.add_parser("wakeword", parents=[common], help="wake-word expected confusion over an alpha sweep")
    p.add_argument("--corpus")
    p.add_argument("--lm")
    p.add_argument("--targets", nargs="+")
    p.add_argument("--sigma", type=float)
    p.add_argument("--alpha-min", type=float)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--alpha-steps", type=int)

    p = sub.add_parser("simulate", parents=[common], help="free-embedding gradient simulation")
    p.add_argument("--gamma", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--record-every", type=int)
    p.add_argument("--negative", action="store_true", help="include the other-cluster gradient")

    p = sub.add_parser("diagnose", parents=[common], help="per-epoch isotropy diagnostics")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("length-dist", parents=[common], help="pronunciation length distribution")
    p.add_argument("--lexicon")
    p.add_argument("--lm")
    p.add_argument("--phones", nargs="+", help="extra phone names for --lexicon")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](Context(args))
    except (CliError, OSError, ValueError, KeyError, ArithmeticError) as exc:
        msg = str(exc).replace("\n", " ") or type(exc).__name__
        print(f"ERROR: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
