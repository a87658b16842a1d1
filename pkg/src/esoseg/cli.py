"""Command-line front end for the segmentation pipeline.

Subcommands: phantom-gen, fit-priors, train, segment, evaluate. A single
INI-style config file carries per-stage settings; command-line flags
override file values and the effective config is echoed into the output
directory. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from . import metrics, phantom, pipeline, postproc, rw
from .acm import ACMConfig, save_centerline
from .fcnn import checkpoint as ckpt
from .fcnn import network, training
from .metrics import MetricError
from .priors import load_prior_model, save_prior_model
from .rw import RWConfig, SolverError
from .volume import VolumeError, read_volume, write_volume

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("error: %s\n" % message)
        sys.exit(EXIT_USAGE)


def _load_config(path):
    cfg = configparser.ConfigParser()
    if path:
        if not os.path.isfile(path):
            raise VolumeError("no such config file: %s" % path)
        cfg.read(path)
    return cfg


def _section_overrides(cfg, section, dataclass_type, cli_overrides=None):
    """Build a config dataclass from an INI section plus CLI overrides."""
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(dataclass_type)}
    if cfg.has_section(section):
        for key, val in cfg.items(section):
            if key not in fields:
                raise VolumeError("unknown key %r in [%s]" % (key, section))
            kwargs[key] = _coerce(val, fields[key].type, getattr_default(fields[key]))
    if cli_overrides:
        for key, val in cli_overrides.items():
            if val is not None:
                kwargs[key] = val
    return dataclass_type(**kwargs)


def getattr_default(field):
    if field.default is not dataclasses.MISSING:
        return field.default
    return field.default_factory()


def _coerce(text, _type, default):
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = text.replace(",", " ").split()
        return tuple(type(default[0])(p) for p in parts)
    return text


def _echo_config(out_dir, objs):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.ini")
    with open(path, "w") as fh:
        for section, obj in objs.items():
            fh.write("[%s]\n" % section)
            for f in dataclasses.fields(obj):
                val = getattr(obj, f.name)
                if isinstance(val, tuple):
                    val = " ".join(str(v) for v in val)
                fh.write("%s = %s\n" % (f.name, val))
            fh.write("\n")


def _spec_from_name(name):
    if name == "tiny":
        return network.tiny_spec()
    if name == "full":
        return network.full_spec()
    raise VolumeError("unknown architecture preset: %s" % name)


def cmd_phantom_gen(args):
    cfg = _load_config(args.config)
    pc = _section_overrides(cfg, "phantom", phantom.PhantomConfig)
    manifest = phantom.generate_dataset(pc, args.n, args.seed, args.out)
    _echo_config(args.out, {"phantom": pc})
    print("wrote %d phantom pairs, manifest %s" % (args.n, manifest))
    return EXIT_OK


def cmd_fit_priors(args):
    pairs = pipeline.load_pairs(phantom.read_manifest(args.manifest))
    gmm, stats = pipeline.fit_priors_from_dataset(pairs, k=args.k, seed=args.seed)
    save_prior_model(args.out, gmm, stats)
    print("prior model written to %s" % args.out)
    return EXIT_OK


def cmd_train(args):
    cfg = _load_config(args.config)
    tc = _section_overrides(
        cfg, "train", training.TrainingConfig, {"seed": args.seed}
    )
    preset = args.preset or (
        cfg.get("train_arch", "preset", fallback=None) if cfg.has_section("train_arch") else None
    )
    spec = _spec_from_name(preset or "tiny")
    dataset = pipeline.load_pairs(phantom.read_manifest(args.manifest))
    os.makedirs(args.out_dir, exist_ok=True)
    params, state, start_epoch = None, None, 1
    if args.resume:
        params, _, epoch, state = ckpt.load_checkpoint(args.resume)
        if params.spec != spec:
            raise VolumeError("checkpoint architecture differs from config")
        start_epoch = epoch + 1
    log_path = os.path.join(args.out_dir, "loss_log.txt")
    ckpt_path = os.path.join(args.out_dir, "checkpoint.ckpt")
    log_fh = open(log_path, "a" if args.resume else "w")

    def log(epoch, sub, lr, loss_val):
        log_fh.write("%d %d %.8g %.8g\n" % (epoch, sub, lr, loss_val))
        log_fh.flush()

    try:
        params, history, state = training.train(
            dataset, tc, spec=spec, params=params, state=state,
            start_epoch=start_epoch, log=log,
        )
    finally:
        log_fh.close()
    ckpt.save_checkpoint(ckpt_path, params, tc.seed, tc.epochs, state=state)
    _echo_config(args.out_dir, {"train": tc})
    print("checkpoint written to %s (%d subepochs logged)" % (ckpt_path, len(history)))
    return EXIT_OK


def cmd_segment(args):
    cfg = _load_config(args.config)
    acm_cfg = _section_overrides(cfg, "acm", ACMConfig)
    rw_cfg = _section_overrides(cfg, "rw", RWConfig)
    ct = read_volume(args.ct)
    params, _, _, _ = ckpt.load_checkpoint(args.checkpoint)
    gmm, stats = load_prior_model(args.priors)
    infer_subvol = cfg.getint("segment", "infer_subvol", fallback=45)
    closing_radius = cfg.getint("segment", "closing_radius", fallback=1)
    final, inter = pipeline.segment_volume(
        ct, params, gmm, stats,
        acm_cfg=acm_cfg, rw_cfg=rw_cfg,
        infer_subvol=infer_subvol, closing_radius=closing_radius,
    )
    os.makedirs(args.out, exist_ok=True)
    write_volume(final, os.path.join(args.out, "final_mask.mhd"))
    if args.save_intermediates:
        for name in ("cnn", "acm", "ctprior", "rw"):
            write_volume(inter[name], os.path.join(args.out, name + ".mhd"))
        save_centerline(inter["centerline"], os.path.join(args.out, "centerline.txt"))
    _echo_config(args.out, {"acm": acm_cfg, "rw": rw_cfg})
    print("final mask written to %s" % os.path.join(args.out, "final_mask.mhd"))
    return EXIT_OK


def _read_mask_manifest(path):
    """Mask paths, one per line; two-column rows use the second column."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            out.append(os.path.join(base, parts[-1]))
    if not out:
        raise VolumeError("empty manifest: %s" % path)
    return out


def cmd_evaluate(args):
    pred_paths = _read_mask_manifest(args.pred_manifest)
    ref_paths = _read_mask_manifest(args.ref_manifest)
    if len(pred_paths) != len(ref_paths):
        raise VolumeError("prediction and reference manifests differ in length")
    crop = tuple(args.crop) if args.crop else None
    cases = []
    for pred_path, ref_path in zip(pred_paths, ref_paths):
        pred = read_volume(pred_path)
        ref = read_volume(ref_path)
        cid = os.path.splitext(os.path.basename(pred_path))[0]
        cases.append(metrics.evaluate_case(cid, pred, ref, crop=crop))
    extra = []
    if args.compare_manifest:
        other_paths = _read_mask_manifest(args.compare_manifest)
        if len(other_paths) != len(ref_paths):
            raise VolumeError("comparison manifest length mismatch")
        other = []
        for other_path, ref_path in zip(other_paths, ref_paths):
            om = read_volume(other_path)
            ref = read_volume(ref_path)
            cid = os.path.splitext(os.path.basename(other_path))[0]
            other.append(metrics.evaluate_case(cid, om, ref, crop=crop))
        for name, key in (("dsc", "dsc"), ("assd_mm", "assd_mm"), ("hd_mm", "hd_mm")):
            a = [getattr(c, key) for c in cases]
            b = [getattr(c, key) for c in other]
            try:
                p = metrics.wilcoxon_signed_rank(a, b)
                extra.append("wilcoxon_%s_p\t%.6g" % (name, p))
            except MetricError as exc:
                extra.append("wilcoxon_%s_p\tn/a (%s)" % (name, exc))
    metrics.write_report(args.out, cases, extra_lines=extra)
    print("report written to %s" % args.out)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="esoseg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="generate a synthetic dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config", default=None)
    g.set_defaults(func=cmd_phantom_gen)

    f = sub.add_parser("fit-priors", help="fit GMM and gradient statistics")
    f.add_argument("--manifest", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--k", type=int, default=2)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit_priors)

    t = sub.add_parser("train", help="train the FCNN")
    t.add_argument("--manifest", required=True)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config", default=None)
    t.add_argument("--preset", choices=("tiny", "full"), default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", default=None)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment one CT volume")
    s.add_argument("--ct", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--priors", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--save-intermediates", action="store_true")
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="compare masks against references")
    e.add_argument("--pred-manifest", required=True)
    e.add_argument("--ref-manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--crop", type=int, nargs=2, default=None, metavar=("Z0", "Z1"))
    e.add_argument("--compare-manifest", default=None)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SolverError, FloatingPointError) as exc:
        sys.stderr.write("numerical failure: %s\n" % exc)
        return EXIT_NUMERICAL
    except (VolumeError, MetricError, ckpt.CheckpointError, ValueError, OSError) as exc:
        sys.stderr.write("data error: %s\n" % exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
