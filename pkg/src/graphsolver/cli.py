"""Command-line pipeline driver.

Every subcommand accepts --config pointing at a UTF-8 JSON file whose keys
mirror the flag names (dashes or underscores); explicit flags override the
file.  Each run echoes its fully resolved configuration to stdout.  Exit
codes: 0 success, 1 runtime failure (single-line "error: ..." on stderr),
2 bad flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .mesh import (ShapeSpec, import_obj, export_obj, generate_primitive,
                   validate_mesh)
from .rwg import build_rwg, centroid_currents
from .em import (PlaneWave, assemble_system, solve_system, bistatic_rcs,
                 rcs_to_csv, rcs_from_csv, solution_to_bytes, C0)
from .graph import build_graph, sample_from_bytes
from .mie import mie_sphere_rcs
from . import nn
from .train import TrainConfig, train, evaluate
from .data import (SweepSpec, generate_dataset, split_dataset, load_samples,
                   DatasetManifest)


def _default_workers() -> int:
    return int(os.environ.get("GRAPHSOLVER_WORKERS", "1"))


def _add_common(p):
    p.add_argument("--config", help="JSON file with defaults for any flag")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=_default_workers())


def _build_parser():
    parser = argparse.ArgumentParser(prog="graphsolver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("genmesh", help="generate a primitive mesh as OBJ")
    _add_common(p)
    p.add_argument("--kind", required=True)
    p.add_argument("--params", required=True,
                   help="JSON dict of shape parameters")
    p.add_argument("--freq", type=float, default=3e8)
    p.add_argument("--mesh-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("solve", help="MoM solve + bistatic RCS cut")
    _add_common(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--freq", type=float, default=3e8)
    p.add_argument("--theta", type=float, required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--polarization", default="theta_pol")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--rcs-plane", default="phi0")
    p.add_argument("--rcs-step", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("mie", help="analytic sphere RCS cut")
    _add_common(p)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--freq", type=float, default=3e8)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-rcs", help="compare two RCS CSV cuts in dB")
    _add_common(p)
    p.add_argument("csv_a")
    p.add_argument("csv_b")
    p.add_argument("--window-db", type=float, default=None,
                   help="restrict to angles within this many dB of B's peak")

    p = sub.add_parser("dataset-gen", help="generate a labeled dataset")
    _add_common(p)
    p.add_argument("--sweep", required=True,
                   help="JSON file describing the sweep")
    p.add_argument("--out", required=True)

    p = sub.add_parser("dataset-split", help="seeded train/test split")
    _add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--train-fraction", type=float, default=0.8)

    p = sub.add_parser("train", help="train the graph model")
    _add_common(p)
    p.add_argument("--data", required=True,
                   help="dataset directory (with manifest.json)")
    p.add_argument("--train-manifest", default=None)
    p.add_argument("--test-manifest", default=None)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--decay", type=float, default=0.8)
    p.add_argument("--decay-every", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--batch-norm", action="store_true")
    p.add_argument("--warm-start", default=None)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--gcn-layers", type=int, default=4)
    p.add_argument("--kernel-hidden", type=int, default=256)
    p.add_argument("--head-hidden", type=int, default=32)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("predict", help="predict currents for a sample")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--sample", required=True, help=".gsb graph sample")
    p.add_argument("--out", required=True, help="CSV of predicted labels")

    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--manifest", default=None,
                   help="manifest path (default <data>/manifest.json)")
    p.add_argument("--out", default=None, help="optional metrics JSON")
    return parser


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config":
            return argv[i + 1] if i + 1 < len(argv) else None
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    """Merge --config JSON under explicitly given flags; reject unknown keys.

    Config values are injected as argv tokens ahead of the explicit flags,
    so they can satisfy required flags while later (explicit) occurrences
    still win.
    """
    path = _config_path(argv)
    if path is None or not argv:
        return parser.parse_args(argv)
    with open(path, encoding="utf-8") as f:
        conf = json.load(f)
    command = argv[0]
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        return parser.parse_args(argv)
    by_dest = {a.dest: a for a in sub._actions if a.option_strings}
    injected = []
    for key, value in conf.items():
        action = by_dest.get(key.replace("-", "_"))
        if action is None:
            raise ValueError(f"unknown config key {key!r}")
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                injected.append(flag)
        elif isinstance(value, (dict, list)):
            injected.extend([flag, json.dumps(value)])
        else:
            injected.extend([flag, str(value)])
    return parser.parse_args([command] + injected + argv[1:])


def _echo(args):
    shown = {k: v for k, v in sorted(vars(args).items()) if k != "config"}
    print("config: " + json.dumps(shown, sort_keys=True, default=str))


def _cmd_genmesh(args):
    spec = ShapeSpec(args.kind, json.loads(args.params))
    mesh = generate_primitive(spec, args.mesh_fraction, C0 / args.freq)
    with open(args.out, "wb") as f:
        f.write(export_obj(mesh))
    rep = validate_mesh(mesh)
    print(f"wrote {args.out}: {mesh.num_triangles} triangles, "
          f"closed={rep.is_closed}, oriented={rep.is_oriented}")


def _cmd_solve(args):
    with open(args.mesh, "rb") as f:
        mesh = import_obj(f.read())
    rwg = build_rwg(mesh)
    pw = PlaneWave(frequency=args.freq, theta=args.theta, phi=args.phi,
                   polarization=args.polarization)
    sys_ = assemble_system(rwg, pw, alpha=args.alpha, workers=args.workers)
    u = solve_system(sys_)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "solution.bin"), "wb") as f:
        f.write(solution_to_bytes(u, pw, args.alpha))
    if args.rcs_plane != "phi0":
        raise ValueError(f"unsupported RCS plane {args.rcs_plane!r}")
    cut = bistatic_rcs(rwg, u, args.freq, step=args.rcs_step,
                       amplitude=pw.amplitude)
    with open(os.path.join(args.out, "rcs.csv"), "w", encoding="utf-8") as f:
        f.write(rcs_to_csv(cut))
    print(f"wrote {args.out}/solution.bin and rcs.csv "
          f"(N={rwg.num_bases})")


def _cmd_mie(args):
    cut = mie_sphere_rcs(args.radius, args.freq, step=args.step)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(rcs_to_csv(cut))
    print(f"wrote {args.out}")


def _cmd_eval_rcs(args):
    with open(args.csv_a, encoding="utf-8") as f:
        a = rcs_from_csv(f.read())
    with open(args.csv_b, encoding="utf-8") as f:
        b = rcs_from_csv(f.read())
    if len(a.angles) != len(b.angles) or not np.allclose(a.angles, b.angles):
        raise ValueError("angle grids differ")
    da = 10.0 * np.log10(a.sigma) - 10.0 * np.log10(b.sigma)
    mask = np.ones(len(da), dtype=bool)
    if args.window_db is not None:
        ref = 10.0 * np.log10(b.sigma)
        mask = ref >= ref.max() - args.window_db
    print(f"max |delta| dB: {np.abs(da[mask]).max():.4f}")
    print(f"mean |delta| dB: {np.abs(da[mask]).mean():.4f}")


def _cmd_dataset_gen(args):
    with open(args.sweep, encoding="utf-8") as f:
        sweep = SweepSpec(**json.load(f))
    man = generate_dataset(sweep, args.out, seed=args.seed,
                           workers=args.workers)
    print(f"dataset {man.dataset_id}: {len(man.samples)} samples, "
          f"{len(man.skipped)} skipped")


def _cmd_dataset_split(args):
    man = DatasetManifest.load(args.manifest)
    tr, te = split_dataset(man, args.train_fraction, seed=args.seed)
    base = os.path.dirname(os.path.abspath(args.manifest))
    man.save(args.manifest)
    tr.save(os.path.join(base, "train.json"))
    te.save(os.path.join(base, "test.json"))
    print(f"split: {len(tr.samples)} train / {len(te.samples)} test")


def _cmd_train(args):
    tr_path = args.train_manifest or os.path.join(args.data, "train.json")
    te_path = args.test_manifest or os.path.join(args.data, "test.json")
    train_set = load_samples(DatasetManifest.load(tr_path), args.data)
    test_set = load_samples(DatasetManifest.load(te_path), args.data)
    mcfg = nn.ModelConfig(hidden=args.hidden, gcn_layers=args.gcn_layers,
                          kernel_hidden=args.kernel_hidden,
                          head_hidden=args.head_hidden,
                          use_batch_norm=args.batch_norm)
    tcfg = TrainConfig(epochs=args.epochs, base_lr=args.lr, decay=args.decay,
                       decay_every=args.decay_every,
                       batch_size=args.batch_size, seed=args.seed,
                       use_batch_norm=args.batch_norm,
                       warm_start=args.warm_start,
                       normalize=not args.no_normalize)
    best, report, final = train(train_set, test_set, tcfg, mcfg)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "model_best.gsp"), "wb") as f:
        f.write(nn.save_params(best, mcfg))
    with open(os.path.join(args.out, "model_final.gsp"), "wb") as f:
        f.write(nn.save_params(final, mcfg))
    with open(os.path.join(args.out, "report.csv"), "w",
              encoding="utf-8") as f:
        f.write(report.to_csv())
    print(f"trained {args.epochs} epochs; best test MSE "
          f"{min(report.test_mse):.6e}")


def _cmd_predict(args):
    with open(args.model, "rb") as f:
        params, mcfg = nn.load_params(f.read())
    with open(args.sample, "rb") as f:
        g = sample_from_bytes(f.read())
    pred = nn.predict(params, mcfg, g)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("re_jx,re_jy,re_jz,im_jx,im_jy,im_jz\n")
        for row in pred:
            f.write(",".join(f"{v:.10e}" for v in row) + "\n")
    print(f"wrote {args.out} ({len(pred)} nodes)")


def _cmd_eval(args):
    with open(args.model, "rb") as f:
        params, mcfg = nn.load_params(f.read())
    mpath = args.manifest or os.path.join(args.data, "manifest.json")
    dataset = load_samples(DatasetManifest.load(mpath), args.data)
    metrics = evaluate(params, mcfg, dataset)
    payload = {"mean_mse": metrics.mean_mse,
               "mean_rel_l2": metrics.mean_rel_l2,
               "per_sample_mse": metrics.per_sample_mse.tolist(),
               "rel_l2": metrics.rel_l2.tolist()}
    text = json.dumps(payload, sort_keys=True, indent=1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    print(text)


_COMMANDS = {
    "genmesh": _cmd_genmesh,
    "solve": _cmd_solve,
    "mie": _cmd_mie,
    "eval-rcs": _cmd_eval_rcs,
    "dataset-gen": _cmd_dataset_gen,
    "dataset-split": _cmd_dataset_split,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None
                                          else argv))
    except SystemExit as e:
        return int(e.code or 0)
    except (OSError, ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        _echo(args)
        _COMMANDS[args.command](args)
        return 0
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
