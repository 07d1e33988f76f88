"""Command-line surface for the whole pipeline.

Every command reads an optional single-file JSON config (sections:
generate / train / eval / gar / paths) and lets flags override individual
fields.  All randomness flows from explicit seeds; commands exit nonzero
on any error.
"""

import argparse
import json
import sys
from dataclasses import fields

from gaflab import backend
from gaflab.bank import load_bank, save_bank
from gaflab.retrieval_eval import (
    EvalConfig,
    evaluate_bank,
    export_projection,
    write_projection_csv,
)
from gaflab.scene_data import (
    GenConfig,
    default_activity_scripts,
    generate_synthetic_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from gaflab.trainer import (
    GarConfig,
    PRESETS,
    TrainConfig,
    embed_dataset,
    finetune_gar,
    gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)


def _read_config(path, section):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    value = payload.get(section, {})
    if not isinstance(value, dict):
        raise ValueError(f"config section {section!r} must be an object")
    return value


def _overrides(args, names):
    return {name: getattr(args, name) for name in names if getattr(args, name) is not None}


def _build(cls, file_section, flag_overrides, preset=None):
    valid = {f.name for f in fields(cls)}
    merged = {}
    if preset:
        merged.update(PRESETS[preset])
    merged.update({k: v for k, v in file_section.items() if k in valid})
    unknown = set(file_section) - valid
    if unknown:
        raise ValueError(f"unknown config fields for {cls.__name__}: {sorted(unknown)}")
    merged.update({k: v for k, v in flag_overrides.items() if k in valid})
    return cls(**merged)


def cmd_generate(args):
    section = _read_config(args.config, "generate")
    classes = args.classes if args.classes is not None else section.pop("classes", 8)
    flags = _overrides(args, ["num_scenes", "num_people", "num_frames", "appearance_dim",
                              "noise_std", "seed"])
    config = _build(GenConfig, section, flags)
    if config.activity_scripts is None:
        config.activity_scripts = default_activity_scripts(classes)
    dataset = generate_synthetic_dataset(config)
    save_dataset(dataset, args.out)
    counts = {}
    for scene in dataset.scenes:
        counts[scene.group_activity] = counts.get(scene.group_activity, 0) + 1
    print(f"wrote {args.out}: {len(dataset.scenes)} scenes")
    print(f"classes: {len(dataset.group_vocab)}")
    for class_id, name in enumerate(dataset.group_vocab):
        print(f"  {name}: {counts.get(class_id, 0)}")
    return 0


def _train_flag_names():
    return ["mode", "learning_rate", "batch_size", "epochs", "n_mask", "seed",
            "feature_dim", "heads", "dropout"]


def _train_config(args):
    section = _read_config(args.config, "train")
    flags = _overrides(args, _train_flag_names())
    if args.no_temporal_pe:
        flags["temporal_pe"] = False
    if args.no_location_guidance:
        flags["location_guidance"] = False
    return _build(TrainConfig, section, flags, preset=args.preset)


def cmd_train(args):
    config = _train_config(args)
    dataset = load_dataset(args.dataset)
    checkpoint = train(dataset, config)
    save_checkpoint(checkpoint, args.out)
    losses = checkpoint.manifest["loss_history"]
    print(f"wrote {args.out}: mode={config.mode} epochs={config.epochs} "
          f"final_loss={losses[-1]:.6f} backend={backend.backend_name()}")
    return 0


def cmd_embed(args):
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    bank = embed_dataset(checkpoint, dataset, histogram_level=args.histogram_level)
    save_bank(bank, args.out)
    print(f"wrote {args.out}: {len(bank)} scenes, "
          f"g width {2 * checkpoint.model.spec.feature_dim}")
    return 0


def _eval_config(args):
    section = _read_config(args.config, "eval")
    flags = _overrides(args, ["predicate", "tau", "embedding"])
    if args.ks is not None:
        flags["ks"] = tuple(int(k) for k in args.ks.split(","))
    elif "ks" in section:
        section["ks"] = tuple(section["ks"])
    return _build(EvalConfig, section, flags)


def cmd_eval(args):
    bank = load_bank(args.bank)
    report = evaluate_bank(bank, _eval_config(args))
    text = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_project(args):
    bank = load_bank(args.bank)
    points = export_projection(bank, args.embedding or "grp")
    write_projection_csv(points, args.out)
    print(f"wrote {args.out}: {len(points)} points")
    return 0


def cmd_ablate(args):
    config = _train_config(args)
    dataset = load_dataset(args.dataset)
    train_split, test_split = split_dataset(dataset, args.train_fraction, config.seed)
    eval_config = _eval_config(args)

    def run_point(point_config):
        checkpoint = train(train_split, point_config)
        bank = embed_dataset(checkpoint, test_split)
        return evaluate_bank(bank, eval_config)

    points = []
    if args.sweep == "n-mask":
        num_people = dataset.scenes[0].num_people
        if args.n_mask_values:
            values = [int(v) for v in args.n_mask_values.split(",")]
        else:
            values = list(range(num_people))
        for value in values:
            point = _build(TrainConfig, {}, {**_as_dict(config), "n_mask": value})
            points.append({"n_mask": value, "report": run_point(point)})
    else:
        for guided in (True, False):
            point = _build(TrainConfig, {}, {**_as_dict(config), "location_guidance": guided})
            points.append({"location_guidance": guided, "report": run_point(point)})

    payload = {"sweep": args.sweep, "points": points}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    print(f"wrote {args.out}: {len(points)} sweep points")
    return 0


def _as_dict(config):
    return {f.name: getattr(config, f.name) for f in fields(config)}


def cmd_finetune_gar(args):
    section = _read_config(args.config, "gar")
    flags = _overrides(args, ["epochs", "learning_rate", "batch_size", "seed", "train_fraction"])
    if args.freeze_trunk:
        flags["freeze_trunk"] = True
    config = _build(GarConfig, section, flags)
    dataset = load_dataset(args.dataset)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    tuned, report = finetune_gar(checkpoint, dataset, config)
    if args.out:
        save_checkpoint(tuned, args.out)
    origin = "pretrained" if args.checkpoint else "scratch"
    print(f"{origin} GAR accuracy: {report['accuracy']:.4f} "
          f"({report['test_scenes']} test scenes)")
    print("confusion (rows = ground truth):")
    for row in report["confusion"]:
        print("  " + " ".join(f"{v:4d}" for v in row))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
    return 0


def cmd_gradcheck(args):
    modes = ("pac", "paf") if args.mode == "both" else (args.mode,)
    step = args.step
    if step is None:
        step = 1e-3 if args.linear_only else 1e-5
    report = gradient_check(step=step, modes=modes, linear_only=args.linear_only)
    worst = 0.0
    for mode, entry in report["modes"].items():
        print(f"{mode}: max relative error {entry['max_rel_error']:.3e}")
        worst = max(worst, entry["max_rel_error"])
        if args.verbose:
            for path, err in sorted(entry["per_param"].items()):
                print(f"  {path}: {err:.3e}")
    threshold = 1e-8 if args.linear_only else 1e-4
    if worst >= threshold:
        print(f"FAIL: {worst:.3e} >= {threshold}", file=sys.stderr)
        return 1
    print(f"OK (< {threshold})")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gaflab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic scripted dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", dest="num_scenes", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--people", dest="num_people", type=int)
    p.add_argument("--frames", dest="num_frames", type=int)
    p.add_argument("--appearance-dim", dest="appearance_dim", type=int)
    p.add_argument("--noise-std", dest="noise_std", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    def add_train_flags(p):
        p.add_argument("--config")
        p.add_argument("--preset", choices=sorted(PRESETS), default=None)
        p.add_argument("--mode", choices=["pac", "paf"])
        p.add_argument("--lr", dest="learning_rate", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--n-mask", dest="n_mask", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--feature-dim", dest="feature_dim", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--dropout", type=float)
        p.add_argument("--no-temporal-pe", action="store_true")
        p.add_argument("--no-location-guidance", action="store_true")

    p = sub.add_parser("train", help="train a model on a dataset file")
    add_train_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed a dataset into a bank file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--histogram-level", dest="histogram_level",
                   choices=["per_person", "per_frame"], default="per_person")
    p.set_defaults(func=cmd_embed)

    def add_eval_flags(p):
        p.add_argument("--predicate", choices=["iou", "afisf", "group"])
        p.add_argument("--tau", type=float)
        p.add_argument("--ks", help="comma-separated K list, e.g. 1,2,3")
        p.add_argument("--embedding", choices=["grp", "ind"])

    p = sub.add_parser("eval", help="metric report for a bank")
    p.add_argument("--config")
    p.add_argument("--bank", required=True)
    p.add_argument("--out")
    add_eval_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="2D principal-component CSV for a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedding", choices=["grp", "ind"])
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("ablate", help="sweep n_mask or location guidance")
    add_train_flags(p)
    add_eval_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", choices=["n-mask", "location"], default="n-mask")
    p.add_argument("--n-mask-values", help="comma-separated sweep values")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("finetune-gar", help="supervised group-recognition fine-tune")
    p.add_argument("--config")
    p.add_argument("--checkpoint", help="omit to train from scratch")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.add_argument("--report")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--freeze-trunk", action="store_true")
    p.set_defaults(func=cmd_finetune_gar)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--mode", choices=["pac", "paf", "both"], default="both")
    p.add_argument("--linear-only", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
