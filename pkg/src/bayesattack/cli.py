"""Command-line interface: attack, bench, train, serve-fixture."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attack import BayesOptAttack
from .data import find_idx_pair, load_idx, make_synthetic_linear
from .exceptions import BayesAttackError
from .harness import ExperimentSpec, report_table, run_experiment
from .models import (
    MLPModel,
    RemoteModel,
    evaluate_accuracy,
    load_weights,
    save_weights,
    train_mlp,
)
from .serve import ModelServer


def _parse_latent(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"latent shape must look like 1x14x14, got {text!r}")
    try:
        shape = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"latent shape must be integers, got {text!r}") from None
    return shape


def _load_model(spec: str):
    if spec.startswith(("http://", "https://")):
        return RemoteModel(spec)
    return MLPModel.from_file(spec)


def _parse_synth(spec: str):
    params = {"d": 16, "K": 3, "n": 400, "seed": 0, "sep": 6.0, "noise": 0.08}
    body = spec[len("synth:"):]
    if body:
        for piece in body.split(","):
            key, _, value = piece.partition("=")
            if key not in params:
                raise argparse.ArgumentTypeError(f"unknown synth parameter {key!r}")
            params[key] = float(value) if key in ("sep", "noise") else int(value)
    return make_synthetic_linear(
        dim=params["d"],
        num_classes=params["K"],
        count=params["n"],
        seed=params["seed"],
        sep=params["sep"],
        noise_std=params["noise"],
    ).dataset


def _load_dataset(spec: str):
    if spec.startswith("synth:") or spec == "synth":
        return _parse_synth(spec if spec.startswith("synth:") else "synth:")
    if "," in spec:
        images, labels = spec.split(",", 1)
        return load_idx(images, labels)
    path = Path(spec)
    if path.is_dir():
        images, labels = find_idx_pair(path)
        return load_idx(images, labels)
    raise argparse.ArgumentTypeError(
        f"dataset {spec!r} is neither a directory, an 'images,labels' pair, nor synth:..."
    )


def _add_attack_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, default=0.05, help="l-inf budget in pixel units")
    parser.add_argument("--budget", type=int, default=200, help="total query budget per image")
    parser.add_argument("--n-init", type=int, default=5, help="initial random design size")
    parser.add_argument(
        "--latent", type=_parse_latent, default=(1, 14, 14), metavar="CxHxW",
        help="latent perturbation shape, e.g. 1x14x14",
    )
    parser.add_argument(
        "--upsample", choices=("nearest", "bilinear", "bicubic"), default="nearest",
        help="latent-to-image upsampling method",
    )
    parser.add_argument("--seed", type=int, default=0, help="random seed")


def _build_attack(args) -> BayesOptAttack:
    return BayesOptAttack(
        epsilon=args.epsilon,
        budget=args.budget,
        n_init=args.n_init,
        latent_shape=args.latent,
        upsampling=args.upsample,
        random_state=args.seed,
    )


def _cmd_attack(args) -> int:
    model = _load_model(args.model)
    dataset = _load_dataset(args.dataset)
    if not 0 <= args.index < len(dataset):
        print(f"error: --index {args.index} outside dataset of size {len(dataset)}", file=sys.stderr)
        return 2
    item = dataset[args.index]
    initial = int(np.argmax(model.query(item.image)))
    if initial != item.label:
        print(
            f"error: model already misclassifies image {item.id} "
            f"(predicted {initial}, label {item.label}); nothing to attack",
            file=sys.stderr,
        )
        return 2
    attack = _build_attack(args)
    outcome = attack.run(model, item.image, item.label)
    status = "SUCCESS" if outcome.success else "FAILURE"
    print(f"{status} image={item.id} label={item.label} adv_label={outcome.adv_label} "
          f"queries={outcome.queries_used}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary = {
            "id": item.id,
            "label": int(item.label),
            "success": outcome.success,
            "queries_used": outcome.queries_used,
            "adv_label": outcome.adv_label,
            "best_value": max(r.value for r in outcome.trace),
            "final_latent": [float(v) for v in outcome.final_latent],
        }
        with open(out_dir / "outcome.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
        np.save(out_dir / "adv_image.npy", outcome.final_adv_image)
        np.save(out_dir / "clean_image.npy", item.image)
        print(f"wrote {out_dir / 'outcome.json'}")
    return 0


def _cmd_bench(args) -> int:
    spec = ExperimentSpec(
        model=_load_model(args.model),
        dataset=_load_dataset(args.dataset),
        attack=_build_attack(args),
        n_images=args.n_images,
        master_seed=args.seed,
        out_dir=Path(args.out),
        resume=args.resume,
    )
    report = run_experiment(spec)
    print(report_table(report))
    print(f"\nwrote {Path(args.out) / 'aggregate.json'}")
    return 1 if report.partial else 0


def _cmd_train(args) -> int:
    dataset = _load_dataset(args.dataset)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    weights = train_mlp(
        dataset,
        arch=hidden,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    save_weights(weights, args.out)
    train_acc = evaluate_accuracy(weights, dataset)
    print(f"train accuracy: {train_acc:.4f}")
    if args.eval_dataset:
        eval_acc = evaluate_accuracy(weights, _load_dataset(args.eval_dataset))
        print(f"test accuracy: {eval_acc:.4f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_serve(args) -> int:
    model = MLPModel(load_weights(args.model))
    server = ModelServer(model, host=args.host, port=args.port, quiet=False)
    print(f"serving {args.model} at {server.url}/query (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesattack",
        description="Query-efficient black-box adversarial attacks via Bayesian optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_attack = sub.add_parser("attack", help="attack a single image")
    p_attack.add_argument("--model", required=True, help="weights file or http(s) endpoint")
    p_attack.add_argument("--dataset", required=True,
                          help="dataset dir, 'images,labels' pair, or synth:d=..,K=..,n=..")
    p_attack.add_argument("--index", type=int, default=0, help="dataset index to attack")
    p_attack.add_argument("--out", help="directory for outcome.json and image arrays")
    _add_attack_args(p_attack)
    p_attack.set_defaults(func=_cmd_attack)

    p_bench = sub.add_parser("bench", help="attack a cohort and write reports")
    p_bench.add_argument("--model", required=True, help="weights file or http(s) endpoint")
    p_bench.add_argument("--dataset", required=True,
                         help="dataset dir, 'images,labels' pair, or synth:d=..,K=..,n=..")
    p_bench.add_argument("--n-images", type=int, default=100,
                         help="number of correctly classified images to attack")
    p_bench.add_argument("--out", required=True, help="output directory")
    p_bench.add_argument("--resume", action="store_true",
                         help="skip images already present in results.jsonl")
    _add_attack_args(p_bench)
    p_bench.set_defaults(func=_cmd_bench)

    p_train = sub.add_parser("train", help="train a native MLP and save its weights")
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True, help="weights file to write")
    p_train.add_argument("--hidden", default="128", help="comma-separated hidden sizes")
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--lr", type=float, default=0.2)
    p_train.add_argument("--batch-size", type=int, default=64)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--eval-dataset", help="held-out dataset for reported accuracy")
    p_train.set_defaults(func=_cmd_train)

    p_serve = sub.add_parser("serve-fixture", help="serve a weights file over loopback HTTP")
    p_serve.add_argument("--model", required=True, help="weights file to serve")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8100)
    p_serve.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        # Dataset/model specs are also resolved after parsing; bad ones are
        # usage errors just like their parse-time counterparts.
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BayesAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
