"""Command-line pipeline: gen-data, train-vae, train-clf, attack, evaluate, export-images.

Every subcommand reads an optional ``--config`` file; any config key can also
be given as a flag (``--attack.eta 0.3``), and flags win over the file.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import datasets, metrics, reporting
from .attacks import AttackConfig, AttackResult, run_campaign
from .classifier import ConvClassifier
from .config import KEYS, RunConfig
from .errors import ConfigError, FormatError
from .persistence import load_weights, save_weights
from .vqvae import WaveletVQVAE

__all__ = ["main", "build_parser"]


class CLIError(Exception):
    pass


def _config(args, subcommand: str) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    flags = {key: value for key, value in vars(args).items() if key in KEYS and value is not None}
    return base.override(flags).require(subcommand)


def _load_data(path, cfg: RunConfig) -> datasets.Dataset:
    return datasets.load_dataset(_existing(path), n_classes=cfg["data.classes"])


def _existing(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise CLIError(f"{path}: no such file")
    return path


def _model(cls, path):
    weights = load_weights(_existing(path))
    try:
        return cls.from_weights(weights)
    except KeyError as exc:
        raise CLIError(f"{path}: missing tensor {exc.args[0]!r} for {cls.__name__}") from None


def _save_adversarial(path, images: np.ndarray, labels: np.ndarray) -> None:
    save_weights({"images": images.astype(np.float32), "labels": labels.astype(np.float32)}, path)


def _load_adversarial(path) -> tuple[np.ndarray, np.ndarray]:
    stored = load_weights(_existing(path))
    if "images" not in stored or stored["images"].ndim != 4:
        raise CLIError(f"{path}: expected an 'images' tensor of rank 4")
    return stored["images"], stored.get("labels", np.zeros(0)).astype(np.int64)


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args) -> None:
    cfg = _config(args, "gen-data")
    ds = datasets.generate(cfg["data.count"], cfg["seed"], size=cfg["data.size"], n_classes=cfg["data.classes"])
    datasets.save_dataset(ds, args.out)


def cmd_train_vae(args) -> None:
    cfg = _config(args, "train-vae")
    ds = _load_data(args.data, cfg)
    vae = WaveletVQVAE(
        filter=cfg["wavelet.filter"],
        levels=cfg["wavelet.levels"],
        bands=cfg["wavelet.bands"],
        n_codes=cfg["vqvae.K"],
        code_dim=cfg["vqvae.D"],
        hidden=cfg["vqvae.hidden"],
        beta=cfg["vqvae.beta"],
        epochs=cfg["vqvae.epochs"],
        lr=cfg["vqvae.lr"],
        codebook_init=cfg["vqvae.codebook_init"],
        batch_size=cfg["vqvae.batch_size"],
        seed=cfg["seed"],
    ).fit(ds.to_float())
    save_weights(vae.get_weights(), args.out)
    reporting.write_history_csv({"loss": [vae.initial_loss_] + list(vae.history_)}, args.history or f"{args.out}.loss.csv")


def cmd_train_clf(args) -> None:
    cfg = _config(args, "train-clf")
    ds = _load_data(args.data, cfg)
    clf = ConvClassifier(
        n_classes=cfg["data.classes"],
        channels=cfg["clf.channels"],
        epochs=cfg["clf.epochs"],
        lr=cfg["clf.lr"],
        batch_size=cfg["clf.batch_size"],
        seed=cfg["seed"],
    ).fit(ds.to_float(), ds.labels)
    save_weights(clf.get_weights(), args.out)
    reporting.write_history_csv(
        {"loss": [float("nan")] + list(clf.loss_history_), "accuracy": clf.accuracy_history_},
        args.history or f"{args.out}.loss.csv",
    )


def attack_config(cfg: RunConfig) -> AttackConfig:
    return AttackConfig(
        eta=cfg["attack.eta"],
        lr=cfg["attack.lr"],
        n_steps=cfg["attack.steps"],
        epsilon=cfg["attack.epsilon"],
        alpha=cfg["attack.alpha"],
        mu=cfg["attack.mu"],
        dim_prob=cfg["attack.dim_prob"],
        seed=cfg["seed"],
    )


def cmd_attack(args) -> None:
    cfg = _config(args, "attack")
    ds = _load_data(args.data, cfg)
    clf = _model(ConvClassifier, args.clf)
    method = cfg["attack.method"]
    vae = None
    if method == "latent":
        if not args.vae:
            raise CLIError("the latent attack needs --vae")
        vae = _model(WaveletVQVAE, args.vae)
    results = run_campaign(
        ds.to_float(), ds.labels, method, attack_config(cfg), clf, vae, workers=cfg["attack.workers"]
    )
    _save_adversarial(args.out, np.stack([r.x_adv for r in results]), ds.labels)
    reporting.write_results_csv(results, args.results)
    failed = [r for r in results if r.error]
    if failed:
        print(f"warning: {len(failed)} image(s) failed, first: {failed[0].error}", file=sys.stderr)


def cmd_evaluate(args) -> None:
    cfg = _config(args, "evaluate")
    if len(args.results) != len(args.adv):
        raise CLIError("give one --adv file per --results file")
    ds = _load_data(args.data, cfg)
    clean = ds.to_float()
    clf = _model(ConvClassifier, args.clf)
    model_name = args.model_name or Path(args.clf).stem
    reports = []
    for results_path, adv_path in zip(args.results, args.adv):
        rows = reporting.read_results_csv(_existing(results_path))
        images, _ = _load_adversarial(adv_path)
        if images.shape != clean.shape or len(rows) != len(clean):
            raise CLIError(f"{adv_path}: {len(rows)} results / {images.shape} images do not match {clean.shape}")
        method = rows[0]["method"] if rows else "none"
        outcome = [AttackResult(images[r["index"]], r["success"], int(r["steps"]), 0.0, method) for r in rows]
        latent = method == "latent"
        reports.append(
            metrics.evaluate(
                clean,
                images,
                outcome,
                clf,
                method=method,
                model_name=model_name,
                eta=cfg["attack.eta"] if latent else float("nan"),
                epsilon=float("nan") if latent else cfg["attack.epsilon"],
                steps=max((int(r["steps"]) for r in rows), default=0),
                seed=cfg["seed"],
                fid_layer=cfg["metrics.fid_layer"],
                lpips_layers=cfg["metrics.lpips_layers"],
                config=cfg.to_dict(),
            )
        )
    reporting.write_metrics_csv(reports, args.out)


def cmd_export_images(args) -> None:
    _config(args, "export-images")
    ds = datasets.load_dataset(_existing(args.data))
    images, _ = _load_adversarial(args.adv)
    if images.shape[0] != len(ds):
        raise CLIError(f"{args.adv}: {images.shape[0]} images, dataset has {len(ds)}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count = len(ds) if args.limit is None else min(args.limit, len(ds))
    for i in range(count):
        reporting.write_ppm(reporting.side_by_side(ds.images[i], images[i]), out / f"{i:05d}.ppm")


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavevae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="key = value config file")
        keys = p.add_argument_group("config overrides")
        for key in KEYS:
            keys.add_argument(f"--{key}", dest=key, metavar="VALUE")
        return p

    p = command("gen-data", cmd_gen_data, "write a synthetic dataset file")
    p.add_argument("--out", required=True)

    for name, fn in (("train-vae", cmd_train_vae), ("train-clf", cmd_train_clf)):
        p = command(name, fn, f"fit the {'VQ-VAE' if 'vae' in name else 'classifier'}")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True, help="weights file")
        p.add_argument("--history", help="loss-history CSV (default: <out>.loss.csv)")

    p = command("attack", cmd_attack, "attack every image of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--clf", required=True)
    p.add_argument("--vae")
    p.add_argument("--out", required=True, help="adversarial images (weights-file layout)")
    p.add_argument("--results", required=True, help="per-image result CSV")

    p = command("evaluate", cmd_evaluate, "score attack runs")
    p.add_argument("--data", required=True)
    p.add_argument("--clf", required=True)
    p.add_argument("--results", required=True, nargs="+")
    p.add_argument("--adv", required=True, nargs="+")
    p.add_argument("--model-name")
    p.add_argument("--out", required=True)

    p = command("export-images", cmd_export_images, "write original|adversarial PPM pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--adv", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--limit", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CLIError, ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
