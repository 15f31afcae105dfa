"""Command-line interface.

Commands: ``params``, ``train``, ``profile``, ``attn``, ``gradcheck``,
``defaults``. Exit codes: 0 on success, 1 for usage or configuration
errors, 2 for runtime numeric failures. All outputs are deterministic for
a fixed config and seed; timestamps appear only in printed headers and
are suppressed by ``--no-timestamps``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_model, save_checkpoint
from .configio import (
    ConfigError,
    default_config,
    energy_constants_from,
    load_config,
    model_config_from,
    train_config_from,
)
from .data import synth_dataset
from .model import build_model, count_params, param_breakdown
from .profiling import (
    energy_spike_model,
    export_attention_maps,
    read_netpbm,
    sfr_trace,
    zeroed_trace,
)
from .train import NonFiniteLossError, Trainer, evaluate, grad_check

__all__ = ["main"]


def _common_flags(sub: argparse.ArgumentParser, needs_config: bool = True) -> None:
    sub.add_argument("--config", required=needs_config, help="path to a JSON config")
    sub.add_argument("--checkpoint", default=None, help="checkpoint to load")
    sub.add_argument("--seed", type=int, default=None, help="override config seeds")
    sub.add_argument(
        "--timesteps", type=int, default=None, help="override the model's timesteps"
    )
    sub.add_argument("--out", default=None, help="output directory (default from io)")
    sub.add_argument(
        "--no-timestamps",
        action="store_true",
        help="omit timestamps from printed headers",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikekit",
        description="spiking transformer kernels, training and energy profiling",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="print the parameter count of a config")
    _common_flags(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("train", help="train on a synthetic dataset")
    _common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("profile", help="firing-rate and energy reports")
    _common_flags(p)
    p.add_argument("--n-samples", type=int, default=None, help="profiling batch size")
    p.add_argument(
        "--zero-rates",
        action="store_true",
        help="replace the measured trace by an all-zero one",
    )
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("attn", help="export token firing-rate heatmaps")
    _common_flags(p)
    p.add_argument("--image", required=True, help="input image (netpbm P2/P3/P5/P6)")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _common_flags(p)
    p.add_argument("--tolerance", type=float, default=1e-2)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("defaults", help="print the default configuration")
    p.set_defaults(func=cmd_defaults)
    return parser


def _setup(args):
    """Load config and apply CLI overrides. Returns (config dict, model cfg)."""
    config = load_config(args.config)
    if args.seed is not None:
        config["model"]["seed"] = args.seed
        config["train"]["seed"] = args.seed
    model_cfg = model_config_from(config)
    if args.timesteps is not None:
        if args.timesteps < 1:
            raise ConfigError("--timesteps must be positive")
        model_cfg = dataclasses.replace(model_cfg, timesteps=args.timesteps)
    return config, model_cfg


def _out_dir(args, config) -> Path:
    out = Path(args.out if args.out is not None else config["io"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(args, title: str, lines=()) -> None:
    print(f"== {title} ==")
    if not args.no_timestamps:
        print(f"generated: {datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    for line in lines:
        print(line)


def _load_or_build(args, config, model_cfg):
    """Build the model, from a checkpoint when given. Returns (model, extras, source)."""
    if args.checkpoint:
        model, extras = load_model(args.checkpoint)
        if model.cfg != model_cfg:
            raise ConfigError(
                f"checkpoint architecture {model.cfg} does not match the config"
            )
        return model, extras, f"checkpoint {args.checkpoint}"
    seed = config["model"]["seed"]
    return build_model(model_cfg, seed=seed), {}, f"random weights (seed {seed})"


def _dataset(config, model_cfg, n_per_class=None, seed=None):
    ds_cfg = config["train"]["dataset"]
    geometry = (model_cfg.in_channels, model_cfg.height, model_cfg.width)
    return synth_dataset(
        ds_cfg["kind"],
        int(n_per_class if n_per_class is not None else ds_cfg["n_per_class"]),
        geometry,
        int(seed if seed is not None else config["train"]["seed"]),
    )


def cmd_params(args) -> int:
    config, model_cfg = _setup(args)
    model = build_model(model_cfg, seed=config["model"]["seed"])
    total = count_params(model)
    _header(args, "parameter count")
    for name, n in param_breakdown(model).items():
        print(f"{name}: {n}")
    print(f"total: {total}")
    print(f"millions: {total / 1e6:.2f}")
    return 0


def cmd_train(args) -> int:
    config, model_cfg = _setup(args)
    out = _out_dir(args, config)
    train_cfg = train_config_from(config)
    dataset = _dataset(config, model_cfg)
    if len(dataset) == 0:
        raise ConfigError("train.dataset.n_per_class: dataset is empty")
    if dataset.num_classes != model_cfg.num_classes:
        raise ConfigError(
            f"model.num_classes: dataset {config['train']['dataset']['kind']!r} has "
            f"{dataset.num_classes} classes, config says {model_cfg.num_classes}"
        )

    model, extras, source = _load_or_build(args, config, model_cfg)
    start_step = start_epoch = 0
    momentum = {}
    if extras:
        state = extras.get("__train_state")
        if state is not None:
            start_step, start_epoch = int(state[0]), int(state[1])
        momentum = {
            name[len("__momentum.") :]: arr
            for name, arr in extras.items()
            if name.startswith("__momentum.")
        }

    log_path = out / "train_log.csv"
    trainer = Trainer(
        model,
        dataset,
        train_cfg,
        log_path=log_path,
        start_step=start_step,
        start_epoch=start_epoch,
        momentum_buffers=momentum,
    )
    _header(
        args,
        "training",
        [
            f"weights: {source}",
            f"dataset: {config['train']['dataset']['kind']} ({len(dataset)} samples, "
            f"{dataset.num_classes} classes)",
            f"epochs: {train_cfg.epochs} (starting at {start_epoch})",
        ],
    )
    history = trainer.run()
    ckpt_path = out / "model.sdtf"
    extra_records = {"__train_state": np.array([trainer.step, trainer.epoch])}
    extra_records.update(trainer.momentum_records())
    save_checkpoint(ckpt_path, model, extra_records)
    final_acc = history["accuracy"][-1] if history["accuracy"] else float("nan")
    print(f"final loss: {history['loss'][-1]:.6f}")
    print(f"train accuracy: {final_acc:.4f}")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return 0


def cmd_profile(args) -> int:
    config, model_cfg = _setup(args)
    out = _out_dir(args, config)
    constants = energy_constants_from(config)
    model, _, source = _load_or_build(args, config, model_cfg)

    n_samples = (
        args.n_samples if args.n_samples is not None else config["profile"]["n_samples"]
    )
    if n_samples < 1:
        raise ConfigError("profile.n_samples must be positive")
    if args.zero_rates:
        trace = zeroed_trace(model_cfg)
        trace_source = "injected all-zero rates"
    else:
        dataset = _dataset(config, model_cfg, n_per_class=n_samples)
        images = dataset.images[:n_samples]
        trace = sfr_trace(model, images)
        trace_source = f"measured on {len(images)} samples"

    report = energy_spike_model(model_cfg, trace, constants)
    rates_path = out / "firing_rates.csv"
    spike_path = out / "energy_spike.csv"
    dense_path = out / "energy_dense.csv"
    trace.to_csv(rates_path)
    report.to_csv(spike_path, side="spike")
    report.to_csv(dense_path, side="dense")

    mean_spike_attn = (
        sum(report.attention_spike_pj) / len(report.attention_spike_pj)
        if report.attention_spike_pj
        else 0.0
    )
    _header(
        args,
        "energy profile",
        [f"weights: {source}", f"trace: {trace_source}"] + [f"note: {n}" for n in report.notes],
    )
    print(f"dense attention energy per layer: {report.attention_dense_pj:.4e} pJ")
    print(f"spike attention energy per layer (mean): {mean_spike_attn:.4e} pJ")
    print(f"attention energy ratio: {report.attention_ratio:.1f}")
    print(f"model total (spike-driven): {report.spike_total:.4e} pJ")
    print(f"model total (dense): {report.dense_total:.4e} pJ")
    print(f"model energy ratio: {report.ratio:.1f}")
    print(f"reports: {spike_path}, {dense_path}, {rates_path}")
    return 0


def cmd_attn(args) -> int:
    config, model_cfg = _setup(args)
    out = _out_dir(args, config)
    image = read_netpbm(args.image)
    if image.shape[0] == 1 and model_cfg.in_channels > 1:
        image = np.repeat(image, model_cfg.in_channels, axis=0)
    if image.shape != (model_cfg.in_channels, model_cfg.height, model_cfg.width):
        raise ConfigError(
            f"--image: geometry {image.shape} does not match the config "
            f"({model_cfg.in_channels}, {model_cfg.height}, {model_cfg.width})"
        )
    image = (image - 0.5) / 0.5

    model, _, source = _load_or_build(args, config, model_cfg)
    trace = sfr_trace(model, image[None], collect_token_maps=True)
    written = export_attention_maps(trace, model_cfg.grid, out)
    _header(args, "attention maps", [f"weights: {source}", f"grid: {model_cfg.grid}"])
    for block in range(1, model_cfg.depth + 1):
        value_site = f"block{block}.attn.value"
        output_site = f"block{block}.attn.output"
        v_mean = float(np.mean(trace.token_maps[value_site]))
        o_mean = float(np.mean(trace.token_maps[output_site]))
        print(
            f"block{block}: value map mean {v_mean:.6f} -> output map mean {o_mean:.6f}"
        )
        for site in (value_site, output_site):
            csv_path, pgm_path = written[site]
            print(f"  {site}: {csv_path}, {pgm_path}")
    return 0


def cmd_gradcheck(args) -> int:
    config, model_cfg = _setup(args)
    model, _, source = _load_or_build(args, config, model_cfg)
    dataset = _dataset(config, model_cfg, n_per_class=1)
    images = dataset.images[:1]
    labels = dataset.labels[:1]
    _header(args, "gradient check", [f"weights: {source}"])
    report = grad_check(model, images, labels, tolerance=args.tolerance)
    print(report.summary())
    if not report.passed:
        print("gradient check FAILED")
        return 2
    print("gradient check passed")
    return 0


def cmd_defaults(args) -> int:
    print(json.dumps(default_config(), indent=2))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
