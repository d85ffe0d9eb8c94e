"""Command-line harness.

Subcommands: gen-data, train, eval, train-offset, finetune, report,
heatmap. Option precedence is flags > --config JSON file > defaults;
every run directory receives a manifest.json echoing the resolved
configuration, sufficient to reproduce the outputs bit-identically.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from . import channel as ch
from . import data as dataio
from . import models as mdl
from . import multirate as mr
from . import quantizer as qz
from .errors import ConfigurationError
from .metrics import nmse_db
from .nn import ModelGraph, TrainSchedule, load_params, save_params
from .training import fit, forward_batched

NMSE_HEADER = ["scenario", "cr", "bits", "mode", "snr_db", "nmse_db", "samples"]
ARCHES = ("csinet-plus", "csinet", "sm", "pm")


# ---------------------------------------------------------------------------
# option plumbing

def _resolve(args, defaults):
    """flags > config file > defaults, returned as a plain dict."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigurationError(
                f"config file sets unknown options: {sorted(unknown)}"
            )
        cfg.update(file_cfg)
    for key in defaults:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            cfg[key] = v
    return cfg


def _write_manifest(out_dir, command, cfg, extra=None):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool": "csifeedback",
        "version": __version__,
        "command": command,
        "config": cfg,
    }
    manifest.update(extra or {})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return path


def _append_csv(path, header, rows):
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if fresh:
            w.writerow(header)
        w.writerows(rows)


def _read_manifest(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# gen-data

GEN_DEFAULTS = {
    "preset": "default",
    "clusters": None,
    "subpaths": None,
    "spread-deg": None,
    "delay-spread-ns": None,
    "samples": 5000,
    "val-samples": 1000,
    "test-samples": 1000,
    "seed": 0,
}


def cmd_gen_data(args):
    cfg = _resolve(args, GEN_DEFAULTS)
    overrides = {}
    if cfg["clusters"] is not None:
        overrides["clusters"] = int(cfg["clusters"])
    if cfg["subpaths"] is not None:
        overrides["subpaths"] = int(cfg["subpaths"])
    if cfg["spread-deg"] is not None:
        overrides["angular_spread_deg"] = float(cfg["spread-deg"])
    if cfg["delay-spread-ns"] is not None:
        overrides["delay_spread_ns"] = float(cfg["delay-spread-ns"])
    gen = ch.ClusterModelConfig.preset(cfg["preset"], seed=int(cfg["seed"]), **overrides)
    counts = (int(cfg["samples"]), int(cfg["val-samples"]), int(cfg["test-samples"]))
    splits, fraction = dataio.generate_splits(gen, counts)
    os.makedirs(args.out, exist_ok=True)
    for name, ds in zip(("train", "val", "test"), splits):
        dataio.write_dataset(ds, os.path.join(args.out, f"{name}.csid"))
    _write_manifest(
        args.out, "gen-data", cfg,
        {
            "generator": asdict(gen),
            "scale": splits[0].scale,
            "energy_fraction": fraction,
            "splits": {"train": counts[0], "val": counts[1], "test": counts[2]},
        },
    )
    print(f"wrote {counts} samples to {args.out} "
          f"(scale {splits[0].scale:.3f}, retained energy {fraction:.4f})")


# ---------------------------------------------------------------------------
# model (re)construction helpers

def _build_arch(arch, cr, seed):
    if arch == "csinet-plus":
        enc = mdl.build_csinet_plus_encoder(cr, seed=seed)
        dec = mdl.build_csinet_plus_decoder(cr, seed=seed + 1)
        return enc, dec
    if arch == "csinet":
        return mdl.build_csinet_baseline(cr, seed=seed)
    raise ConfigurationError(f"not a single-rate architecture: {arch!r}")


def _combined(enc, dec):
    g = ModelGraph(f"{enc.name}+{dec.name}", dtype=enc.dtype)
    out = g.append_graph(enc, input_node=-1)
    g.outputs = g.append_graph(dec, input_node=out[-1])
    return g


def load_model(run_dir):
    """Rebuild encoder/decoder (or framework) from a training run directory."""
    m = _read_manifest(run_dir)
    cfg = m["config"]
    arch = cfg["arch"]
    seed = int(cfg["seed"])
    if arch in ("sm", "pm"):
        fw = mr.build_framework(arch, seed=seed)
        load_params(fw.graph, os.path.join(run_dir, "framework.csiw"))
        fw.encoder.meta["trained"] = True
        return m, fw
    enc, dec = _build_arch(arch, int(cfg["cr"]), seed)
    load_params(enc, os.path.join(run_dir, "encoder.csiw"))
    load_params(dec, os.path.join(run_dir, "decoder.csiw"))
    return m, (enc, dec)


def _load_split(data_dir, name):
    path = data_dir if data_dir.endswith(".csid") else os.path.join(data_dir, f"{name}.csid")
    return dataio.read_dataset(path)


# ---------------------------------------------------------------------------
# train

TRAIN_DEFAULTS = {
    "arch": "csinet-plus",
    "cr": 4,
    "epochs": 100,
    "batch": 200,
    "lr": 1e-3,
    "patience": 20,
    "weights": "30,6,2,1",
    "seed": 0,
}


def cmd_train(args):
    cfg = _resolve(args, TRAIN_DEFAULTS)
    arch = cfg["arch"]
    if arch not in ARCHES:
        raise ConfigurationError(f"unknown architecture {arch!r}, choose from {ARCHES}")
    train = _load_split(args.data, "train")
    schedule = TrainSchedule(
        batch_size=int(cfg["batch"]),
        epochs=int(cfg["epochs"]),
        initial_lr=float(cfg["lr"]),
        patience=int(cfg["patience"]),
    )
    seed = int(cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    loss_rows = []

    if arch in ("sm", "pm"):
        fw = mr.build_framework(arch, seed=seed)
        weights = mr.RateLossWeights(*(float(v) for v in str(cfg["weights"]).split(",")))
        nmse_rows = []
        val = None
        try:
            val = _load_split(args.data, "val")
        except (FileNotFoundError, OSError):
            pass
        history = mr.train_multirate(
            fw, train.samples, weights, schedule, seed=seed,
            val_samples=None if val is None else val.samples,
            val_scale=None if val is None else val.scale,
            nmse_callback=lambda e, per_cr: nmse_rows.extend(
                [e, cr, f"{v:.4f}"] for cr, v in sorted(per_cr.items())
            ),
        )
        save_params(fw.graph, os.path.join(args.out, "framework.csiw"))
        if nmse_rows:
            _append_csv(os.path.join(args.out, "nmse_val.csv"),
                        ["epoch", "cr", "nmse_db"], nmse_rows)
    else:
        enc, dec = _build_arch(arch, int(cfg["cr"]), seed)
        graph = _combined(enc, dec)
        history = fit(graph, train.samples, train.samples, schedule, seed=seed)
        save_params(enc, os.path.join(args.out, "encoder.csiw"))
        save_params(dec, os.path.join(args.out, "decoder.csiw"))

    loss_rows = [[h.epoch, f"{h.loss:.8e}", f"{h.lr:.6g}"] for h in history]
    _append_csv(os.path.join(args.out, "losses.csv"), ["epoch", "loss", "lr"], loss_rows)
    _write_manifest(args.out, "train", cfg, {"data": os.path.abspath(args.data)})
    print(f"trained {arch} for {schedule.epochs} epochs; "
          f"final loss {history[-1].loss:.3e} -> {args.out}")


# ---------------------------------------------------------------------------
# eval

EVAL_DEFAULTS = {
    "scenario": "default",
    "snr-sweep": None,  # e.g. "0,5,10,15,20,inf"
    "bits": None,
    "mode": "mulaw",
    "mu": 12.0,
    "seed": 0,
    "cr": None,
}


def _pipeline_nmse(enc, dec, test, *, codec=None, offset=None, snr_db=math.inf,
                   seed=0, batch=200):
    """Full feedback chain NMSE on denormalized complex channels."""
    codewords = forward_batched(enc, test.samples, batch_size=batch)
    if not math.isinf(snr_db):
        codewords = ch.awgn_corrupt(
            codewords, snr_db, np.random.SeedSequence((seed, int(snr_db * 1000)))
        ).astype(np.float32)
    if codec is not None:
        m = codewords.shape[1]
        restored = np.empty_like(codewords, dtype=np.float64)
        for i in range(codewords.shape[0]):
            stream = qz.pack_bitstream(codec.encode(codewords[i]), enc.meta.get("cr", 4), codec.cfg)
            indices, _ = qz.unpack_bitstream(stream.to_bytes())
            restored[i] = codec.decode(indices)
        codewords = restored.astype(np.float32)
    if offset is not None:
        codewords = qz.offset_forward(offset, codewords).astype(np.float32)
    recon = forward_batched(dec, codewords, batch_size=batch)
    truth = test.complex_matrices()
    est = ch.denormalize_sample(recon.astype(np.float64), test.scale)
    return nmse_db(truth, est)


def cmd_eval(args):
    cfg = _resolve(args, EVAL_DEFAULTS)
    manifest, model = load_model(args.model)
    test = _load_split(args.data, "test")
    seed = int(cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    rows = []

    codec = None
    offset = None
    if args.codec:
        with open(args.codec) as fh:
            codec = qz.CodewordCodec.from_json(fh.read())
    elif cfg["bits"] is not None:
        raise ConfigurationError("--bits needs --codec (fit by train-offset or finetune)")
    if args.offset:
        offset_dir = args.offset
        with open(os.path.join(offset_dir, "codec.json")) as fh:
            codec = qz.CodewordCodec.from_json(fh.read())
        off_manifest = _read_manifest(offset_dir)
        offset = qz.build_offset_net(int(off_manifest["codeword_length"]), seed=0)
        load_params(offset, os.path.join(offset_dir, "offset.csiw"))

    snrs = [math.inf]
    if cfg["snr-sweep"]:
        snrs = [math.inf if s in ("inf", "") else float(s)
                for s in str(cfg["snr-sweep"]).split(",")]

    if isinstance(model, tuple):
        enc, dec = model
        for snr in snrs:
            r = _pipeline_nmse(enc, dec, test, codec=codec, offset=offset,
                               snr_db=snr, seed=seed)
            rows.append([cfg["scenario"], int(manifest["config"]["cr"]),
                         codec.cfg.bits if codec else "none",
                         codec.cfg.mode if codec else "none",
                         "clean" if math.isinf(snr) else snr,
                         f"{r.nmse_db:.4f}", r.samples])
    else:
        if cfg["snr-sweep"] or codec is not None:
            raise ConfigurationError(
                "snr sweeps and quantized chains apply to single-rate models"
            )
        fw = model
        crs = list(mdl.SUPPORTED_CR) if cfg["cr"] is None else [int(cfg["cr"])]
        recon = fw.reconstructions(test.samples)
        truth = test.complex_matrices()
        for cr in crs:
            est = ch.denormalize_sample(recon[cr].astype(np.float64), test.scale)
            r = nmse_db(truth, est)
            rows.append([cfg["scenario"], cr, "none", "none", "clean",
                         f"{r.nmse_db:.4f}", r.samples])
    report = os.path.join(args.out, "nmse.csv")
    _append_csv(report, NMSE_HEADER, rows)
    _write_manifest(args.out, "eval", cfg,
                    {"model": os.path.abspath(args.model),
                     "data": os.path.abspath(args.data)})
    for row in rows:
        print(" ".join(str(v) for v in row))
    print(f"report -> {report}")


# ---------------------------------------------------------------------------
# train-offset / finetune

OFFSET_DEFAULTS = {
    "bits": 3,
    "mode": "mulaw",
    "mu": 12.0,
    "epochs": 100,
    "batch": 200,
    "lr": 1e-3,
    "patience": 20,
    "seed": 0,
}


def cmd_train_offset(args):
    cfg = _resolve(args, OFFSET_DEFAULTS)
    manifest, model = load_model(args.model)
    if not isinstance(model, tuple):
        raise ConfigurationError("offset training expects a single-rate model directory")
    enc, _ = model
    train = _load_split(args.data, "train")
    qcfg = qz.QuantizerConfig(mode=cfg["mode"], bits=int(cfg["bits"]), mu=float(cfg["mu"]))
    schedule = TrainSchedule(batch_size=int(cfg["batch"]), epochs=int(cfg["epochs"]),
                             initial_lr=float(cfg["lr"]), patience=int(cfg["patience"]))
    offset, codec, history = qz.train_offset(
        enc, train.samples, qcfg, schedule, seed=int(cfg["seed"])
    )
    os.makedirs(args.out, exist_ok=True)
    save_params(offset, os.path.join(args.out, "offset.csiw"))
    with open(os.path.join(args.out, "codec.json"), "w") as fh:
        fh.write(codec.to_json())
    _append_csv(os.path.join(args.out, "losses.csv"), ["epoch", "loss", "lr"],
                [[h.epoch, f"{h.loss:.8e}", f"{h.lr:.6g}"] for h in history])
    _write_manifest(args.out, "train-offset", cfg,
                    {"model": os.path.abspath(args.model),
                     "codeword_length": offset.layers[0].n_in})
    print(f"offset trained ({cfg['mode']} B={cfg['bits']}); "
          f"final loss {history[-1].loss:.3e} -> {args.out}")


FINETUNE_DEFAULTS = {
    "epochs": 200,
    "batch": 200,
    "lr": 1e-4,
    "patience": 20,
    "seed": 0,
}


def cmd_finetune(args):
    cfg = _resolve(args, FINETUNE_DEFAULTS)
    manifest, model = load_model(args.model)
    if not isinstance(model, tuple):
        raise ConfigurationError("finetune expects a single-rate model directory")
    enc, dec = model
    off_manifest = _read_manifest(args.offset)
    offset = qz.build_offset_net(int(off_manifest["codeword_length"]), seed=0)
    load_params(offset, os.path.join(args.offset, "offset.csiw"))
    with open(os.path.join(args.offset, "codec.json")) as fh:
        codec = qz.CodewordCodec.from_json(fh.read())
    train = _load_split(args.data, "train")
    schedule = TrainSchedule(batch_size=int(cfg["batch"]), epochs=int(cfg["epochs"]),
                             initial_lr=float(cfg["lr"]), patience=int(cfg["patience"]))
    enc.freeze()
    history = qz.finetune_quantized(
        enc, dec, offset, train.samples, codec, schedule, seed=int(cfg["seed"])
    )
    os.makedirs(args.out, exist_ok=True)
    shutil.copyfile(os.path.join(args.model, "encoder.csiw"),
                    os.path.join(args.out, "encoder.csiw"))
    save_params(dec, os.path.join(args.out, "decoder.csiw"))
    save_params(offset, os.path.join(args.out, "offset.csiw"))
    with open(os.path.join(args.out, "codec.json"), "w") as fh:
        fh.write(codec.to_json())
    _append_csv(os.path.join(args.out, "losses.csv"), ["epoch", "loss", "lr"],
                [[h.epoch, f"{h.loss:.8e}", f"{h.lr:.6g}"] for h in history])
    _write_manifest(args.out, "finetune", {**cfg, **{
        "arch": manifest["config"]["arch"], "cr": manifest["config"]["cr"]}},
        {"model": os.path.abspath(args.model),
         "offset_run": os.path.abspath(args.offset),
         "codeword_length": int(off_manifest["codeword_length"])})
    print(f"finetuned decoder+offset; final loss {history[-1].loss:.3e} -> {args.out}")


# ---------------------------------------------------------------------------
# report / heatmap

# published figures the computed numbers are cross-checked against; the
# 738-bit entries disagree with M*B and are flagged in the output
PUBLISHED_BUDGET_OVERRIDES = {(8, 3): 738, (16, 6): 738}
PUBLISHED_COMBINED_TOTALS = {4: 2_122_340, 8: 1_073_508, 16: 549_092, 32: 286_884}


def cmd_report(args):
    os.makedirs(args.out, exist_ok=True)
    enc_rows = []
    for cr in mdl.SUPPORTED_CR:
        rep = mdl.count_params(mdl.build_csinet_plus_encoder(cr))
        enc_rows.append([cr, rep.total_with_bias, rep.fc_weights,
                         f"{100 * rep.fc_fraction:.2f}%"])
    _append_csv(os.path.join(args.out, "encoder_params.csv"),
                ["cr", "total", "fc_weights", "fc_fraction"], enc_rows)

    combined_rows = []
    for cr in mdl.SUPPORTED_CR:
        enc = mdl.count_params(mdl.build_csinet_plus_encoder(cr)).total_with_bias
        dec = mdl.count_params(mdl.build_csinet_plus_decoder(cr)).total_with_bias
        total = enc + dec
        published = PUBLISHED_COMBINED_TOTALS[cr]
        note = "" if total == published else (
            f"differs from published combined total {published} "
            f"(delta {total - published:+d}); per-layer widths beyond the "
            f"described architecture cannot be reconciled"
        )
        combined_rows.append([cr, total, published, note])
    _append_csv(os.path.join(args.out, "combined_params.csv"),
                ["cr", "computed_total", "published_total", "note"], combined_rows)

    ue_rows = []
    for kind in ("sm", "pm"):
        rep = mr.count_ue_params(mr.build_framework(kind))
        ue_rows.append([kind, rep.total_with_bias, rep.total_mixed,
                        f"{rep.reduction_with_bias:.2f}%",
                        f"{rep.reduction_mixed:.2f}%", rep.four_standalone])
    _append_csv(os.path.join(args.out, "multirate_params.csv"),
                ["framework", "total_with_bias", "total_mixed",
                 "reduction_with_bias", "reduction_mixed", "four_standalone"],
                ue_rows)

    budget_rows = []
    for cr in mdl.SUPPORTED_CR:
        m = mdl.codeword_length(cr)
        for bits in (3, 4, 5, 6):
            payload = m * bits
            published = PUBLISHED_BUDGET_OVERRIDES.get((cr, bits))
            note = ""
            if published is not None and published != payload:
                note = (f"published table prints {published}; M*B = {payload} "
                        f"(likely a typo upstream)")
            budget_rows.append([cr, bits, m, payload, note])
    _append_csv(os.path.join(args.out, "bit_budgets.csv"),
                ["cr", "bits", "codeword_length", "payload_bits", "note"], budget_rows)

    for name in ("encoder_params", "multirate_params", "bit_budgets"):
        print(f"-- {name} --")
        with open(os.path.join(args.out, f"{name}.csv")) as fh:
            sys.stdout.write(fh.read())
    _write_manifest(args.out, "report", {})
    print(f"reports -> {args.out}")


def cmd_heatmap(args):
    manifest, model = load_model(args.model)
    if not isinstance(model, tuple):
        raise ConfigurationError("heatmap expects a single-rate model directory")
    enc, _ = model
    hm = mdl.fc_heatmap(enc)
    os.makedirs(args.out, exist_ok=True)
    txt = os.path.join(args.out, "heatmap.txt")
    mdl.write_heatmap_text(hm, txt)
    pgms = mdl.write_heatmap_pgm(hm, os.path.join(args.out, "heatmap"))
    _write_manifest(args.out, "heatmap", {}, {"model": os.path.abspath(args.model)})
    print(f"heatmap -> {txt} and {', '.join(pgms)}")


# ---------------------------------------------------------------------------
# parser

def make_parser():
    p = argparse.ArgumentParser(
        prog="csifeedback",
        description="Learned CSI feedback: data generation, training, "
                    "bit-level evaluation, and reports.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate synthetic channel datasets")
    g.add_argument("--preset", choices=sorted(ch.PRESETS))
    g.add_argument("--clusters", type=int)
    g.add_argument("--subpaths", type=int)
    g.add_argument("--spread-deg", type=float, dest="spread_deg")
    g.add_argument("--delay-spread-ns", type=float, dest="delay_spread_ns")
    g.add_argument("--samples", type=int)
    g.add_argument("--val-samples", type=int, dest="val_samples")
    g.add_argument("--test-samples", type=int, dest="test_samples")
    g.add_argument("--seed", type=int)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train an architecture end to end")
    t.add_argument("--framework", "--arch", dest="arch",
                   choices=list(ARCHES) + ["csinet+"])
    t.add_argument("--cr", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--weights")
    t.add_argument("--seed", type=int)
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="NMSE evaluation of a trained model")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--scenario")
    e.add_argument("--snr-sweep", dest="snr_sweep")
    e.add_argument("--bits", type=int)
    e.add_argument("--mode", choices=qz.MODES)
    e.add_argument("--mu", type=float)
    e.add_argument("--cr", type=int)
    e.add_argument("--codec", help="codec.json from train-offset/finetune")
    e.add_argument("--offset", help="offset run directory")
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)

    o = sub.add_parser("train-offset", help="train the dequantization offset network")
    o.add_argument("--model", required=True)
    o.add_argument("--data", required=True)
    o.add_argument("--bits", type=int)
    o.add_argument("--mode", choices=qz.MODES)
    o.add_argument("--mu", type=float)
    o.add_argument("--epochs", type=int)
    o.add_argument("--batch", type=int)
    o.add_argument("--lr", type=float)
    o.add_argument("--patience", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--config")
    o.add_argument("--out", required=True)
    o.set_defaults(fn=cmd_train_offset)

    f = sub.add_parser("finetune",
                       help="freeze the encoder, refine decoder+offset through the quantizer")
    f.add_argument("--model", required=True)
    f.add_argument("--offset", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--epochs", type=int)
    f.add_argument("--batch", type=int)
    f.add_argument("--lr", type=float)
    f.add_argument("--patience", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_finetune)

    r = sub.add_parser("report", help="parameter tables and bit budgets")
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_report)

    h = sub.add_parser("heatmap", help="export compression-layer heatmaps")
    h.add_argument("--model", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(fn=cmd_heatmap)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    if getattr(args, "arch", None) == "csinet+":
        args.arch = "csinet-plus"
    try:
        args.fn(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
