"""Command-line entry points: featurize, train, eval, verify, bench.

Configuration is a flat key=value text file; every key has a default, the
command line can override the common ones, and unknown keys are rejected.
All outputs land inside the configured output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import basis, fixtures, graph as graphmod
from .autodiff import Tape, backward
from .data import Dataset, load_atomrefs, load_manifest, split_dataset, target_stats
from .model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    prepare_inputs,
    save_checkpoint,
)
from .model import MessageTally
from .training import (
    TrainConfig,
    compute_metrics,
    evaluate,
    prepare_all,
    train,
)

_SCHEMA: dict[str, type] = {
    "manifest": str,
    "target": str,
    "local_rule": str,
    "dl": float,
    "dg": float,
    "hidden": int,
    "layers": int,
    "residuals": int,
    "batch_group": int,
    "lr": float,
    "epochs": int,
    "seed": int,
    "out": str,
    "loss": str,
    "patience": int,
    "train_frac": float,
    "val_frac": float,
    "test_frac": float,
    "atomrefs": str,
    "order": str,
    "global_excludes_local": bool,
}

_DEFAULTS = {
    "manifest": None,
    "target": None,
    "local_rule": "bonds",
    "dl": 2.0,
    "dg": 5.0,
    "hidden": 128,
    "layers": 6,
    "residuals": 2,
    "batch_group": 32,
    "lr": 1e-3,
    "epochs": 900,
    "seed": 0,
    "out": "mxm_out",
    "loss": "mae",
    "patience": 50,
    "train_frac": 0.8,
    "val_frac": 0.1,
    "test_frac": 0.1,
    "atomrefs": None,
    "order": "global_first",
    "global_excludes_local": False,
}


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def parse_config(path) -> dict:
    """Read a flat key=value config; unknown keys are an error."""
    cfg = dict(_DEFAULTS)
    with open(path, encoding="utf-8") as fh:
        for num, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not sep:
                raise ConfigError(f"{path}:{num}: expected key=value, got {line!r}")
            if key not in _SCHEMA:
                raise ConfigError(f"{path}:{num}: unknown config key {key!r}")
            typ = _SCHEMA[key]
            try:
                if typ is bool:
                    cfg[key] = _parse_bool(value)
                else:
                    cfg[key] = typ(value)
            except (ValueError, TypeError):
                raise ConfigError(
                    f"{path}:{num}: bad value for {key!r}: {value!r}"
                ) from None
    return cfg


_OVERRIDES = (
    ("seed", int),
    ("target", str),
    ("dg", float),
    ("dl", float),
    ("layers", int),
    ("hidden", int),
    ("lr", float),
    ("epochs", int),
    ("out", str),
)


def _settings(args) -> dict:
    cfg = parse_config(args.config) if args.config else dict(_DEFAULTS)
    for key, _ in _OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    if cfg["order"] not in ("global_first", "local_first"):
        raise ConfigError(f"order must be global_first or local_first, got {cfg['order']!r}")
    return ModelConfig(
        hidden_dim=cfg["hidden"],
        n_layers=cfg["layers"],
        n_residuals=cfg["residuals"],
        local_rule=cfg["local_rule"],
        local_cutoff=cfg["dl"],
        global_cutoff=cfg["dg"],
        local_first=cfg["order"] == "local_first",
        global_excludes_local=cfg["global_excludes_local"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    if not cfg["target"]:
        raise ConfigError("a target name is required (config key 'target')")
    refs = load_atomrefs(cfg["atomrefs"]) if cfg["atomrefs"] else None
    return TrainConfig(
        target=cfg["target"],
        epochs=cfg["epochs"],
        base_lr=cfg["lr"],
        batch_group=cfg["batch_group"],
        seed=cfg["seed"],
        loss=cfg["loss"],
        patience=cfg["patience"],
        atomrefs=refs,
    )


def _load_split(cfg: dict) -> Dataset:
    if not cfg["manifest"]:
        raise ConfigError("a manifest path is required (config key 'manifest')")
    ds = load_manifest(cfg["manifest"])
    fracs = (cfg["train_frac"], cfg["val_frac"], cfg["test_frac"])
    return split_dataset(ds, fracs, cfg["seed"])


def _out_dir(cfg: dict) -> str:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_featurize(args) -> int:
    cfg = _settings(args)
    if not cfg["manifest"]:
        raise ConfigError("featurize needs a manifest (config key 'manifest')")
    ds = load_manifest(cfg["manifest"])
    mcfg = _model_config(cfg)
    out = _out_dir(cfg)
    prepared = prepare_all(ds.molecules, mcfg)
    for k, (m, (g, feats)) in enumerate(zip(ds.molecules, prepared)):
        stem = os.path.splitext(os.path.basename(m.key or f"mol{k}"))[0]
        base = os.path.join(out, f"{k:04d}_{stem}")
        with open(base + ".graph.txt", "w", encoding="utf-8") as fh:
            fh.write(graphmod.dump_graph(g))
        _write_edge_csv(base + ".rbf_local.csv", feats.local_src, feats.local_dst, feats.rbf_local, "rbf")
        _write_edge_csv(base + ".rbf_global.csv", feats.global_src, feats.global_dst, feats.rbf_global, "rbf")
        _write_triple_csv(base + ".sbf_two.csv", feats, two_hop=True)
        _write_triple_csv(base + ".sbf_one.csv", feats, two_hop=False)
        print(
            f"{m.key or stem}: N={feats.n_nodes} El={feats.local_src.size} "
            f"Eg={feats.global_src.size} T2={feats.sbf_two.shape[0]} "
            f"T1={feats.sbf_one.shape[0]}"
        )
    return 0


def _write_edge_csv(path, src, dst, mat, prefix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "i"] + [f"{prefix}_{k + 1:02d}" for k in range(mat.shape[1])])
        for e in range(src.size):
            w.writerow([int(src[e]), int(dst[e])] + [_fmt(v) for v in mat[e]])


def _write_triple_csv(path, feats, two_hop: bool):
    # Node triples are reconstructed from the edge pointer arrays: the
    # pointed-at edge supplies (first, vertex), the target edge the rest.
    src, dst = feats.local_src, feats.local_dst
    if two_hop:
        e, t = feats.two_hop_edge, feats.two_hop_target
        idx = np.stack([src[e], dst[e], dst[t]], axis=1) if e.size else np.empty((0, 3), int)
        mat = feats.sbf_two
        cols = ["k", "j", "i"]
    else:
        e, t = feats.one_hop_edge, feats.one_hop_target
        idx = np.stack([src[e], dst[e], src[t]], axis=1) if e.size else np.empty((0, 3), int)
        mat = feats.sbf_one
        cols = ["jp", "i", "j"]
    header = cols + [
        f"sbf_l{l}n{n + 1}"
        for l in range(basis.N_SHBF)
        for n in range(basis.N_SRBF)
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(mat.shape[0]):
            w.writerow([int(v) for v in idx[r]] + [_fmt(v) for v in mat[r]])


def cmd_train(args) -> int:
    cfg = _settings(args)
    ds = _load_split(cfg)
    mcfg = _model_config(cfg)
    tcfg = _train_config(cfg)
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    result = train(ds, mcfg, tcfg)
    wall = time.perf_counter() - t0
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(result.params, ckpt)
    result.report.to_csv(os.path.join(out, "report.csv"))
    stats = target_stats(ds, tcfg.target) if not tcfg.atomrefs else None
    summary = {
        "target": tcfg.target,
        "seed": tcfg.seed,
        "epochs_run": len(result.report.epochs),
        "best_epoch": result.report.best_epoch,
        "best_val_mae": _none_if_nan(result.report.best_val_mae),
        "final_train_mae": result.report.final_train_mae,
        "n_parameters": result.params.n_scalars(),
        "checkpoint": ckpt,
        "wall_seconds": wall,
    }
    if stats is not None:
        summary["train_target_std"] = stats.std
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(
        f"trained {summary['epochs_run']} epochs, "
        f"final train MAE {summary['final_train_mae']:.6g}, "
        f"checkpoint {ckpt}"
    )
    return 0


def _none_if_nan(x: float):
    return None if isinstance(x, float) and math.isnan(x) else x


def _train_sigma(ds: Dataset, tcfg: TrainConfig) -> float | None:
    """Population std of the (possibly atom-referenced) train targets."""
    from .data import subtract_atomrefs

    if tcfg.atomrefs is None:
        stats = target_stats(ds, tcfg.target)
        return None if stats.degenerate else stats.std
    vals = np.array(
        [subtract_atomrefs(m, tcfg.target, tcfg.atomrefs) for m in ds.subset("train")]
    )
    sigma = float(np.sqrt(np.mean((vals - vals.mean()) ** 2)))
    return None if sigma == 0.0 else sigma


def cmd_eval(args) -> int:
    cfg = _settings(args)
    ds = _load_split(cfg)
    mcfg = _model_config(cfg)
    tcfg = _train_config(cfg)
    params = load_checkpoint(args.checkpoint)
    mols = ds.subset(args.split)
    if not mols:
        raise ConfigError(f"split {args.split!r} is empty")
    prepared = prepare_all(mols, mcfg)
    preds, truth = evaluate(params, mols, prepared, mcfg, tcfg)
    met = compute_metrics(preds, truth, _train_sigma(ds, tcfg))
    print(
        json.dumps(
            {
                "split": args.split,
                "n": met.n,
                "mae": met.mae,
                "std_mae": met.std_mae,
                "pearson_r": met.pearson_r,
            }
        )
    )
    return 0


# --- verify -----------------------------------------------------------------

_TINY = dict(hidden_dim=8, n_layers=1, n_residuals=1)


def _tiny_model(seed: int):
    mcfg = ModelConfig(**_TINY)
    params = init_params(mcfg, seed)
    return mcfg, params


def _check_gradients(seed: int):
    rng = np.random.default_rng(seed)
    mcfg, params = _tiny_model(seed)
    m = fixtures.random_molecule(rng, n_atoms=4, key="gradcheck")
    _, feats = prepare_inputs(m, mcfg)
    with Tape() as tape:
        y = forward(m, params, mcfg, feats=feats)
    backward(y, tape)
    step = 1e-4
    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        grad = t.grad.reshape(-1) if t.grad is not None else np.zeros_like(flat)
        take = min(8, flat.size)
        for j in rng.choice(flat.size, size=take, replace=False):
            keep = flat[j]
            flat[j] = keep + step
            hi = forward(m, params, mcfg, feats=feats).item()
            flat[j] = keep - step
            lo = forward(m, params, mcfg, feats=feats).item()
            flat[j] = keep
            fd = (hi - lo) / (2 * step)
            err = abs(grad[j] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst, 1e-4


def _check_rigid(seed: int, pair_dir=None):
    rng = np.random.default_rng(seed)
    mcfg, params = _tiny_model(seed)
    worst = 0.0
    if pair_dir is not None:
        from .data import load_molecule

        names = sorted(
            f[: -len(".rot.extxyz")]
            for f in os.listdir(pair_dir)
            if f.endswith(".rot.extxyz")
        )
        if not names:
            raise ConfigError(f"no *.rot.extxyz pairs in {pair_dir}")
        for name in names:
            base = load_molecule(os.path.join(pair_dir, f"{name}.extxyz"))
            moved = load_molecule(os.path.join(pair_dir, f"{name}.rot.extxyz"))
            y0 = forward(base, params, mcfg).item()
            y1 = forward(moved, params, mcfg).item()
            worst = max(worst, abs(y0 - y1))
        return worst, 1e-8
    for m in fixtures.fixture_set(5, seed=seed):
        y0 = forward(m, params, mcfg).item()
        for _ in range(3):
            rot = fixtures.random_rotation(rng)
            shift = rng.uniform(-8, 8, size=3)
            y1 = forward(fixtures.rigid_transform(m, rot, shift), params, mcfg).item()
            worst = max(worst, abs(y0 - y1))
    return worst, 1e-8


def _check_permutation(seed: int):
    rng = np.random.default_rng(seed)
    mcfg, params = _tiny_model(seed)
    worst = 0.0
    for m in fixtures.fixture_set(5, seed=seed):
        y0 = forward(m, params, mcfg).item()
        for _ in range(3):
            perm = rng.permutation(m.n_atoms)
            y1 = forward(fixtures.permute_atoms(m, perm), params, mcfg).item()
            worst = max(worst, abs(y0 - y1))
    return worst, 1e-10


def _check_angle_count(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0
    for _ in range(50):
        n, edges = fixtures.random_simple_graph(rng)
        expected = 0
        for a in range(len(edges)):
            for b in range(a + 1, len(edges)):
                if set(edges[a]) & set(edges[b]):
                    expected += 1
        worst = max(worst, abs(graphmod.count_angles(n, edges) - expected))
    return worst, 0


def _check_message_count(seed: int):
    rng = np.random.default_rng(seed)
    mcfg, params = _tiny_model(seed)
    worst = 0
    for k in range(10):
        m = fixtures.random_molecule(rng, key=f"msg{k}")
        g, feats = prepare_inputs(m, mcfg)
        tally = MessageTally()
        forward(m, params, mcfg, feats=feats, tally=tally)
        expect = graphmod.count_messages(g)
        got = tally.as_tuple()
        want = tuple(v * mcfg.n_layers for v in expect.as_tuple())
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
    return worst, 0


def _check_bessel_roots(_seed: int):
    roots = basis.bessel_roots()
    worst = max(
        abs(basis.spherical_jl(l, roots[l, k]))
        for l in range(basis.N_SHBF)
        for k in range(basis.N_SRBF)
    )
    return worst, 1e-10


def _check_cutoff(_seed: int):
    c = 5.0
    r = basis.radial_basis(np.array([c, c * 1.2]), c)
    s = basis.spherical_basis(np.array([c]), np.array([1.0]), c)
    worst = max(float(np.abs(r).max()), float(np.abs(s).max()))
    near = float(np.abs(basis.radial_basis(np.array([c - 1e-9]), c)).max())
    return max(worst, 0.0 if near < 1e-6 else near), 0


def _check_checkpoint(seed: int, tmp_dir: str):
    mcfg, params = _tiny_model(seed)
    m = fixtures.water()
    y0 = forward(m, params, mcfg).item()
    path = os.path.join(tmp_dir, "verify.ckpt")
    save_checkpoint(params, path)
    y1 = forward(m, load_checkpoint(path), mcfg).item()
    return abs(y0 - y1), 0


def cmd_verify(args) -> int:
    cfg = _settings(args)
    out = _out_dir(cfg)
    seed = cfg["seed"]
    checks = [
        ("gradient-check", lambda: _check_gradients(seed)),
        (
            "rigid-invariance",
            lambda: _check_rigid(seed, pair_dir=args.fixtures),
        ),
        ("permutation-invariance", lambda: _check_permutation(seed)),
        ("angle-count", lambda: _check_angle_count(seed)),
        ("message-count", lambda: _check_message_count(seed)),
        ("bessel-roots", lambda: _check_bessel_roots(seed)),
        ("basis-cutoff", lambda: _check_cutoff(seed)),
        ("checkpoint-roundtrip", lambda: _check_checkpoint(seed, out)),
    ]
    failures = 0
    for name, fn in checks:
        try:
            measured, tol = fn()
            ok = measured <= tol
        except Exception as e:  # a crashed check is a failed check
            print(f"FAIL {name} error={e}")
            failures += 1
            continue
        verdict = "PASS" if ok else "FAIL"
        print(f"{verdict} {name} measured={measured:.3e} tol={tol:.1e}" if tol else
              f"{verdict} {name} measured={measured:.3e} tol=0 (exact)")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} of {len(checks)} checks failed")
        return 1
    print(f"all {len(checks)} checks passed")
    return 0


# --- bench -------------------------------------------------------------------


def run_bench(n: int = 512, seed: int = 0, repeats: int = 2):
    """Message-count scaling measurements on random point clouds.

    Returns (rows, slopes).  Rows: scheme, n, cutoff, mean directed degree,
    message count, seconds.  The local scheme counts angle triples, the
    global scheme the two passes over global edges, and the reference
    scheme two-hop triples enumerated over the global layer, the cost an
    angle-aware scheme would pay without the two-layer split.
    """
    side = 16.0
    local_cutoffs = (1.5, 1.8, 2.1, 2.4, 2.7)
    global_cutoffs = (2.5, 3.0, 3.5, 4.0, 4.5)
    rows = []
    series: dict[str, list[tuple[float, float]]] = {
        "local": [],
        "global": [],
        "reference": [],
    }
    for rep in range(repeats):
        rng = np.random.default_rng(seed + rep)
        pts = fixtures.random_points(n, side, rng)
        for c in local_cutoffs:
            t0 = time.perf_counter()
            edges = graphmod.neighbor_search(pts, c)
            g = graphmod.MultiplexGraph(
                n_nodes=n,
                local_edges=edges,
                global_edges=np.empty((0, 2), dtype=np.int64),
                local_rule=f"cutoff:{c:g}",
                global_cutoff=side,
            )
            triples = graphmod.enumerate_angle_triples(g)
            dt = time.perf_counter() - t0
            msgs = int(triples.two_hop.shape[0] + triples.one_hop.shape[0])
            k_mean = edges.shape[0] / n
            rows.append(("local", n, c, k_mean, msgs, dt))
            if msgs:
                series["local"].append((k_mean, msgs))
        for c in global_cutoffs:
            t0 = time.perf_counter()
            edges = graphmod.neighbor_search(pts, c)
            deg = np.bincount(edges[:, 1], minlength=n)
            dt = time.perf_counter() - t0
            k_mean = edges.shape[0] / n
            msgs = 2 * edges.shape[0]
            rows.append(("global", n, c, k_mean, msgs, dt))
            series["global"].append((k_mean, msgs))
            ref = int((deg * (deg - 1)).sum())
            rows.append(("reference", n, c, k_mean, ref, dt))
            if ref:
                series["reference"].append((k_mean, ref))
    slopes = {}
    for scheme, pairs in series.items():
        k = np.log([p[0] for p in pairs])
        v = np.log([p[1] for p in pairs])
        slopes[scheme] = float(np.polyfit(k, v, 1)[0])
    return rows, slopes


def cmd_bench(args) -> int:
    cfg = _settings(args)
    out = _out_dir(cfg)
    rows, slopes = run_bench(n=args.n, seed=cfg["seed"])
    path = os.path.join(out, "bench.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scheme", "n_nodes", "cutoff", "mean_degree", "messages", "seconds"])
        for scheme, n, c, k, msgs, dt in rows:
            w.writerow([scheme, n, _fmt(c), _fmt(k), msgs, _fmt(dt)])
    with open(os.path.join(out, "bench_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(slopes, fh, indent=2)
        fh.write("\n")
    print(
        f"slopes: local {slopes['local']:.3f} (expect ~2), "
        f"global {slopes['global']:.3f} (expect ~1), "
        f"reference {slopes['reference']:.3f} (expect ~2); rows in {path}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mxmnet",
        description="Multiplex molecular message passing: featurize, train, "
        "evaluate, verify, benchmark.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--target")
        p.add_argument("--dg", type=float, help="global cutoff, Angstrom")
        p.add_argument("--dl", type=float, help="local cutoff, Angstrom")
        p.add_argument("--layers", type=int)
        p.add_argument("--hidden", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("--out")

    p = sub.add_parser("featurize", help="write graphs and basis embeddings")
    common(p)
    p.set_defaults(fn=cmd_featurize)

    p = sub.add_parser("train", help="train on a manifest dataset")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the self-check suite")
    common(p)
    p.add_argument(
        "--fixtures",
        help="directory of <name>.extxyz / <name>.rot.extxyz pairs to check",
    )
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="message-count scaling benchmark")
    common(p)
    p.add_argument("--n", type=int, default=512, help="point count")
    p.set_defaults(fn=cmd_bench)

    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
