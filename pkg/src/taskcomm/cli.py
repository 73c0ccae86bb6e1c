"""Experiment runner.

Configs are flat INI files ([section] key = value) resolved against the
defaults in SCHEMA; dB/dBm values are converted to linear units at parse
time.  Every run writes a manifest JSON (the fully resolved config, the
seed, content hashes of all produced artifacts, and wall-clock timings);
evaluate/sweep runs additionally write results.csv.  All randomness
derives from the single master seed, so identical config + seed produces
byte-identical CSV output; measured timings therefore live only in the
manifest and the reserved wall_ms CSV column is left empty.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

import argparse
import configparser
import csv
import hashlib
import os
import sys
import time

import numpy as np

from . import bca, inference, mcr2, mm, model, numerics, unfolded

PIPELINES = ("pretrain-features", "pretrain-precoder", "finetune",
             "evaluate", "sweep", "full", "selftest")
SOLVERS = ("bca", "bca-mm", "du-bca", "du-bca-mm")

CSV_COLUMNS = ["run_id", "solver", "K", "D", "N_t", "N_r", "O", "snr_db",
               "P_dbm", "L", "I", "seed", "objective_mcr2", "accuracy_mean",
               "accuracy_stderr", "wall_ms"]


class ConfigError(Exception):
    """Invalid or inconsistent configuration."""


def _parse_bool(s):
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_list(s):
    return [int(x) for x in str(s).split(",") if x.strip() != ""]


def _parse_float_list(s):
    return [float(x) for x in str(s).split(",") if x.strip() != ""]


def _parse_str_list(s):
    return [x.strip() for x in str(s).split(",") if x.strip() != ""]


def _parse_opt_float(s):
    return None if str(s).strip() == "" else float(s)


# section -> key -> (default, parser); this table is the config schema and
# the resolved manifest mirrors it key for key.
SCHEMA = {
    "run": {
        "pipeline": ("evaluate", str),
        "seed": (0, int),
    },
    "system": {
        "K": (1, int),
        "J": (2, int),
        "D_k": ([4], _parse_int_list),
        "N_t_k": ([4], _parse_int_list),
        "N_r": (4, int),
        "O": (1, int),
        "P_dbm": ([15.0], _parse_float_list),
        "eps2_feature": (0.5, float),
        "eps2_precoding": (1e-6, float),
    },
    "features": {
        "subspace_rank": (1, int),
        "M": (512, int),
        "normalize": (True, _parse_bool),
        "steps": (200, int),
        "lr": (0.1, float),
    },
    "channel": {
        "kappa": (1.0, float),
        "distance_m": (80.0, float),
        "pathloss_db": (None, _parse_opt_float),
        "hold_channel": (True, _parse_bool),
        "noise_dbm": (model.DEFAULT_NOISE_DBM, float),
        "snr_db": (None, _parse_opt_float),
    },
    "precoder": {
        "solver": ("bca-mm", str),
        "layers": (3, int),
        "mm_sublayers": (2, int),
        "max_iters": (50, int),
        "inner_iters": (20, int),
        "tol": (1e-8, float),
    },
    "train": {
        "channels": (50, int),
        "steps": (2000, int),
        "step_scale": (0.5, float),
        "perturb_scale": (0.1, float),
        "batch_channels": (8, int),
        "eval_every": (100, int),
        "noise_dbm": ([model.DEFAULT_NOISE_DBM], _parse_float_list),
    },
    "finetune": {
        "steps": (300, int),
        "features": (128, int),
        "step_scale": (0.2, float),
        "perturb_scale": (0.1, float),
        "batch_channels": (8, int),
        "eval_every": (50, int),
        "eval_pairs": (64, int),
        "select_margin": (0.0, float),
    },
    "evaluate": {
        "channels": (50, int),
        "samples": (100, int),
        "objective_channels": (16, int),
        "threads": (1, int),
    },
    "sweep": {
        "parameter": ("snr_db", str),
        "values": (["-6", "0", "6", "12", "18"], _parse_str_list),
    },
}


def resolve_config(path=None, overrides=None):
    """Merge an optional INI file and overrides over the schema defaults.

    Returns a nested dict with every schema key present, which is exactly
    what the manifest records.  Unknown sections or keys are errors.
    """
    resolved = {sec: {k: v[0] for k, v in keys.items()} for sec, keys in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            read = parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not read:
            raise ConfigError(f"config file not found: {path}")
        canonical = {sec: {k.lower(): k for k in keys}
                     for sec, keys in SCHEMA.items()}
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key.lower() not in canonical[sec]:
                    raise ConfigError(f"unknown key {key!r} in section [{sec}]")
                name = canonical[sec][key.lower()]
                _, parse = SCHEMA[sec][name]
                try:
                    resolved[sec][name] = raw.strip() if parse is str else parse(raw)
                except (ValueError, ConfigError) as exc:
                    raise ConfigError(f"bad value for [{sec}] {key}: {raw!r}") from exc
    for (sec, key), value in (overrides or {}).items():
        resolved[sec][key] = value
    _validate(resolved)
    return resolved


def _validate(cfg):
    if cfg["run"]["pipeline"] not in PIPELINES:
        raise ConfigError(f"unknown pipeline {cfg['run']['pipeline']!r}")
    if cfg["precoder"]["solver"] not in SOLVERS:
        raise ConfigError(f"unknown solver {cfg['precoder']['solver']!r}; "
                          f"choose from {', '.join(SOLVERS)}")
    sysc = cfg["system"]
    K = sysc["K"]
    for key in ("D_k", "N_t_k", "P_dbm"):
        vals = sysc[key]
        if len(vals) == 1 and K > 1:
            sysc[key] = vals * K
        elif len(vals) != K:
            raise ConfigError(f"[system] {key} needs 1 or K={K} entries, got {len(vals)}")
    if cfg["sweep"]["parameter"] not in ("snr_db", "O", "solver", "P_dbm"):
        raise ConfigError(f"unsupported sweep parameter {cfg['sweep']['parameter']!r}")


def system_config(cfg):
    sysc = cfg["system"]
    return model.SystemConfig(
        K=sysc["K"], J=sysc["J"], D_k=tuple(sysc["D_k"]),
        N_t_k=tuple(sysc["N_t_k"]), N_r=sysc["N_r"],
        P_k=tuple(model.dbm_to_watt(p) for p in sysc["P_dbm"]),
        O=sysc["O"], eps2_feature=sysc["eps2_feature"],
        eps2_precoding=sysc["eps2_precoding"])


def rician_params(cfg):
    ch = cfg["channel"]
    return model.RicianParams(kappa=ch["kappa"], distance_m=ch["distance_m"],
                              pathloss_db=ch["pathloss_db"],
                              hold_channel=ch["hold_channel"])


def received_power(config, rician):
    """Sum over devices of budget times path gain: the signal side of the
    SNR convention used for snr_db reporting and conversion."""
    return sum(config.P_k) * rician.pathloss_amplitude ** 2


def noise_sigma(cfg, config, rician):
    """Linear noise std from snr_db when set, else from noise_dbm."""
    if cfg["channel"]["snr_db"] is not None:
        snr = model.db_to_linear(cfg["channel"]["snr_db"])
        return float(np.sqrt(received_power(config, rician) / snr))
    return float(np.sqrt(model.dbm_to_watt(cfg["channel"]["noise_dbm"])))


def snr_db_of(sigma, config, rician):
    return float(10.0 * np.log10(received_power(config, rician) / sigma ** 2))


def derive_seed(seed, tag):
    """Independent 62-bit sub-seed for a named stage."""
    return int(model.child_rng(seed, tag).integers(0, 2 ** 62))


SEED_FEATURES, SEED_TRAIN, SEED_FINETUNE, SEED_EVAL, SEED_GM = 1, 2, 3, 4, 5


def _artifact(out_dir, name):
    return os.path.join(out_dir, name)


def load_or_make_gm(cfg, config, out_dir, seed):
    """Use the pretrained feature statistics when present, otherwise a
    seed-synthesized mixture (so evaluate works standalone)."""
    path = _artifact(out_dir, "gm_model.json")
    if os.path.exists(path):
        return model.gm_model_from_dict(model.load_json(path))
    return model.make_gm_model(config, cfg["features"]["subspace_rank"],
                               derive_seed(seed, SEED_GM))


def _training_channels(cfg, config, rician, sigma, seed):
    train_seed = derive_seed(seed, SEED_TRAIN)
    return [model.sample_channel(rician, config, model.child_rng(train_seed, i),
                                 sigma=sigma)
            for i in range(cfg["train"]["channels"])]


def build_precoder_fn(cfg, gm, out_dir, seed, config, rician, sigma, solver=None):
    """Closure mapping a channel state to a precoder for the chosen solver.

    Unfolded solvers load the trained network artifact when present and
    otherwise fall back to an anchor-initialized (untrained) network built
    on a seeded reference channel.
    """
    prec = cfg["precoder"]
    solver = solver or prec["solver"]
    if solver == "bca":
        return solver, lambda ch: bca.bca_solve(
            None, ch, gm, max_iters=prec["max_iters"], tol=prec["tol"]).V
    if solver == "bca-mm":
        return solver, lambda ch: mm.bca_mm_solve(
            None, ch, gm, max_iters=prec["max_iters"],
            inner_iters=prec["inner_iters"], tol=prec["tol"]).V
    path = _artifact(out_dir, "net.json")
    if os.path.exists(path):
        net = unfolded.net_from_dict(model.load_json(path))
        if net.variant != solver:
            raise ConfigError(f"stored network is {net.variant!r}, requested {solver!r}")
        if net.config != config:
            raise ConfigError("stored network was built for a different system config")
    else:
        ref = model.sample_channel(rician, config,
                                   model.child_rng(derive_seed(seed, SEED_TRAIN), 0),
                                   sigma=sigma)
        net = unfolded.init_anchored(solver, prec["layers"], prec["mm_sublayers"],
                                     ref, gm)
    return solver, lambda ch: unfolded.du_forward(net, ch, gm)


def run_pretrain_features(cfg, out_dir, seed, timings):
    config = system_config(cfg)
    feat = cfg["features"]
    t0 = time.perf_counter()
    source = model.make_gm_model(config, feat["subspace_rank"],
                                 derive_seed(seed, SEED_GM))
    batch = model.sample_features(source, feat["M"], feat["normalize"],
                                  model.child_rng(derive_seed(seed, SEED_FEATURES), 0))
    result = mcr2.optimize_features(batch, config.eps2_feature,
                                    feat["steps"], feat["lr"])
    model.save_json(_artifact(out_dir, "gm_model.json"),
                    model.gm_model_to_dict(result.gm))
    timings["pretrain_features"] = 1000.0 * (time.perf_counter() - t0)
    print(f"pretrain-features: objective {result.objective_trace[0]:.6f} -> "
          f"{result.objective_trace.max():.6f} over {feat['steps']} steps")
    return ["gm_model.json"]


def run_pretrain_precoder(cfg, out_dir, seed, timings):
    config = system_config(cfg)
    rician = rician_params(cfg)
    prec = cfg["precoder"]
    if prec["solver"] not in ("du-bca", "du-bca-mm"):
        raise ConfigError("pretrain-precoder requires an unfolded solver "
                          "(du-bca or du-bca-mm)")
    gm = load_or_make_gm(cfg, config, out_dir, seed)
    sigmas = [float(np.sqrt(model.dbm_to_watt(d))) for d in cfg["train"]["noise_dbm"]]
    t0 = time.perf_counter()
    channels = _training_channels(cfg, config, rician, sigmas[0], seed)
    net = unfolded.init_anchored(prec["solver"], prec["layers"],
                                 prec["mm_sublayers"], channels[0], gm)
    tc = unfolded.TrainerConfig(
        steps=cfg["train"]["steps"], step_scale=cfg["train"]["step_scale"],
        perturb_scale=cfg["train"]["perturb_scale"],
        batch_channels=cfg["train"]["batch_channels"],
        eval_every=cfg["train"]["eval_every"])
    net = unfolded.train_unfolded(net, channels, sigmas, gm, trainer_cfg=tc,
                                  rng_seed=derive_seed(seed, SEED_TRAIN))
    model.save_json(_artifact(out_dir, "net.json"), unfolded.net_to_dict(net))
    timings["pretrain_precoder"] = 1000.0 * (time.perf_counter() - t0)
    print(f"pretrain-precoder: trained {prec['solver']} "
          f"({prec['layers']} layers) on {len(channels)} channels")
    return ["net.json"]


def run_finetune(cfg, out_dir, seed, timings):
    config = system_config(cfg)
    rician = rician_params(cfg)
    path = _artifact(out_dir, "net.json")
    if not os.path.exists(path):
        raise ConfigError("finetune needs a pretrained network artifact; run "
                          f"the pretrain-precoder pipeline first (missing {path})")
    net = unfolded.net_from_dict(model.load_json(path))
    gm = load_or_make_gm(cfg, config, out_dir, seed)
    sigma = noise_sigma(cfg, config, rician)
    ft = cfg["finetune"]
    t0 = time.perf_counter()
    channels = _training_channels(cfg, config, rician, sigma, seed)
    tc = unfolded.TrainerConfig(
        steps=ft["steps"], step_scale=ft["step_scale"],
        perturb_scale=ft["perturb_scale"], batch_channels=ft["batch_channels"],
        eval_every=ft["eval_every"], eval_pairs=ft["eval_pairs"],
        select_margin=ft["select_margin"])
    net = unfolded.e2e_finetune(net, gm, channels, [sigma], trainer_cfg=tc,
                                rng_seed=derive_seed(seed, SEED_FINETUNE))
    model.save_json(path, unfolded.net_to_dict(net))
    timings["finetune"] = 1000.0 * (time.perf_counter() - t0)
    print(f"finetune: {ft['steps']} steps on {len(channels)} channels")
    return ["net.json"]


def _evaluate_row(cfg, out_dir, seed, run_id, timings, solver=None, threads=None):
    config = system_config(cfg)
    rician = rician_params(cfg)
    sigma = noise_sigma(cfg, config, rician)
    gm = load_or_make_gm(cfg, config, out_dir, seed)
    solver, precoder_fn = build_precoder_fn(cfg, gm, out_dir, seed, config,
                                            rician, sigma, solver=solver)
    ev = cfg["evaluate"]
    t0 = time.perf_counter()
    eval_seed = derive_seed(seed, SEED_EVAL)
    acc = inference.evaluate_accuracy(
        precoder_fn, gm, rician, config, ev["channels"], ev["samples"],
        eval_seed, sigma=sigma, threads=threads or ev["threads"])
    objs = []
    for i in range(min(ev["objective_channels"], ev["channels"])):
        ch = model.sample_channel(rician, config, model.child_rng(eval_seed, i, 0),
                                  sigma=sigma)
        objs.append(mcr2.channel_mcr2(precoder_fn(ch), ch, gm))
    timings[f"evaluate_{run_id}"] = 1000.0 * (time.perf_counter() - t0)
    if solver == "du-bca-mm":
        inner = cfg["precoder"]["mm_sublayers"]
    elif solver == "bca-mm":
        inner = cfg["precoder"]["inner_iters"]
    else:
        inner = 0
    return {
        "run_id": run_id, "solver": solver, "K": config.K, "D": config.D,
        "N_t": sum(config.N_t_k), "N_r": config.N_r, "O": config.O,
        "snr_db": snr_db_of(sigma, config, rician),
        "P_dbm": cfg["system"]["P_dbm"][0],
        "L": (cfg["precoder"]["layers"] if solver.startswith("du-")
              else cfg["precoder"]["max_iters"]),
        "I": inner, "seed": seed, "objective_mcr2": float(np.mean(objs)),
        "accuracy_mean": acc.mean, "accuracy_stderr": acc.stderr,
        "wall_ms": None,
    }


def _sweep_configs(cfg):
    param = cfg["sweep"]["parameter"]
    for value in cfg["sweep"]["values"]:
        derived = {sec: dict(keys) for sec, keys in cfg.items()}
        if param == "snr_db":
            derived["channel"]["snr_db"] = float(value)
        elif param == "O":
            derived["system"]["O"] = int(value)
        elif param == "P_dbm":
            derived["system"]["P_dbm"] = [float(value)] * cfg["system"]["K"]
        elif param == "solver":
            if value not in SOLVERS:
                raise ConfigError(f"unknown solver {value!r} in sweep values")
            derived["precoder"]["solver"] = value
        yield value, derived


def _fmt_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_results_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow([_fmt_cell(row[c]) for c in CSV_COLUMNS])


def write_manifest(out_dir, cfg, seed, artifacts, timings):
    digest = {}
    for name in sorted(set(artifacts)):
        with open(_artifact(out_dir, name), "rb") as fh:
            digest[name] = "sha256:" + hashlib.sha256(fh.read()).hexdigest()
    payload = {
        "schema": "taskcomm.manifest/1",
        "package_version": "0.1.0",
        "resolved_config": cfg,
        "seed": seed,
        "artifacts": digest,
        "timings_ms": {k: round(v, 3) for k, v in timings.items()},
    }
    model.save_json(_artifact(out_dir, "manifest.json"), payload)


def run_selftest():
    """Quick numeric property checks; returns the number of failures."""
    failures = 0

    def check(name, ok):
        nonlocal failures
        print(f"{'ok' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1

    rng = np.random.default_rng(1234)
    for _ in range(5):
        n = int(rng.integers(2, 10))
        G = model.complex_gaussian(rng, (n, n))
        A = numerics.hermitian_part(G @ G.conj().T + np.eye(n))
        w = np.linalg.eigvalsh(A)
        check(f"logdet matches eigenvalue oracle ({n}x{n})",
              abs(numerics.logdet_hpd(A) - float(np.sum(np.log(w)))) < 1e-9)
        B = model.complex_gaussian(rng, (n, 3))
        X = numerics.hermitian_solve(A, B)
        check(f"hermitian solve residual ({n}x{n})",
              np.linalg.norm(A @ X - B) / np.linalg.norm(B) < 1e-10)
        check(f"row-sum bound dominates spectrum ({n}x{n})",
              numerics.max_abs_row_sum(A) >= w.max() - 1e-12)
        M_ = model.complex_gaussian(rng, (n, n + 1))
        check("devec inverts vec",
              np.array_equal(numerics.devec(numerics.vec(M_), n, n + 1), M_))

    config = model.SystemConfig.homogeneous(K=2, J=2, D_per_device=2,
                                            N_t_per_device=2, N_r=4,
                                            P_per_device=1.0, eps2_precoding=1.0)
    gm = model.make_gm_model(config, 2, 7)
    rician = model.RicianParams(kappa=1.0, pathloss_db=0.0)
    for i in range(3):
        ch = model.sample_channel(rician, config, 100 + i, sigma=0.5)
        state = bca.bca_solve(None, ch, gm, max_iters=15)
        diffs = np.diff(state.objective_trace)
        tolv = 1e-9 * np.maximum(1.0, np.abs(state.objective_trace[:-1]))
        check(f"bca objective trace is non-decreasing (instance {i})",
              bool(np.all(diffs >= -tolv)))
        zero = bca.PrecoderSet(
            vs=tuple(np.zeros((config.tx_dim(k), config.D_k[k]), dtype=complex)
                     for k in range(config.K)), config=config)
        check(f"zero precoder gives zero objective (instance {i})",
              mcr2.channel_mcr2(zero, ch, gm) == 0.0)
        b, N = bca.assemble_qcqp(state, ch, gm, 0)
        v, lam = bca.v_step_bisection(b, N, config.P_k[0])
        slack = abs(float(np.vdot(v, v).real) - config.P_k[0])
        check(f"device update satisfies complementary slackness (instance {i})",
              lam == 0.0 or slack <= 1e-8 * config.P_k[0])
        v_mm = mm.mm_v_step(b, N, config.P_k[0], np.zeros_like(v), 4000)
        check(f"majorize-minimize matches exact device update (instance {i})",
              np.linalg.norm(v_mm - v) <= 1e-6 * max(1.0, np.linalg.norm(v)))
    batch = model.sample_features(gm, 24, True, 3)
    g = mcr2.feature_mcr2_grad(batch, 0.5)
    h = 1e-5
    Zp = batch.samples.copy()
    Zp[1, 2] += h
    Zm = batch.samples.copy()
    Zm[1, 2] -= h
    fd = (mcr2.feature_mcr2(model.FeatureBatch(Zp, batch.labels, batch.n_classes), 0.5)
          - mcr2.feature_mcr2(model.FeatureBatch(Zm, batch.labels, batch.n_classes), 0.5)) / (2 * h)
    check("feature gradient matches finite differences",
          abs(fd - 2.0 * g[1, 2].real) < 1e-6 * max(1.0, abs(fd)))
    print(f"selftest: {failures} failure(s)")
    return failures


def _dispatch(cfg, out_dir, threads):
    """Run the configured pipeline; returns 0 on success."""
    pipeline = cfg["run"]["pipeline"]
    if pipeline == "selftest":
        return 1 if run_selftest() else 0
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg["run"]["seed"]
    timings = {}
    artifacts = []
    if pipeline in ("pretrain-features", "full"):
        artifacts += run_pretrain_features(cfg, out_dir, seed, timings)
    if pipeline == "pretrain-precoder" or (
            pipeline == "full" and cfg["precoder"]["solver"].startswith("du-")):
        artifacts += run_pretrain_precoder(cfg, out_dir, seed, timings)
        if pipeline == "full" and cfg["finetune"]["steps"] > 0:
            artifacts += run_finetune(cfg, out_dir, seed, timings)
    if pipeline == "finetune":
        artifacts += run_finetune(cfg, out_dir, seed, timings)
    if pipeline in ("evaluate", "full"):
        row = _evaluate_row(cfg, out_dir, seed, "evaluate-0", timings,
                            threads=threads)
        write_results_csv(_artifact(out_dir, "results.csv"), [row])
        artifacts.append("results.csv")
        print(f"evaluate: solver={row['solver']} accuracy={row['accuracy_mean']:.4f}"
              f" +/- {row['accuracy_stderr']:.4f}")
    if pipeline == "sweep":
        rows = []
        for i, (value, derived) in enumerate(_sweep_configs(cfg)):
            row = _evaluate_row(derived, out_dir, seed, f"sweep-{i}", timings,
                                threads=threads)
            rows.append(row)
            print(f"sweep {cfg['sweep']['parameter']}={value}: "
                  f"accuracy={row['accuracy_mean']:.4f}")
        write_results_csv(_artifact(out_dir, "results.csv"), rows)
        artifacts.append("results.csv")
    write_manifest(out_dir, cfg, seed, artifacts, timings)
    return 0


NUMERIC_ERRORS = (numerics.NotPositiveDefinite, numerics.DimensionMismatch,
                  bca.SingularFeatureBlock, bca.BisectionFailed,
                  unfolded.ZeroDiagonal, mcr2.EmptyClass,
                  np.linalg.LinAlgError)


def run_experiment(config_path, seed=None, out=None, threads=None,
                   solver=None, pipeline=None):
    """Resolve the config, run its pipeline, and return a process exit code
    (0 success, 2 config error, 3 numeric failure)."""
    try:
        overrides = {}
        if pipeline is not None:
            overrides[("run", "pipeline")] = pipeline
        if solver is not None:
            overrides[("precoder", "solver")] = solver
        if seed is not None:
            overrides[("run", "seed")] = int(seed)
        cfg = resolve_config(config_path, overrides)
        return _dispatch(cfg, out or ".", threads)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def _env_threads():
    try:
        return int(os.environ.get("TASKCOMM_THREADS", "0")) or None
    except ValueError:
        return None


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="taskcomm",
        description="Task-oriented MIMO precoding experiments: feature "
                    "statistics pretraining, precoder optimization/training, "
                    "end-to-end fine-tuning, and Monte-Carlo evaluation.")
    parser.add_argument("command", choices=("run",) + PIPELINES,
                        help="pipeline to execute ('run' uses the pipeline "
                             "named in the config file)")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed (overrides the config)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=_env_threads(),
                        help="worker threads for Monte-Carlo evaluation "
                             "(default: TASKCOMM_THREADS or 1)")
    parser.add_argument("--solver", choices=SOLVERS, default=None,
                        help="override the configured precoding solver")
    args = parser.parse_args(argv)
    pipeline = None if args.command == "run" else args.command
    return run_experiment(args.config, seed=args.seed, out=args.out,
                          threads=args.threads, solver=args.solver,
                          pipeline=pipeline)


if __name__ == "__main__":
    sys.exit(main())
