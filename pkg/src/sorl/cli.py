"""Command-line orchestration: one YAML config, seven subcommands, a manifest per run.

Exit codes: 0 success, 2 invalid config or arguments, 3 missing input artifact,
4 numerical or runtime failure during a run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .approx import compute_precision
from .ddpg import DdpgConfig, train_safe_policy, write_rows
from .evaluation import (VerifyGrid, market_rr_star, offline_seed_sweep, ope_rr_star,
                         sweep_summary, verify_theorems)
from .explore import SerConfig
from .loop import EVAL_SEED_BASE, SorlConfig, collection_seeds, run_sorl
from .market import ContractViolation, Market, MarketConfig, constant_policy, simulate
from .models import Actor, Critic, load_model
from .vas import build_vas_suite, iboo_report
from .vcql import VcqlConfig

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
VAS_SEED_BASE = 11_000_000


class ConfigError(Exception):
    """Invalid configuration; the message starts with the offending field path."""


class MissingArtifact(Exception):
    """A required input file (usually a checkpoint) does not exist."""


@dataclass(frozen=True)
class StudySettings:
    """Knobs of the evaluation subcommands (verify, iboo, ope, seed-sweep)."""

    verify_xis: tuple = (0.0, 0.25, 0.5, 1.0)
    verify_t1s: tuple = (0, 24, 48)
    verify_dTs: tuple = (8, 24, 48)
    verify_episodes: int = 100
    verify_M: int = 200
    vas_episodes: int = 20
    live_episodes: int = 100
    iboo_bids: tuple = (8.0, 12.0, 16.0, 20.0)
    sweep_seeds: int = 20
    sweep_dataset_episodes: int = 100
    sweep_warm_start: bool = False    # cold start: the seed then drives initialization too

    def __post_init__(self):
        for name in ("verify_episodes", "verify_M", "vas_episodes", "live_episodes",
                     "sweep_seeds", "sweep_dataset_episodes"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be >= 1")
        if not self.verify_xis or min(self.verify_xis) < 0:
            raise ContractViolation("verify_xis must be a non-empty list of values >= 0")

    def grid(self, sigma: float, lam: float) -> VerifyGrid:
        return VerifyGrid(tuple(self.verify_xis), tuple(self.verify_t1s), tuple(self.verify_dTs),
                          self.verify_episodes, self.verify_M, sigma, lam)


_SECTIONS = {"market": MarketConfig, "ddpg": DdpgConfig, "vcql": VcqlConfig, "ser": SerConfig,
             "sorl": SorlConfig, "study": StudySettings}


def _section_from_dict(name: str, cls, d):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    for key in d:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown field")
    d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**d)
    except (ContractViolation, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


@dataclass
class ExperimentConfig:
    market: MarketConfig = field(default_factory=MarketConfig.desk)
    ddpg: DdpgConfig = field(default_factory=DdpgConfig.desk)
    vcql: VcqlConfig = field(default_factory=VcqlConfig.desk)
    ser: SerConfig = field(default_factory=SerConfig)
    sorl: SorlConfig = field(default_factory=SorlConfig)
    study: StudySettings = field(default_factory=StudySettings)
    out_dir: str = "runs"
    seeds: tuple = (1,)
    precision: str = "float32"

    def to_dict(self) -> dict:
        d = {name: _plain(asdict(getattr(self, name))) for name in _SECTIONS}
        d["out_dir"] = self.out_dir
        d["seeds"] = list(self.seeds)
        d["precision"] = self.precision
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>: config must be a mapping")
        for key in d:
            if key not in _SECTIONS and key not in ("out_dir", "seeds", "precision"):
                raise ConfigError(f"{key}: unknown section")
        kw = {name: _section_from_dict(name, cls_, d.get(name)) for name, cls_ in _SECTIONS.items()}
        seeds = d.get("seeds", [1])
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) and s >= 0 for s in seeds)):
            raise ConfigError("seeds: expected a non-empty list of non-negative integers")
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds: duplicate entries")
        precision = d.get("precision", "float32")
        if precision not in ("float32", "float64"):
            raise ConfigError("precision: expected float32 or float64")
        return cls(**kw, out_dir=str(d.get("out_dir", "runs")), seeds=tuple(seeds),
                   precision=precision)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise MissingArtifact(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"<root>: not valid YAML ({exc})") from exc
        return cls.from_dict(raw)

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: Path, command: str, cfg: ExperimentConfig, extra: dict | None = None) -> Path:
    """Resolved config, seeds, package version and a SHA-256 of every file under ``run_dir``."""
    arts = {}
    for p in sorted(run_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.yaml":
            arts[str(p.relative_to(run_dir))] = sha256_file(p)
    doc = {"command": command, "version": __version__, "seeds": list(cfg.seeds),
           "config": cfg.to_dict(), "artifacts": arts, **(extra or {})}
    out = run_dir / "manifest.yaml"
    out.write_text(yaml.safe_dump(doc, sort_keys=False), encoding="utf-8")
    return out


def _safe_dir(cfg: ExperimentConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / "safe" / f"seed_{seed}"


def _load_safe(cfg: ExperimentConfig, seed: int) -> tuple[Actor, Critic]:
    d = _safe_dir(cfg, seed)
    mu_p, q_p = d / "mu_s.ckpt", d / "q_s.ckpt"
    for p in (mu_p, q_p):
        if not p.exists():
            raise MissingArtifact(f"{p} not found; run `sorl-bid train-safe` with seed {seed} first")
    return load_model(mu_p), load_model(q_p)


def _market(cfg: ExperimentConfig) -> Market:
    return Market(cfg.market, cache_size=max(256, 2 * cfg.sorl.eval_episodes + 400))


def _eval_seeds(n: int) -> list[int]:
    return list(range(EVAL_SEED_BASE, EVAL_SEED_BASE + n))


def cmd_train_safe(cfg: ExperimentConfig) -> list[Path]:
    market = _market(cfg)
    out = []
    for seed in cfg.seeds:
        d = _safe_dir(cfg, seed)
        ddpg = DdpgConfig.from_dict({**cfg.ddpg.to_dict(), "seed": seed})
        res = train_safe_policy(market, ddpg, out_dir=d)
        ev = simulate(market, res.actor, _eval_seeds(cfg.sorl.eval_episodes))
        write_manifest(d, "train-safe", cfg, {"seed": seed,
                                              "eval_value": float(ev.discounted_value.mean()),
                                              "eval_buycnt": float(ev.buycnt.mean())})
        out.append(d)
    return out


def cmd_sorl(cfg: ExperimentConfig) -> list[Path]:
    market = _market(cfg)
    out = []
    for seed in cfg.seeds:
        mu_s, q_s = _load_safe(cfg, seed)
        d = Path(cfg.out_dir) / "sorl" / f"seed_{seed}"
        state = run_sorl(market, mu_s, q_s, cfg.ser, cfg.vcql, cfg.sorl, seed, out_dir=d)
        write_manifest(d, "sorl", cfg, {"seed": seed, "iterations_run": state.tau})
        out.append(d)
    return out


def cmd_verify(cfg: ExperimentConfig) -> list[Path]:
    market = _market(cfg)
    grid = cfg.study.grid(cfg.ser.sigma, cfg.ser.lam)
    out = []
    for seed in cfg.seeds:
        mu_s, q_s = _load_safe(cfg, seed)
        rep = verify_theorems(market, mu_s, q_s, grid, _eval_seeds(grid.episodes), seed=seed)
        d = Path(cfg.out_dir) / "verify" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_rows(d / "bound_grid.csv", rep.rows)
        write_rows(d / "reward_lipschitz.csv", rep.reward_rows)
        (d / "constants.json").write_text(json.dumps(rep.constants, indent=2), encoding="utf-8")
        n_fail = sum(not r["pass"] for r in rep.rows + rep.reward_rows)
        (d / "summary.txt").write_text(
            f"constants: {rep.constants}\ngrid points: {len(rep.rows)}\n"
            f"reward states: {len(rep.reward_rows)}\nfailures: {n_fail}\n"
            f"result: {'PASS' if rep.passed else 'FAIL'}\n", encoding="utf-8")
        write_manifest(d, "verify", cfg, {"seed": seed, "passed": bool(rep.passed)})
        out.append(d)
    return out


def _scaled(policy, factor: float, cfg: MarketConfig):
    def pol(states, t):
        return np.clip(factor * policy(states, t), cfg.A_min, cfg.A_max)
    return pol


def iboo_policies(cfg: ExperimentConfig, mu_s: Actor, seed: int) -> dict:
    """mu_s, two rescaled copies, fixed bids and any SORL actors found for this seed."""
    pols = {"mu_s": mu_s, "mu_s_x0.8": _scaled(mu_s, 0.8, cfg.market),
            "mu_s_x1.25": _scaled(mu_s, 1.25, cfg.market)}
    for b in cfg.study.iboo_bids:
        pols[f"const_{b:g}"] = constant_policy(float(b))
    sorl_dir = Path(cfg.out_dir) / "sorl" / f"seed_{seed}"
    for p in sorted(sorl_dir.glob("iter_*/actor.ckpt")):
        pols[f"sorl_{p.parent.name}"] = load_model(p)
    return pols


def _vas_suite(market: Market, behavior, n: int):
    seeds = list(range(VAS_SEED_BASE, VAS_SEED_BASE + n))
    return build_vas_suite(simulate(market, behavior, seeds, record_impressions=True))


def cmd_iboo(cfg: ExperimentConfig, policies: dict | None = None) -> list[Path]:
    market = _market(cfg)
    out = []
    for seed in cfg.seeds:
        mu_s, _ = _load_safe(cfg, seed)
        pols = policies if policies is not None else iboo_policies(cfg, mu_s, seed)
        suite = _vas_suite(market, mu_s, cfg.study.vas_episodes)
        rep = iboo_report(pols, suite, market, _eval_seeds(cfg.study.live_episodes))
        d = Path(cfg.out_dir) / "iboo" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_rows(d / "iboo.csv", rep.as_rows())
        rho = "undefined" if rep.spearman is None else f"{rep.spearman:.4f}"
        (d / "summary.txt").write_text(f"policies: {len(rep.rows)}\nspearman: {rho}\n"
                                       f"inversions: {rep.inversions()}\n", encoding="utf-8")
        write_manifest(d, "iboo", cfg, {"seed": seed, "spearman": rep.spearman})
        out.append(d)
    return out


def cmd_ope(cfg: ExperimentConfig, checkpoints: list | None = None) -> list[Path]:
    market = _market(cfg)
    out = []
    for seed in cfg.seeds:
        mu_s, _ = _load_safe(cfg, seed)
        paths = [Path(p) for p in checkpoints] if checkpoints else (
            [_safe_dir(cfg, seed) / "mu_s.ckpt"]
            + sorted((Path(cfg.out_dir) / "sorl" / f"seed_{seed}").glob("iter_*/actor.ckpt")))
        suite = _vas_suite(market, mu_s, cfg.study.vas_episodes)
        live = _eval_seeds(cfg.study.live_episodes)
        rows = []
        for p in paths:
            if not p.exists():
                raise MissingArtifact(f"checkpoint not found: {p}")
            pol = load_model(p)
            if not isinstance(pol, Actor):
                raise ConfigError(f"checkpoints: {p} is not an actor checkpoint")
            rows.append({"checkpoint": str(p),
                         "vas_rr_star": float(np.mean([ope_rr_star(pol, v, cfg.market) for v in suite])),
                         "live_rr_star": market_rr_star(market, pol, live)})
        d = Path(cfg.out_dir) / "ope" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_rows(d / "ope.csv", rows)
        write_manifest(d, "ope", cfg, {"seed": seed})
        out.append(d)
    return out


def cmd_seed_sweep(cfg: ExperimentConfig) -> list[Path]:
    from .data import TaggedDataset
    market = _market(cfg)
    out = []
    for seed in cfg.seeds:
        mu_s, q_s = _load_safe(cfg, seed)
        ro = simulate(market, mu_s, collection_seeds(0, cfg.study.sweep_dataset_episodes))
        ds = TaggedDataset()
        ds.add_round("safe", ro.transitions(), mu_s)
        sweep = [seed * 1000 + i for i in range(cfg.study.sweep_seeds)]
        rows = offline_seed_sweep(market, ds, q_s, cfg.vcql, sweep, mu_s.scaling,
                                  _eval_seeds(cfg.sorl.eval_episodes),
                                  init_actor=mu_s if cfg.study.sweep_warm_start else None,
                                  init_critic=q_s if cfg.study.sweep_warm_start else None)
        d = Path(cfg.out_dir) / "seed_sweep" / f"seed_{seed}"
        d.mkdir(parents=True, exist_ok=True)
        write_rows(d / "sweep.csv", rows)
        summ = sweep_summary(rows)
        (d / "summary.json").write_text(json.dumps(summ, indent=2), encoding="utf-8")
        write_manifest(d, "seed-sweep", cfg, {"seed": seed, "summary": summ})
        out.append(d)
    return out


def cmd_gen_config(path, preset: str = "desk") -> Path:
    cfg = ExperimentConfig()
    if preset == "full":
        cfg = ExperimentConfig(market=MarketConfig.full_scale(), ddpg=DdpgConfig(),
                               vcql=VcqlConfig())
    p = Path(path)
    cfg.dump(p)
    return p


COMMANDS = {"train-safe": cmd_train_safe, "sorl": cmd_sorl, "verify": cmd_verify,
            "iboo": cmd_iboo, "ope": cmd_ope, "seed-sweep": cmd_seed_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sorl-bid", description="Safe offline/online auto-bidding experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-config", help="write a config file with every default filled in")
    g.add_argument("path")
    g.add_argument("--preset", choices=("desk", "full"), default="desk")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", required=True)
        p.add_argument("--out-dir", help="override out_dir from the config")
        p.add_argument("--seed", type=int, action="append", help="override the seed list (repeatable)")
        if name == "ope":
            p.add_argument("--checkpoint", action="append", help="actor checkpoint to score (repeatable)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "gen-config":
            print(cmd_gen_config(args.path, args.preset))
            return EXIT_OK
        cfg = ExperimentConfig.load(args.config)
        if args.out_dir or args.seed:
            d = cfg.to_dict()
            if args.out_dir:
                d["out_dir"] = args.out_dir
            if args.seed:
                d["seeds"] = args.seed
            cfg = ExperimentConfig.from_dict(d)
        fn = COMMANDS[args.command]
        with compute_precision(cfg.precision):
            dirs = fn(cfg, args.checkpoint) if args.command == "ope" else fn(cfg)
        for d in dirs:
            print(d)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ContractViolation, FloatingPointError, ValueError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
