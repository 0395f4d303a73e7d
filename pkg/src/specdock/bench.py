"""Desk-scale reconstruction of the identification experiment.

A hub of synthetic task families is built from seeded teacher networks; toy
learnware models are fine-tuned per family, developer specs are generated
from their training splits, user specs from a disjoint user split, and the
dock identifies top-1 by cosine. The identified model's held-out accuracy is
compared against Random (expected accuracy of uniform selection), Best-single
(the candidate with the best mean accuracy across all user tasks) and Oracle
(the per-task best candidate), all over the identical candidate set.
"""

import csv
import io
import json
import tempfile
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .anchor import (
    AnchorConfig,
    AnchorModel,
    EncodedDataset,
    LabeledExample,
    LoraAdapter,
    init_anchor,
    tokenize,
)
from .errors import InvalidConfigError
from .identify import identify
from .registry import Registry
from .specgen import GroundTruth, PRESETS, preset, spec_from_adapter, train_adapter

# Token ids are drawn from 1..SAMPLE_ALPHABET (bytes 0..31): single-byte
# UTF-8, so rendered text re-tokenizes to exactly the drawn ids, and dense
# per-example histograms keep the teacher functions learnable from a few
# hundred samples.
SAMPLE_ALPHABET = 32
SPLIT_TRAIN, SPLIT_USER, SPLIT_TEST = 1, 2, 3
_NS_FAMILY, _NS_MODEL, _NS_DEV_SPEC, _NS_USER_SPEC = 0, 1, 2, 3

MODEL_PRESET = "toy-sft"


def _derive(*parts: int) -> int:
    """Stable 64-bit stream split from integer coordinates."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class TaskFamily:
    """A synthetic task: label anything the seeded teacher network says."""

    family_seed: int
    teacher: AnchorModel = field(repr=False)
    input_len: int = 32


def make_family(
    dock_config: AnchorConfig, family_seed: int, input_len: int = 32
) -> TaskFamily:
    """Teacher shares (d, vocab, max_len, C) with the dock anchor but draws
    its own base weights from family_seed."""
    if not 1 <= input_len <= dock_config.max_len:
        raise InvalidConfigError(
            f"input_len {input_len} outside [1, {dock_config.max_len}]"
        )
    teacher = init_anchor(replace(dock_config, base_seed=family_seed))
    return TaskFamily(family_seed=family_seed, teacher=teacher, input_len=input_len)


@dataclass(frozen=True)
class BenchConfig:
    n_families: int = 8
    models_per_family: int = 2
    train_n: int = 512
    user_n: int = 256
    test_n: int = 512
    spec_preset: str = "toy"
    model_train_steps: int = 600
    trial_seed: int = 0
    n_trials: int = 20

    def validate(self) -> None:
        for name in (
            "n_families",
            "models_per_family",
            "train_n",
            "user_n",
            "test_n",
            "model_train_steps",
            "n_trials",
        ):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be at least 1")
        if self.spec_preset not in PRESETS:
            raise InvalidConfigError(f"unknown spec preset {self.spec_preset!r}")

    def to_dict(self) -> dict:
        return {
            "n_families": self.n_families,
            "models_per_family": self.models_per_family,
            "train_n": self.train_n,
            "user_n": self.user_n,
            "test_n": self.test_n,
            "spec_preset": self.spec_preset,
            "model_train_steps": self.model_train_steps,
            "trial_seed": self.trial_seed,
            "n_trials": self.n_trials,
        }


def _teacher_labels(family: TaskFamily, texts: list[str]) -> np.ndarray:
    seqs = [tokenize(t, family.teacher.config.max_len) for t in texts]
    return np.argmax(EncodedDataset(family.teacher, seqs).logits(None), axis=1)


def sample_dataset(
    family: TaskFamily, n: int, split_seed: int
) -> list[LabeledExample]:
    """Draw n teacher-labeled examples, rejection-sampled so that no class
    count exceeds twice any other. After 10*n draws the balance constraint is
    dropped (with a warning) and remaining slots fill unconditionally.
    """
    if n < 1:
        raise InvalidConfigError("dataset size must be at least 1")
    cfg = family.teacher.config
    rng = np.random.default_rng([family.family_seed, split_seed])
    hi = min(cfg.vocab_size - 1, SAMPLE_ALPHABET)
    counts = np.zeros(cfg.num_classes, dtype=np.int64)
    out: list[LabeledExample] = []
    draws, gave_up = 0, False
    while len(out) < n:
        ids = rng.integers(1, hi + 1, size=(64, family.input_len))
        texts = [bytes((row - 1).astype(np.uint8)).decode("utf-8") for row in ids]
        labels = _teacher_labels(family, texts)
        for text, label in zip(texts, labels):
            if len(out) >= n:
                break
            draws += 1
            if gave_up or counts[label] + 1 <= 2 * max(1, int(counts.min())):
                counts[label] += 1
                out.append(LabeledExample(text, int(label)))
            if not gave_up and draws >= 10 * n:
                gave_up = True
                warnings.warn(
                    f"class balance unreachable for family seed "
                    f"{family.family_seed} after {draws} draws; accepting the rest",
                    stacklevel=2,
                )
    return out


def train_learnware_model(
    anchor: AnchorModel,
    family: TaskFamily,
    model_seed: int,
    steps: int = 600,
    train_n: int = 512,
    dataset: list[LabeledExample] | None = None,
) -> LoraAdapter:
    """Fine-tune a toy 'submitted model': an adapter fitted to the family's
    train split. The dock never sees it; only the bench evaluator does."""
    if dataset is None:
        dataset = sample_dataset(family, train_n, SPLIT_TRAIN)
    cfg = preset(MODEL_PRESET, steps=steps, shuffle_seed=model_seed)
    adapter, _ = train_adapter(anchor, dataset, GroundTruth(), cfg)
    return adapter


@dataclass
class TaskRow:
    trial: int
    family: int
    random: float
    learnware: float
    best_single: float
    oracle: float
    identified_family: int

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "family": self.family,
            "random": self.random,
            "learnware": self.learnware,
            "best_single": self.best_single,
            "oracle": self.oracle,
            "identified_family": self.identified_family,
        }


CONTENDERS = ("random", "learnware", "best_single", "oracle")


@dataclass
class BenchReport:
    config: BenchConfig
    rows: list[TaskRow]
    family_match_matrix: list[list[int]]
    averages: dict
    average_ranks: dict
    learnware_wins: dict
    identification_rate: float
    balance_giveups: int = 0

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "rows": [r.to_dict() for r in self.rows],
            "family_match_matrix": self.family_match_matrix,
            "averages": self.averages,
            "average_ranks": self.average_ranks,
            "learnware_wins": self.learnware_wins,
            "identification_rate": self.identification_rate,
            "balance_giveups": self.balance_giveups,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def matrix_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        k = len(self.family_match_matrix)
        writer.writerow(["user_family"] + [f"identified_{j}" for j in range(k)])
        for i, row in enumerate(self.family_match_matrix):
            writer.writerow([i] + list(row))
        return buf.getvalue()

    def render_table(self) -> str:
        lines = []
        header = f"{'task':>12} {'Random':>8} {'Learnware':>10} {'Best-single':>12} {'Oracle':>8}"
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.rows:
            lines.append(
                f"  t{r.trial:02d}/fam{r.family:02d} {r.random:8.3f} "
                f"{r.learnware:10.3f} {r.best_single:12.3f} {r.oracle:8.3f}"
            )
        lines.append("-" * len(header))
        avg = self.averages
        lines.append(
            f"{'average':>12} {avg['random']:8.3f} {avg['learnware']:10.3f} "
            f"{avg['best_single']:12.3f} {avg['oracle']:8.3f}"
        )
        rank = self.average_ranks
        lines.append(
            f"{'avg rank':>12} {rank['random']:8.2f} {rank['learnware']:10.2f} "
            f"{rank['best_single']:12.2f} {rank['oracle']:8.2f}"
        )
        for name, tally in self.learnware_wins.items():
            lines.append(
                f"learnware vs {name}: {tally['win']}/{tally['tie']}/{tally['loss']} (w/t/l)"
            )
        lines.append(f"family self-identification rate: {self.identification_rate:.3f}")
        if self.balance_giveups:
            lines.append(
                f"datasets that gave up class balancing: {self.balance_giveups}"
            )
        lines.append("family match matrix (rows: user family, cols: identified):")
        for i, row in enumerate(self.family_match_matrix):
            lines.append(f"  fam{i:02d} " + " ".join(f"{c:3d}" for c in row))
        return "\n".join(lines) + "\n"


def _accuracy(enc: EncodedDataset, labels: np.ndarray, adapter: LoraAdapter) -> float:
    return float(np.mean(np.argmax(enc.logits(adapter), axis=1) == labels))


def _run_trial(cfg: BenchConfig, anchor_config: AnchorConfig, trial: int) -> dict:
    anchor = init_anchor(anchor_config)
    K, M = cfg.n_families, cfg.models_per_family
    families, trains, users, tests = [], [], [], []
    balance_giveups = 0
    with warnings.catch_warnings(record=True) as recorded:
        warnings.simplefilter("always")
        for i in range(K):
            fam = make_family(
                anchor_config, _derive(cfg.trial_seed, trial, _NS_FAMILY, i)
            )
            families.append(fam)
            trains.append(sample_dataset(fam, cfg.train_n, SPLIT_TRAIN))
            users.append(sample_dataset(fam, cfg.user_n, SPLIT_USER))
            tests.append(sample_dataset(fam, cfg.test_n, SPLIT_TEST))
        balance_giveups = len(recorded)

    spec_cfg = lambda seed: preset(cfg.spec_preset, shuffle_seed=seed)
    adapters: list[LoraAdapter] = []
    fam_of: list[int] = []
    with tempfile.TemporaryDirectory(prefix="bench-registry-") as tmp:
        reg = Registry.open(tmp, anchor_config)
        id_to_candidate: dict[int, int] = {}
        for i in range(K):
            for m in range(M):
                adapter = train_learnware_model(
                    anchor,
                    families[i],
                    model_seed=_derive(cfg.trial_seed, trial, _NS_MODEL, i, m),
                    steps=cfg.model_train_steps,
                    dataset=trains[i],
                )
                dev_adapter, _ = train_adapter(
                    anchor,
                    trains[i],
                    GroundTruth(),
                    spec_cfg(_derive(cfg.trial_seed, trial, _NS_DEV_SPEC, i, m)),
                )
                spec = spec_from_adapter(dev_adapter, mode="developer", created_unix_ms=0)
                lw_id = reg.submit(
                    f"bench://trial{trial}/family{i}/model{m}",
                    spec,
                    {"family": str(i), "model": str(m)},
                )
                id_to_candidate[lw_id] = len(adapters)
                adapters.append(adapter)
                fam_of.append(i)

        encs = []
        for j in range(K):
            seqs = [tokenize(e.text, anchor_config.max_len) for e in tests[j]]
            encs.append(
                (EncodedDataset(anchor, seqs), np.array([e.label for e in tests[j]]))
            )
        acc = np.array(
            [[_accuracy(enc, labels, ad) for (enc, labels) in encs] for ad in adapters]
        )

        best_single_idx = int(np.argmax(acc.mean(axis=1)))
        rows = []
        for i in range(K):
            user_adapter, _ = train_adapter(
                anchor,
                users[i],
                GroundTruth(),
                spec_cfg(_derive(cfg.trial_seed, trial, _NS_USER_SPEC, i)),
            )
            user_spec = spec_from_adapter(user_adapter, created_unix_ms=0)
            top = identify(reg, user_spec, k=1)[0]
            cand = id_to_candidate[top.learnware_id]
            rows.append(
                TaskRow(
                    trial=trial,
                    family=i,
                    random=float(acc[:, i].mean()),
                    learnware=float(acc[cand, i]),
                    best_single=float(acc[best_single_idx, i]),
                    oracle=float(acc[:, i].max()),
                    identified_family=fam_of[cand],
                )
            )
    return {"rows": rows, "balance_giveups": balance_giveups}


def run_bench(
    cfg: BenchConfig,
    anchor_config: AnchorConfig | None = None,
    n_jobs: int = 1,
) -> BenchReport:
    """Run the full experiment. Trials are independent; their RNG streams
    derive from (trial_seed, trial index), so any n_jobs produces the
    identical report."""
    cfg.validate()
    if anchor_config is None:
        anchor_config = AnchorConfig()
    anchor_config.validate()

    if n_jobs > 1 and cfg.n_trials > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, cfg.n_trials)) as pool:
            trial_results = list(
                pool.map(
                    _run_trial,
                    [cfg] * cfg.n_trials,
                    [anchor_config] * cfg.n_trials,
                    range(cfg.n_trials),
                )
            )
    else:
        trial_results = [
            _run_trial(cfg, anchor_config, t) for t in range(cfg.n_trials)
        ]

    rows = [row for res in trial_results for row in res["rows"]]
    K = cfg.n_families
    matrix = [[0] * K for _ in range(K)]
    for r in rows:
        matrix[r.family][r.identified_family] += 1

    table = np.array([[getattr(r, c) for c in CONTENDERS] for r in rows])
    averages = {c: float(table[:, k].mean()) for k, c in enumerate(CONTENDERS)}

    # competition ranks per row, ties share the mean rank
    ranks = np.zeros_like(table)
    for rix in range(table.shape[0]):
        vals = table[rix]
        for k, v in enumerate(vals):
            higher = np.sum(vals > v)
            equal = np.sum(vals == v)
            ranks[rix, k] = higher + (equal + 1) / 2.0
    average_ranks = {c: float(ranks[:, k].mean()) for k, c in enumerate(CONTENDERS)}

    wins = {}
    lw = table[:, CONTENDERS.index("learnware")]
    for k, c in enumerate(CONTENDERS):
        if c == "learnware":
            continue
        other = table[:, k]
        wins[c] = {
            "win": int(np.sum(lw > other)),
            "tie": int(np.sum(lw == other)),
            "loss": int(np.sum(lw < other)),
        }

    ident = float(np.mean([r.identified_family == r.family for r in rows]))
    return BenchReport(
        config=cfg,
        rows=rows,
        family_match_matrix=matrix,
        averages=averages,
        average_ranks=average_ranks,
        learnware_wins=wins,
        identification_rate=ident,
        balance_giveups=sum(res["balance_giveups"] for res in trial_results),
    )
