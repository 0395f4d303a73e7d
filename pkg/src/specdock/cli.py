"""Command-line surface for local workflows.

    specdock anchor init --seed 42 --dim 64 --rank 16 --out anchor.json
    specdock gen-spec --anchor anchor.json --data task.jsonl --out task.lws
    specdock submit --registry ./dock --spec task.lws --model-uri s3://...
    specdock identify --registry ./dock --spec user.lws -k 3
    specdock bench --families 8 --per-family 2 --trials 20 --seed 0
    specdock serve --registry ./dock --addr 127.0.0.1:8000

Errors print their machine code on stderr and exit nonzero.
"""

import json
import shlex
import subprocess
import sys
from pathlib import Path

import click

from .anchor import AnchorConfig
from .bench import BenchConfig, run_bench
from .errors import BadRequestError, LabelOutOfRangeError, SpecDockError
from .identify import identify as identify_op
from .registry import AnchorDescriptor, Registry, read_spec_file, write_spec_file
from .specgen import (
    GroundTruth,
    ModelLabeler,
    PRESETS,
    build_spec,
    load_jsonl_dataset,
)


def _fail(exc: SpecDockError) -> None:
    click.echo(f"{exc.code}: {exc.message}", err=True)
    sys.exit(1)


class _Group(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SpecDockError as exc:
            _fail(exc)


@click.group(cls=_Group)
def main():
    """Learnware dock: spec generation, registry, identification."""


@main.group()
def anchor():
    """Anchor descriptor management."""


@anchor.command("init")
@click.option("--seed", type=int, default=42, show_default=True, help="Base weight seed; adapter A seed is seed+1.")
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--rank", type=int, default=16, show_default=True)
@click.option("--classes", type=int, default=4, show_default=True)
@click.option("--max-len", type=int, default=64, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def anchor_init(seed, dim, rank, classes, max_len, out):
    """Write an anchor descriptor (recipe + training presets) to a file."""
    config = AnchorConfig(
        embed_dim=dim,
        rank=rank,
        num_classes=classes,
        max_len=max_len,
        base_seed=seed,
        lora_seed=seed + 1,
    )
    descriptor = AnchorDescriptor.for_config(config)
    Path(out).write_text(json.dumps(descriptor.to_dict(), indent=2) + "\n", "utf-8")
    click.echo(f"wrote anchor {descriptor.anchor_id[:16]}... to {out}")


def _load_descriptor(path: str) -> AnchorDescriptor:
    return AnchorDescriptor.from_dict(json.loads(Path(path).read_text("utf-8")))


def _subprocess_labeler(command: str):
    """Wrap an external model command as a batch labeler.

    The command receives one {"text": ...} JSON object per stdin line and
    must print one integer label per line.
    """
    argv = shlex.split(command)

    def label(texts: list[str]) -> list[int]:
        payload = "".join(json.dumps({"text": t}) + "\n" for t in texts)
        proc = subprocess.run(
            argv, input=payload, capture_output=True, text=True, check=False
        )
        if proc.returncode != 0:
            raise BadRequestError(
                f"labeler command failed ({proc.returncode}): {proc.stderr.strip()}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(texts):
            raise LabelOutOfRangeError(
                f"labeler wrote {len(lines)} labels for {len(texts)} texts"
            )
        try:
            return [int(ln) for ln in lines]
        except ValueError as exc:
            raise LabelOutOfRangeError(f"labeler output is not integer: {exc}") from exc

    return label


@main.command("gen-spec")
@click.option("--mode", type=click.Choice(["developer", "user"]), default=None,
              help="Header mode; defaults to developer when --labels-from-model is given, else user.")
@click.option("--anchor", "anchor_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--preset", "preset_name", type=click.Choice(sorted(PRESETS)), default="toy", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.option("--labels-from-model", "labeler_cmd", default=None,
              help="External labeler command standing for the submitted model.")
@click.option("--shuffle-seed", type=int, default=0, show_default=True)
@click.option("--stamp", is_flag=True, default=False,
              help="Stamp wall-clock creation time (default 0 for reproducible files).")
def gen_spec(mode, anchor_path, data_path, preset_name, out, labeler_cmd, shuffle_seed, stamp):
    """Fit a specification vector to a dataset and write an .lws file."""
    from dataclasses import replace
    from .anchor import init_anchor

    descriptor = _load_descriptor(anchor_path)
    model = init_anchor(descriptor.anchor_config())
    if preset_name in descriptor.presets:
        from .specgen import TrainConfig

        train_cfg = TrainConfig.from_dict(descriptor.presets[preset_name])
    else:
        train_cfg = PRESETS[preset_name]
    train_cfg = replace(train_cfg, shuffle_seed=shuffle_seed)
    dataset = load_jsonl_dataset(data_path)
    source = ModelLabeler(_subprocess_labeler(labeler_cmd)) if labeler_cmd else GroundTruth()
    spec = build_spec(
        model,
        dataset,
        source,
        train_cfg,
        mode=mode,
        created_unix_ms=None if stamp else 0,
    )
    Path(out).write_bytes(write_spec_file(spec))
    click.echo(f"wrote {spec.mode} spec ({spec.spec_dim} dims) to {out}")


@main.command()
@click.option("--registry", "registry_dir", type=click.Path(file_okay=False), required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--model-uri", required=True)
@click.option("--meta", "meta", multiple=True, help="Metadata entry KEY=VALUE; repeatable.")
@click.option("--anchor", "anchor_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Anchor descriptor, required when the registry directory is fresh.")
def submit(registry_dir, spec_path, model_uri, meta, anchor_path):
    """Submit a learnware (model URI + spec file) to a registry."""
    metadata = {}
    for entry in meta:
        key, sep, value = entry.partition("=")
        if not sep:
            raise BadRequestError(f"--meta wants KEY=VALUE, got {entry!r}")
        metadata[key] = value
    anchor_desc = _load_descriptor(anchor_path) if anchor_path else None
    reg = Registry.open(registry_dir, anchor_desc)
    spec = read_spec_file(Path(spec_path).read_bytes())
    lw_id = reg.submit(model_uri, spec, metadata)
    click.echo(f"submitted learnware id {lw_id}")


@main.command()
@click.option("--registry", "registry_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("-k", type=int, default=1, show_default=True)
def identify(registry_dir, spec_path, k):
    """Rank registered learnwares against a requirement spec."""
    reg = Registry.open(registry_dir)
    spec = read_spec_file(Path(spec_path).read_bytes())
    matches = identify_op(reg, spec, k)
    if not matches:
        click.echo("no matches (registry is empty)")
        return
    click.echo(f"{'rank':>4} {'id':>6} {'similarity':>12}  model_uri")
    for m in matches:
        lw = reg.get(m.learnware_id)
        click.echo(f"{m.rank:>4} {m.learnware_id:>6} {m.similarity:>12.6f}  {lw.model_uri}")


@main.command()
@click.option("--families", type=int, default=8, show_default=True)
@click.option("--per-family", type=int, default=2, show_default=True)
@click.option("--trials", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--report", "report_path", type=click.Path(dir_okay=False), default=None)
@click.option("--matrix-csv", "matrix_path", type=click.Path(dir_okay=False), default=None)
@click.option("--train-n", type=int, default=512, show_default=True)
@click.option("--user-n", type=int, default=256, show_default=True)
@click.option("--test-n", type=int, default=512, show_default=True)
@click.option("--model-steps", type=int, default=600, show_default=True)
@click.option("--preset", "spec_preset", type=click.Choice(sorted(PRESETS)), default="toy", show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel trial workers.")
def bench(families, per_family, trials, seed, report_path, matrix_path,
          train_n, user_n, test_n, model_steps, spec_preset, jobs):
    """Run the synthetic identification benchmark and print the table."""
    cfg = BenchConfig(
        n_families=families,
        models_per_family=per_family,
        n_trials=trials,
        trial_seed=seed,
        train_n=train_n,
        user_n=user_n,
        test_n=test_n,
        model_train_steps=model_steps,
        spec_preset=spec_preset,
    )
    report = run_bench(cfg, n_jobs=jobs)
    click.echo(report.render_table(), nl=False)
    if report_path:
        Path(report_path).write_text(report.to_json(), "utf-8")
        click.echo(f"report written to {report_path}")
    if matrix_path:
        Path(matrix_path).write_text(report.matrix_csv(), "utf-8")
        click.echo(f"matrix written to {matrix_path}")


@main.command()
@click.option("--registry", "registry_dir", type=click.Path(file_okay=False), required=True)
@click.option("--addr", default="127.0.0.1:8000", show_default=True)
@click.option("--anchor", "anchor_path", type=click.Path(exists=True, dir_okay=False), default=None)
def serve(registry_dir, addr, anchor_path):
    """Serve the registry over HTTP."""
    from .service import serve as run_service

    anchor_desc = _load_descriptor(anchor_path) if anchor_path else None
    run_service(registry_dir, addr, anchor_desc)


if __name__ == "__main__":
    main()
