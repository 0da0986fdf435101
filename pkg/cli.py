from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import click
import numpy as np
import orjson
from PIL import Image

from config.settings import PROFILES, Settings, apply_profile, load_settings
from data.datasets import (SubsetDataset, SynthDataset, dataset_from_settings, load_dataset, split_indices,
                           write_manifest)
from data.sample import IMAGE_SIZE
from data.synth import synth_styles
from services.analysis import (build_aug_feature, build_gallery, contact_sheet, export_embeddings, load_gallery,
                               rank_by_similarity, save_gallery)
from services.clip_backends import load_backend
from services.cross_validation import cross_validate
from services.errors import HandClipError
from services.evaluation import evaluate_epe
from services.prompt_gen import enumerate_prompts, sample_prompts
from services.trainer import Trainer
from utils.logging import get_logger

logger = get_logger(__name__)


@contextmanager
def reported():
    try:
        yield
    except HandClipError as e:
        raise click.ClickException(str(e)) from e


def _settings(config: Optional[str], profile: Optional[str] = None) -> Settings:
    try:
        return load_settings(config, profile)
    except ValueError as e:
        raise click.ClickException(f'invalid configuration: {e}') from e


def _echo_json(payload) -> None:
    click.echo(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY).decode('utf-8'))


def _backend(settings: Settings):
    return load_backend(settings.clip.backend, settings.clip.stub_seed, settings.clip.pretrained_id)


@click.group()
def cli():
    """Image-free domain generalization for 3D hand pose estimation."""


@cli.command('gen-prompts')
@click.option('--count', type=click.IntRange(min=0), default=10, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--all', 'all_prompts', is_flag=True, help='Emit every prompt in enumeration order.')
def gen_prompts(count: int, seed: int, all_prompts: bool):
    prompts = enumerate_prompts() if all_prompts else sample_prompts(count, seed)
    stream = click.get_binary_stream('stdout')
    stream.write(''.join(f'{p.text}\n' for p in prompts).encode('utf-8'))
    stream.flush()


@cli.command()
@click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--resume', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--target-profile', type=click.Choice(sorted(PROFILES)), default=None)
def train(config: Optional[str], resume: Optional[str], target_profile: Optional[str]):
    """Train on the configured source dataset, holding out data.holdout samples."""
    settings = _settings(config, target_profile)
    with reported():
        dataset = dataset_from_settings(settings.data)
        validation = None
        if settings.data.holdout:
            train_idx, val_idx = split_indices(len(dataset), settings.data.holdout, settings.data.seed)
            dataset, validation = SubsetDataset(dataset, train_idx), SubsetDataset(dataset, val_idx)
        trainer = Trainer(settings, dataset, validation)
        if resume:
            trainer.resume(resume)
        checkpoint = trainer.train()
    _echo_json({'epoch': checkpoint.epoch, 'step': checkpoint.step,
                'best_epe_mm': checkpoint.metadata.get('best_epe'),
                'checkpoint_dir': str(settings.train.checkpoint_dir)})


@cli.command('eval')
@click.option('--ckpt', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--dataset', 'dataset_path', type=click.Path(exists=True), default=None)
@click.option('--format', 'fmt', type=click.Choice(['synth', 'freihand', 'stb', 'rhd']), default='synth')
@click.option('--split', type=click.Choice(['training', 'evaluation']), default='evaluation', show_default=True)
@click.option('--n-samples', type=click.IntRange(min=1), default=100, show_default=True)
@click.option('--seed', type=int, default=1, show_default=True)
def evaluate(ckpt: str, dataset_path: Optional[str], fmt: str, split: str, n_samples: int, seed: int):
    """Report EPE in mm; JSON first, then a per-joint table."""
    with reported():
        dataset = load_dataset(dataset_path, fmt, split, n_samples, seed)
        report = evaluate_epe(ckpt, dataset)
    _echo_json(report.dict())
    click.echo(f'{"joint":>5}  {"EPE (mm)":>9}')
    for j, value in enumerate(report.per_joint_epe):
        click.echo(f'{j:>5}  {value:>9.2f}')
    click.echo(f'{"mean":>5}  {report.epe_mm:>9.2f}   AUC(20-50) {report.auc_20_50:.3f}   n={report.n_samples}')


@cli.command('cross-validate')
@click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--k', type=click.IntRange(min=2), default=10, show_default=True)
@click.option('--grid', required=True,
              help='JSON list of points, e.g. [{"image_ratio": 0.6}, {"image_ratio": 0.9}].')
def cross_validate_cmd(config: Optional[str], k: int, grid: str):
    settings = _settings(config)
    try:
        points = orjson.loads(grid)
    except orjson.JSONDecodeError as e:
        raise click.BadParameter(f'grid is not valid JSON: {e}') from e
    if not isinstance(points, list) or not all(isinstance(p, dict) for p in points):
        raise click.BadParameter('grid must be a JSON list of objects')
    with reported():
        report = cross_validate(settings, dataset_from_settings(settings.data), k, points)
    _echo_json(report.dict())


def _read_image(path: str) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert('RGB').resize((IMAGE_SIZE, IMAGE_SIZE), Image.Resampling.BILINEAR)
    return np.asarray(img, dtype=np.float32) / 255.0


@cli.command('rank-similar')
@click.option('--image', type=click.Path(exists=True, dir_okay=False), required=True)
@click.option('--prompt', required=True)
@click.option('--weight', type=click.FloatRange(0.0, 1.0), default=0.5, show_default=True)
@click.option('--gallery-cache', type=click.Path(dir_okay=False), default=None,
              help='Feature cache to read; built from the configured dataset and written here when missing.')
@click.option('--top-k', type=click.IntRange(min=1), default=10, show_default=True)
@click.option('--contact-sheet', 'sheet_path', type=click.Path(dir_okay=False), default=None)
@click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None)
def rank_similar(image: str, prompt: str, weight: float, gallery_cache: Optional[str], top_k: int,
                 sheet_path: Optional[str], config: Optional[str]):
    """Rank gallery images by cosine similarity to the prompt-augmented query image."""
    settings = _settings(config)
    cache = gallery_cache or settings.clip.cache_path
    exclude = Path(image).stem
    with reported():
        backend = _backend(settings)
        query = build_aug_feature(_read_image(image), prompt, weight, backend, settings.clip.normalize_inputs)
        dataset = None
        if cache is not None and Path(cache).exists():
            gallery = load_gallery(cache, exclude_id=exclude)
        else:
            dataset = dataset_from_settings(settings.data)
            gallery = build_gallery(dataset, backend)
            if cache is not None:
                save_gallery(gallery, cache)
            gallery = [r for r in gallery if r.sample_id != exclude]
        ranked = rank_by_similarity(query, gallery, top_k)
        for item in ranked:
            click.echo(f'{item.rank:>3}  {item.score:+.6f}  {item.sample_id}')
        if sheet_path:
            if dataset is None:
                dataset = dataset_from_settings(settings.data)
            by_id = {dataset.sample_id(i): i for i in range(len(dataset))}
            missing = [r.sample_id for r in ranked if r.sample_id not in by_id]
            if missing:
                raise click.ClickException(f'samples not in the configured dataset: {missing[:3]}')
            contact_sheet([dataset[by_id[r.sample_id]].image for r in ranked], sheet_path,
                          labels=[r.sample_id for r in ranked])


@cli.command('export-embeddings')
@click.option('--caches', multiple=True, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--tags', multiple=True, help='One tag per cache; defaults to each file stem.')
@click.option('--projection', type=click.Choice(['none', 'pca2d']), default='none', show_default=True)
@click.option('--out', type=click.Path(dir_okay=False), required=True)
def export_embeddings_cmd(caches, tags, projection: str, out: str):
    if tags and len(tags) != len(caches):
        raise click.BadParameter('give one --tags value per --caches value')
    tags = tags or [Path(c).stem for c in caches]
    with reported():
        records = [r for cache, tag in zip(caches, tags) for r in load_gallery(cache, tag=tag)]
        export = export_embeddings(records, projection, out)
    _echo_json({'records': len(export.records), 'projection': export.projection,
                'explained_variance_ratio': export.explained_variance_ratio})


@cli.command()
@click.option('--n', type=click.IntRange(min=1), default=500, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--manifest', type=click.Path(dir_okay=False), required=True)
@click.option('--images-dir', type=click.Path(file_okay=False), default=None)
def synth(n: int, seed: int, manifest: str, images_dir: Optional[str]):
    """Generate a synthetic dataset manifest, optionally writing the rendered images."""
    dataset = SynthDataset(n, seed, synth_styles(n, seed))
    with reported():
        write_manifest(dataset, manifest)
    if images_dir:
        out = Path(images_dir)
        out.mkdir(parents=True, exist_ok=True)
        for i in range(len(dataset)):
            sample = dataset[i]
            pixels = np.clip(sample.image * 255.0 + 0.5, 0, 255).astype(np.uint8)
            Image.fromarray(pixels).save(out / f'{sample.sample_id}.png')
    click.echo(f'{n} samples written to {manifest}')


@cli.command('show-config')
@click.option('--config', type=click.Path(exists=True, dir_okay=False), default=None)
@click.option('--target-profile', type=click.Choice(sorted(PROFILES)), default=None)
def show_config(config: Optional[str], target_profile: Optional[str]):
    settings = _settings(config)
    if target_profile:
        settings = apply_profile(settings, target_profile)
    _echo_json(orjson.loads(orjson.dumps(settings.dict(), default=str)))


if __name__ == '__main__':
    cli()
