"""
Combinatorial text prompts used to describe hypothetical styles of a hand image.

A prompt is five slots joined by single spaces, in column order:
head, hand color, hand phrase, color, background.
"""
from itertools import product
from typing import Dict, Iterator, List, Sequence

import numpy as np

from schemas.prompt import Prompt, PromptConfig
from services.errors import InvalidConfigError

HEADS = (
    'a cropped image of',
    'a image of',
    'a cropped photo of',
    'a picture of',
    'one',
    'a photo of',
    'a photo of right',
)
HAND_COLORS = (
    'white',
    'dark brown',
    'peach',
    'brown',
    'pale yellow',
    'light beige',
    'black',
)
HAND_PHRASES = (
    'hand with',
    'right hand with',
)
# The two color columns are read row by row. The right column repeats
# "yellow"; its second occurrence is "light yellow" to keep texts unique.
COLORS = (
    'mountain', 'lake',
    'bright', 'dark',
    'green', 'purple',
    'white', 'yellow',
    'sky blue', 'black',
    'orange', 'red',
    'blue', 'light yellow',
    'gray', 'beige',
    'pink', 'brown',
    'dotted', 'flower',
)
BACKGROUNDS = (
    'room',
    'background',
)

SLOTS = ('head', 'hand_color', 'hand_phrase', 'color', 'background')
_OPTIONS = (HEADS, HAND_COLORS, HAND_PHRASES, COLORS, BACKGROUNDS)
N_PROMPTS = int(np.prod([len(o) for o in _OPTIONS]))


def list_options() -> Dict[str, List[str]]:
    return {slot: list(options) for slot, options in zip(SLOTS, _OPTIONS)}


def render_prompt(config: PromptConfig) -> Prompt:
    indices = config.as_tuple()
    words = []
    for slot, options, index in zip(SLOTS, _OPTIONS, indices):
        if not 0 <= index < len(options):
            raise InvalidConfigError(f'{slot} index {index} out of range [0, {len(options)})')
        words.append(options[index])
    return Prompt(text=' '.join(words), config=config)


def config_from_index(index: int) -> PromptConfig:
    """Inverse of the lexicographic enumeration order."""
    if not 0 <= index < N_PROMPTS:
        raise InvalidConfigError(f'prompt index {index} out of range [0, {N_PROMPTS})')
    unraveled = np.unravel_index(index, tuple(len(o) for o in _OPTIONS))
    return PromptConfig(**{slot: int(i) for slot, i in zip(SLOTS, unraveled)})


def config_index(config: PromptConfig) -> int:
    return int(np.ravel_multi_index(config.as_tuple(), tuple(len(o) for o in _OPTIONS)))


def iter_prompts() -> Iterator[Prompt]:
    for indices in product(*(range(len(o)) for o in _OPTIONS)):
        yield render_prompt(PromptConfig(**dict(zip(SLOTS, indices))))


def enumerate_prompts() -> List[Prompt]:
    return list(iter_prompts())


def sample_prompt(seed: int) -> Prompt:
    rng = np.random.default_rng(seed)
    return render_prompt(config_from_index(int(rng.integers(N_PROMPTS))))


def sample_prompts(count: int, seed: int) -> List[Prompt]:
    rng = np.random.default_rng(seed)
    return [render_prompt(config_from_index(int(i))) for i in rng.integers(N_PROMPTS, size=count)]


def find_config(words: Sequence[str]) -> PromptConfig:
    """Config whose slots hold the given words, in slot order."""
    try:
        return PromptConfig(**{slot: options.index(w) for slot, options, w in zip(SLOTS, _OPTIONS, words)})
    except ValueError as e:
        raise InvalidConfigError(str(e)) from e
