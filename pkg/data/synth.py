"""
Procedural hand samples for desk-scale experiments.

A 21-joint right-hand skeleton is articulated within anatomical limits,
rotated, placed in front of a pinhole camera and drawn as anti-aliased
strokes over a background styled with the prompt vocabulary.
"""
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw
from scipy.spatial.transform import Rotation

from data.sample import IMAGE_SIZE, Sample
from schemas.prompt import Prompt
from schemas.sample import SampleMeta, StyleParams
from services.prompt_gen import COLORS, HAND_COLORS, find_config, render_prompt
from utils.geometry import BONES, MIDDLE_MCP, ROOT

SUPERSAMPLE = 4

PALETTE: Dict[str, Tuple[int, int, int]] = {
    'green': (60, 150, 60),
    'purple': (120, 60, 150),
    'white': (235, 235, 235),
    'yellow': (230, 210, 60),
    'sky blue': (135, 200, 235),
    'black': (25, 25, 25),
    'orange': (240, 140, 40),
    'red': (200, 40, 40),
    'blue': (40, 70, 200),
    'light yellow': (250, 240, 160),
    'gray': (128, 128, 128),
    'beige': (225, 205, 170),
    'pink': (240, 160, 190),
    'brown': (130, 85, 50),
}
MOTIFS = ('mountain', 'lake', 'dotted', 'flower')
MODIFIERS = {'bright': 1.2, 'dark': 0.55}
HAND_PALETTE: Dict[str, Tuple[int, int, int]] = {
    'white': (240, 225, 215),
    'dark brown': (90, 60, 40),
    'peach': (245, 195, 165),
    'brown': (150, 100, 70),
    'pale yellow': (240, 225, 170),
    'light beige': (235, 215, 190),
    'black': (45, 35, 30),
}

# (x, y) of each finger base in the palm frame, mm; palm normal is +z
FINGER_BASES = {
    'thumb': (20.0, 25.0),
    'index': (25.0, 85.0),
    'middle': (3.0, 90.0),
    'ring': (-18.0, 84.0),
    'pinky': (-36.0, 74.0),
}
SEGMENTS = {
    'thumb': (40.0, 32.0, 27.0),
    'index': (40.0, 24.0, 20.0),
    'middle': (45.0, 28.0, 22.0),
    'ring': (42.0, 27.0, 21.0),
    'pinky': (33.0, 20.0, 18.0),
}
# flexion limits per joint, degrees
FLEXION = {
    'thumb': ((0.0, 40.0), (0.0, 50.0), (0.0, 70.0)),
    'index': ((-10.0, 80.0), (0.0, 100.0), (0.0, 70.0)),
    'middle': ((-10.0, 80.0), (0.0, 100.0), (0.0, 70.0)),
    'ring': ((-10.0, 80.0), (0.0, 100.0), (0.0, 70.0)),
    'pinky': ((-10.0, 80.0), (0.0, 100.0), (0.0, 70.0)),
}
ABDUCTION = (-15.0, 15.0)
# back of the hand toward the camera, fingers pointing up in the image
BASE_VIEW = np.diag([1.0, -1.0, -1.0])
# degrees; tilt about the image axes, roll about the optical axis
VIEW_TILT = 25.0
VIEW_ROLL = 30.0
FINGERS = ('thumb', 'index', 'middle', 'ring', 'pinky')


def _rotate(v: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    return (v * np.cos(angle) + np.cross(axis, v) * np.sin(angle)
            + axis * np.dot(axis, v) * (1.0 - np.cos(angle)))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    """A plausible camera view: bounded tilt and roll around BASE_VIEW."""
    tilt = rng.uniform(-VIEW_TILT, VIEW_TILT, size=2)
    roll = rng.uniform(-VIEW_ROLL, VIEW_ROLL)
    return Rotation.from_euler('xyz', [tilt[0], tilt[1], roll], degrees=True).as_matrix() @ BASE_VIEW


def articulate(rng: np.random.Generator) -> np.ndarray:
    """21x3 joints in the palm frame, mm, wrist at the origin."""
    size = rng.uniform(0.85, 1.15)
    normal = np.array([0.0, 0.0, 1.0])
    joints = [np.zeros(3)]
    for finger in FINGERS:
        base = np.array([*FINGER_BASES[finger], 0.0]) * size
        if finger == 'thumb':
            direction = np.array([0.75, 0.55, -0.35])
        else:
            direction = np.array([base[0] * 0.15, 1.0, 0.0])
        direction /= np.linalg.norm(direction)
        direction = _rotate(direction, normal, np.deg2rad(rng.uniform(*ABDUCTION)))
        bend_axis = np.cross(direction, normal)
        bend_axis /= np.linalg.norm(bend_axis)
        point = base
        chain = [point]
        angle = 0.0
        for length, limits in zip(SEGMENTS[finger], FLEXION[finger]):
            angle += np.deg2rad(rng.uniform(*limits))
            # flexion curls toward the palm side (-z)
            point = point + _rotate(direction, bend_axis, -angle) * length * size
            chain.append(point)
        joints.extend(chain)
    return np.stack(joints)


def _place(rng: np.random.Generator, hand: np.ndarray):
    """Rotate and translate the hand until it projects inside the frame."""
    rotation = _random_rotation(rng)
    rotated = hand @ rotation.T
    focal = rng.uniform(260.0, 320.0)
    depth = rng.uniform(380.0, 520.0)
    jitter = rng.uniform(-12.0, 12.0, size=2)
    while True:
        cam = rotated + np.array([0.0, 0.0, depth])
        uv = focal * cam[:, :2] / cam[:, 2:3]
        extent = uv.max(axis=0) - uv.min(axis=0)
        if extent.max() <= 200.0 and cam[:, 2].min() > 50.0:
            break
        depth *= 1.1
    center = (uv.max(axis=0) + uv.min(axis=0)) / 2.0
    cx, cy = IMAGE_SIZE / 2.0 - center + jitter
    return cam, (focal, focal, float(cx), float(cy))


def project(points_mm: np.ndarray, intrinsics: Tuple[float, float, float, float]) -> np.ndarray:
    fx, fy, cx, cy = intrinsics
    return np.stack([fx * points_mm[:, 0] / points_mm[:, 2] + cx,
                     fy * points_mm[:, 1] / points_mm[:, 2] + cy], axis=1)


def parse_background(background: str) -> Tuple[Tuple[int, int, int], Optional[str], float]:
    """Palette color, motif and brightness factor named by a background phrase."""
    text = f' {background.lower()} '
    color = None
    # longest names first so 'light yellow' wins over 'yellow'
    for name in sorted(PALETTE, key=len, reverse=True):
        if f' {name} ' in text:
            color = name
            text = text.replace(f' {name} ', ' ')
            break
    words = text.split()
    motif = next((w for w in words if w in MOTIFS), None)
    factor = float(np.prod([MODIFIERS[w] for w in words if w in MODIFIERS])) if words else 1.0
    return PALETTE[color or 'gray'], motif, factor


def _shade(base: np.ndarray, k) -> np.ndarray:
    return np.clip(base * k, 0, 255)


def render_background(style: StyleParams, rng: np.random.Generator) -> Image.Image:
    color, motif, factor = parse_background(style.background)
    base = np.asarray(color, dtype=np.float64) * factor
    size = IMAGE_SIZE * SUPERSAMPLE
    if style.pattern == 'gradient':
        ramp = np.linspace(0.7, 1.1, size)[:, None, None]
        pixels = _shade(base[None, None, :], ramp) * np.ones((1, size, 1))
    elif style.pattern == 'texture':
        noise = rng.uniform(0.0, 1.0, size=(size // 16, size // 16))
        noise = np.kron(noise, np.ones((16, 16)))
        pixels = _shade(base[None, None, :], (0.8 + 0.3 * noise)[:, :, None])
    else:
        pixels = np.broadcast_to(base, (size, size, 3)).copy()
    image = Image.fromarray(np.clip(pixels, 0, 255).astype(np.uint8), 'RGB')
    draw = ImageDraw.Draw(image)
    dark = tuple(int(c) for c in _shade(base, 0.6))
    light = tuple(int(c) for c in _shade(base, 1.15))
    mid = tuple(int(c) for c in _shade(base, 0.8))
    if motif == 'mountain':
        for _ in range(3):
            peak_x = rng.uniform(0, size)
            peak_y = rng.uniform(0.25, 0.6) * size
            width = rng.uniform(0.3, 0.6) * size
            draw.polygon([(peak_x - width, size), (peak_x, peak_y), (peak_x + width, size)], fill=dark)
    elif motif == 'lake':
        top = rng.uniform(0.55, 0.75) * size
        draw.ellipse([-0.2 * size, top, 1.2 * size, 1.4 * size], fill=mid)
    elif motif == 'dotted':
        step = size // 8
        r = step // 6
        for y in range(step // 2, size, step):
            for x in range(step // 2, size, step):
                draw.ellipse([x - r, y - r, x + r, y + r], fill=dark)
    elif motif == 'flower':
        for _ in range(6):
            x, y = rng.uniform(0, size, size=2)
            r = rng.uniform(0.03, 0.06) * size
            for a in np.linspace(0, 2 * np.pi, 5, endpoint=False):
                px, py = x + r * np.cos(a), y + r * np.sin(a)
                draw.ellipse([px - r * 0.7, py - r * 0.7, px + r * 0.7, py + r * 0.7], fill=light)
            draw.ellipse([x - r * 0.5, y - r * 0.5, x + r * 0.5, y + r * 0.5], fill=dark)
    return image


def render_hand(image: Image.Image, cam: np.ndarray, uv: np.ndarray, focal: float, hand_color: str) -> None:
    color = np.asarray(HAND_PALETTE.get(hand_color, HAND_PALETTE['peach']), dtype=np.float64)
    joint_color = tuple(int(c) for c in np.clip(color * 0.8, 0, 255))
    bone_color = tuple(int(c) for c in color)
    draw = ImageDraw.Draw(image)
    scaled = uv * SUPERSAMPLE
    # far bones first so nearer strokes overlap them
    order = sorted(BONES, key=lambda b: -(cam[b[0], 2] + cam[b[1], 2]))
    for a, b in order:
        depth = (cam[a, 2] + cam[b, 2]) / 2.0
        width = max(2, int(round(focal * 16.0 / depth * SUPERSAMPLE)))
        draw.line([tuple(scaled[a]), tuple(scaled[b])], fill=bone_color, width=width)
    for j in np.argsort(-cam[:, 2]):
        r = max(2.0, focal * 6.0 / cam[j, 2] * SUPERSAMPLE)
        x, y = scaled[j]
        draw.ellipse([x - r, y - r, x + r, y + r], fill=joint_color)


def _annotate(seed: int, cam: np.ndarray, uv: np.ndarray,
              intrinsics: Tuple[float, float, float, float]) -> Tuple[np.ndarray, np.ndarray, SampleMeta]:
    relative = cam - cam[ROOT]
    scale = float(np.linalg.norm(relative[MIDDLE_MCP]))
    meta = SampleMeta(
        sample_id=f'synth-{seed}',
        source='synth',
        scale_mm=scale,
        intrinsics=intrinsics,
        root_mm=tuple(float(v) for v in cam[ROOT]),
    )
    return (relative / scale).astype(np.float32), uv.astype(np.float32), meta


def synth_annotations(seed: int) -> Tuple[np.ndarray, np.ndarray, SampleMeta]:
    """joints3d, joints2d and meta of `synth_sample(seed)`, without drawing the image."""
    rng = np.random.default_rng(seed)
    cam, intrinsics = _place(rng, articulate(rng))
    return _annotate(seed, cam, project(cam, intrinsics), intrinsics)


def synth_sample(seed: int, style: Optional[StyleParams] = None) -> Sample:
    rng = np.random.default_rng(seed)
    style = style or random_style(seed)
    cam, intrinsics = _place(rng, articulate(rng))
    uv = project(cam, intrinsics)
    joints3d, joints2d, meta = _annotate(seed, cam, uv, intrinsics)

    canvas = render_background(style, rng)
    render_hand(canvas, cam, uv, intrinsics[0], style.hand_color)
    image = canvas.resize((IMAGE_SIZE, IMAGE_SIZE), Image.Resampling.LANCZOS)
    return Sample(image=np.asarray(image, dtype=np.float32) / 255.0, joints3d=joints3d, joints2d=joints2d, meta=meta)


def random_style(seed: int) -> StyleParams:
    rng = np.random.default_rng([seed, 7])
    colors = list(PALETTE)
    background = colors[int(rng.integers(len(colors)))]
    extra = rng.integers(3)
    if extra == 1:
        background = f'{MOTIFS[int(rng.integers(len(MOTIFS)))]} {background}'
    elif extra == 2:
        background = f'{list(MODIFIERS)[int(rng.integers(len(MODIFIERS)))]} {background}'
    return StyleParams(
        background=background,
        hand_color=HAND_COLORS[int(rng.integers(len(HAND_COLORS)))],
        pattern=('solid', 'gradient', 'texture')[int(rng.integers(3))],
    )


def describe_style(style: StyleParams) -> Prompt:
    """The prompt whose color and hand-color words match a synthetic style."""
    words = style.background.split()
    color_word = next((c for c in sorted(PALETTE, key=len, reverse=True) if c in style.background), None)
    motif = next((w for w in words if w in MOTIFS), None)
    slot_color = color_word if color_word in COLORS else (motif or 'gray')
    hand_color = style.hand_color if style.hand_color in HAND_COLORS else 'peach'
    return render_prompt(find_config(['a photo of', hand_color, 'hand with', slot_color, 'background']))


def synth_styles(n: int, seed: int) -> List[StyleParams]:
    return [random_style(int(s)) for s in np.random.SeedSequence(seed).generate_state(n)]
