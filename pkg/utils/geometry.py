import torch

from services.errors import NonFiniteError

N_JOINTS = 21
ROOT = 0
MIDDLE_MCP = 9

# Unified joint order: wrist, then thumb, index, middle, ring, pinky,
# each finger listed from its base joint to its tip.
JOINT_NAMES = (
    'wrist',
    'thumb_cmc', 'thumb_mcp', 'thumb_ip', 'thumb_tip',
    'index_mcp', 'index_pip', 'index_dip', 'index_tip',
    'middle_mcp', 'middle_pip', 'middle_dip', 'middle_tip',
    'ring_mcp', 'ring_pip', 'ring_dip', 'ring_tip',
    'pinky_mcp', 'pinky_pip', 'pinky_dip', 'pinky_tip',
)
BONES = tuple(
    [(0, 1), (1, 2), (2, 3), (3, 4)]
    + [(0, 5), (5, 6), (6, 7), (7, 8)]
    + [(0, 9), (9, 10), (10, 11), (11, 12)]
    + [(0, 13), (13, 14), (14, 15), (15, 16)]
    + [(0, 17), (17, 18), (18, 19), (19, 20)]
)


def root_relative(coords: torch.Tensor) -> torch.Tensor:
    return coords - coords[..., ROOT:ROOT + 1, :]


def reference_bone_length(coords: torch.Tensor) -> torch.Tensor:
    """Wrist to middle MCP distance, the unit of the canonical frame."""
    return (coords[..., MIDDLE_MCP, :] - coords[..., ROOT, :]).norm(dim=-1)


def _polar_newton(m: torch.Tensor, iterations: int) -> torch.Tensor:
    x = m
    for _ in range(iterations):
        x_inv_t = torch.linalg.inv(x).transpose(-1, -2)
        gamma = (x_inv_t.flatten(-2).norm(dim=-1) / x.flatten(-2).norm(dim=-1)).sqrt()
        gamma = gamma[..., None, None]
        x = 0.5 * (gamma * x + x_inv_t / gamma)
    return x


def _svd_rotation(m: torch.Tensor) -> torch.Tensor:
    u, _, vh = torch.linalg.svd(m)
    flip = torch.ones(u.shape[:-1], dtype=m.dtype, device=m.device)
    flip[..., -1] = torch.linalg.det(u @ vh).sign().detach()
    return u @ torch.diag_embed(flip) @ vh


def nearest_rotation(m: torch.Tensor, iterations: int = 20, rcond: float = 1e-6) -> torch.Tensor:
    """
    Project (...,3,3) matrices onto SO(3).

    The orthogonal polar factor is found with scaled Newton iterations,
    which stay differentiable when singular values coincide. Matrices that
    are singular or ill-conditioned (smallest singular value at most `rcond`
    times the largest), or whose polar factor is a reflection, take the SVD
    route with the last axis flipped as needed.
    """
    if not torch.isfinite(m).all():
        bad = int((~torch.isfinite(m)).sum())
        raise NonFiniteError(f'rotation input has {bad} non-finite entries', {'rotation_non_finite': bad})
    flat = m.reshape(-1, 3, 3)
    with torch.no_grad():
        singular = torch.linalg.svdvals(flat)
        svd_route = singular[:, -1] <= rcond * singular[:, 0]
    out = torch.empty_like(flat)
    if (~svd_route).any():
        polar = _polar_newton(flat[~svd_route], iterations)
        reflected = torch.linalg.det(polar.detach()) < 0
        svd_route[~svd_route] = reflected
        out[~svd_route] = polar[~reflected]
    if svd_route.any():
        out[svd_route] = _svd_rotation(flat[svd_route])
    return out.reshape(m.shape)


def compose_pose(canonical: torch.Tensor, rotation: torch.Tensor) -> torch.Tensor:
    """Rotate canonical (...,21,3) row vectors by R and re-center the root."""
    return root_relative(canonical @ rotation.transpose(-1, -2))


def rotation_about_axis(axis: torch.Tensor, angle: float) -> torch.Tensor:
    axis = axis / axis.norm()
    k = torch.zeros(3, 3, dtype=axis.dtype)
    k[0, 1], k[0, 2], k[1, 2] = -axis[2], axis[1], -axis[0]
    k = k - k.T
    eye = torch.eye(3, dtype=axis.dtype)
    angle = torch.as_tensor(angle, dtype=axis.dtype)
    return eye + torch.sin(angle) * k + (1 - torch.cos(angle)) * (k @ k)
